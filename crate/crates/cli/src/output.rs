//! Report emission: JSON summaries and versioned CSV tables.
//!
//! Every CSV row starts with a `schema` tag so downstream tooling can detect
//! format changes. Floats are written with Rust's shortest round-trip
//! formatting, which is a pure function of the bits, so identical runs emit
//! identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

pub struct CsvTable {
    /// File stem (e.g. "estimate"); also the stdout table for --format csv.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> CsvTable {
        CsvTable {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Write the summary and tables into the output directory, if any, and
/// return what should go to stdout.
pub fn emit(
    out_dir: Option<&Path>,
    format: &str,
    command: &str,
    summary: &serde_json::Value,
    tables: &[CsvTable],
) -> anyhow::Result<String> {
    let pretty = serde_json::to_string_pretty(summary)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut path = PathBuf::from(dir);
        path.push(format!("{command}_summary.json"));
        fs::write(&path, format!("{pretty}\n"))?;
        for t in tables {
            let mut path = PathBuf::from(dir);
            path.push(format!("{}.csv", t.name));
            fs::write(&path, t.render()?)?;
        }
    }
    match format {
        "csv" => match tables.first() {
            Some(t) => t.render(),
            None => Ok(pretty + "\n"),
        },
        _ => Ok(pretty + "\n"),
    }
}
