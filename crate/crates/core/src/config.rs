//! Model and run configuration schemas, plus the textual word forms.
//!
//! A model document looks like
//!
//! ```json
//! {
//!   "factor1": {"kind": "explicit", "root": "o1", "edges": [["o1","a",1.0],["a","o1",1.0]]},
//!   "factor2": {"kind": "builtin", "name": "ray"},
//!   "alpha": 0.5
//! }
//! ```
//!
//! Words serialize as arrays of `[factor, state]` pairs (e.g.
//! `[[1,"a"],[2,"b"]]`); the compact string form used in CSV is `"1:a/2:b"`
//! with `"o"` for the empty word. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::{FactorError, FactorGraph};
use crate::model::FreeProduct;
use crate::word::{Factor, Letter, Word, WordError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("factor spec: {0}")]
    Factor(#[from] FactorError),
    #[error("bad word: {0}")]
    Word(#[from] WordError),
    #[error("bad word syntax {0:?}: {1}")]
    WordSyntax(String, String),
    #[error("unknown state {state:?} in factor {factor}")]
    UnknownState { factor: u8, state: String },
    #[error("{0}")]
    Invalid(String),
}

/// Specification of one factor.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorSpec {
    Explicit { root: String, edges: Vec<(String, String, f64)> },
    Builtin { name: String },
}

impl FactorSpec {
    pub fn build(&self) -> Result<FactorGraph, ConfigError> {
        Ok(match self {
            FactorSpec::Explicit { root, edges } => FactorGraph::explicit(root, edges)?,
            FactorSpec::Builtin { name } => FactorGraph::by_builtin_name(name)?,
        })
    }
}

/// The model document: two factor specs and the mixing weight.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub factor1: FactorSpec,
    pub factor2: FactorSpec,
    pub alpha: f64,
}

impl ModelSpec {
    pub fn build(&self) -> Result<FreeProduct, ConfigError> {
        Ok(FreeProduct::new(self.factor1.build()?, self.factor2.build()?, self.alpha))
    }
}

fn default_workers() -> usize {
    1
}

/// Full run configuration: the model plus optional per-command blocks.
/// Command-line flags override file values; a seed is mandatory for anything
/// stochastic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genfun: Option<GenFunBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditBlock>,
}

impl RunConfig {
    pub fn bare(model: ModelSpec) -> RunConfig {
        RunConfig {
            model,
            seed: None,
            workers: 1,
            genfun: None,
            capacity: None,
            simulate: None,
            estimate: None,
            clt: None,
            sweep: None,
            audit: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GenFunBlock {
    #[serde(default = "GenFunBlock::default_z")]
    pub z: f64,
}

impl GenFunBlock {
    fn default_z() -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CapacityBlock {
    /// Words as letter lists, e.g. `[[[1,"a"]],[[1,"a"],[2,"b"]]]`.
    pub set: Vec<Vec<(u8, String)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
}

/// Cone constraint in config form.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    StayIn(Vec<(u8, String)>),
    AvoidConeAfterStart(Vec<(u8, String)>),
    AvoidInitialFactor(u8),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub steps: usize,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default = "default_guard")]
    pub guard: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_trajectory: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimateBlock {
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_schedule: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default = "default_guard")]
    pub guard: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CltBlock {
    pub walks: usize,
    pub steps: usize,
    #[serde(default = "default_cal_horizon")]
    pub calibration_horizon: usize,
    #[serde(default = "default_replicas")]
    pub calibration_replicas: usize,
    #[serde(default = "default_guard")]
    pub guard: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Currently only "alpha" is sweepable.
    pub parameter: String,
    pub grid: Vec<f64>,
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_guard")]
    pub guard: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AuditBlock {
    pub trajectories: usize,
    pub max_k: usize,
    pub horizon: usize,
    #[serde(default = "default_guard")]
    pub guard: usize,
}

fn one() -> usize {
    1
}
fn default_replicas() -> usize {
    8
}
fn default_guard() -> usize {
    1000
}
fn default_cal_horizon() -> usize {
    20_000
}

/// Render a word in the compact `1:a/2:b` form ("o" for the root).
pub fn word_compact(fp: &FreeProduct, w: &Word) -> String {
    if w.is_root() {
        return "o".to_string();
    }
    w.letters()
        .iter()
        .map(|l| format!("{}:{}", l.factor.number(), fp.factor(l.factor).state_name(l.state)))
        .collect::<Vec<_>>()
        .join("/")
}

/// Parse the compact word form.
pub fn parse_word_compact(fp: &FreeProduct, text: &str) -> Result<Word, ConfigError> {
    let text = text.trim();
    if text.is_empty() || text == "o" {
        return Ok(Word::root());
    }
    let mut letters = Vec::new();
    for piece in text.split('/') {
        let (f, s) = piece.split_once(':').ok_or_else(|| {
            ConfigError::WordSyntax(text.to_string(), format!("letter {piece:?} is not factor:state"))
        })?;
        let fnum: u8 = f.parse().map_err(|_| {
            ConfigError::WordSyntax(text.to_string(), format!("factor {f:?} is not a number"))
        })?;
        letters.push(parse_letter(fp, fnum, s)?);
    }
    Ok(Word::from_letters(letters)?)
}

pub fn parse_letter(fp: &FreeProduct, factor: u8, state: &str) -> Result<Letter, ConfigError> {
    let f = Factor::from_number(factor).ok_or_else(|| {
        ConfigError::WordSyntax(format!("{factor}:{state}"), "factor must be 1 or 2".to_string())
    })?;
    let id = fp
        .factor(f)
        .state_by_name(state)
        .ok_or_else(|| ConfigError::UnknownState { factor, state: state.to_string() })?;
    Ok(Letter::new(f, id)?)
}

/// Parse a word given as `[factor, state]` pairs.
pub fn word_from_pairs(fp: &FreeProduct, pairs: &[(u8, String)]) -> Result<Word, ConfigError> {
    let mut letters = Vec::new();
    for (f, s) in pairs {
        letters.push(parse_letter(fp, *f, s)?);
    }
    Ok(Word::from_letters(letters)?)
}

/// Render a word as `[factor, state]` pairs.
pub fn word_to_pairs(fp: &FreeProduct, w: &Word) -> Vec<(u8, String)> {
    w.letters()
        .iter()
        .map(|l| (l.factor.number(), fp.factor(l.factor).state_name(l.state)))
        .collect()
}
