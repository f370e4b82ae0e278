//! `freewalk` — random walks on free products of two rooted graphs: exact
//! capacities of finite word sets and simulation-based estimation of the
//! asymptotic capacity of the range.
//!
//! Exit codes: 0 success, 2 configuration/usage failure, 3 model-assumption
//! failure (the walk is not transient, or the experiment is degenerate),
//! 4 numeric failure.

mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::{AuditArgs, CltArgs, CmdResult, EstimateArgs, SimArgs, SweepArgs};

#[derive(Parser)]
#[command(name = "freewalk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON; see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config. Mandatory for stochastic commands.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to the config, then $FREEWALK_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for the report bundle (JSON summary + CSV tables).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Return weights, ξ values, the Green function at the root and a
    /// radius-of-convergence bracket.
    Genfun {
        #[command(flatten)]
        common: Common,
        /// Evaluation point (default 1.0).
        #[arg(long)]
        z: Option<f64>,
    },
    /// Exact capacity of a finite word set with per-vertex escape
    /// probabilities.
    Capacity {
        #[command(flatten)]
        common: Common,
        /// The set: compact words ("1:a 1:a/2:b") or JSON letter lists.
        #[arg(long)]
        set: Option<String>,
    },
    /// Simulate trajectories; emits one JSON line per replica.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Regeneration letter (factor-1 state name).
        #[arg(long)]
        g: Option<String>,
        /// Confirmation guard in steps.
        #[arg(long)]
        guard: Option<usize>,
        /// Dump the stream-0 trajectory as CSV (capped at 100000 steps).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// The full estimator battery: direct and regenerative capacity rates,
    /// rate of escape, asymptotic range, CLT variance and the cross-checks.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long)]
        guard: Option<usize>,
        /// Direct-route checkpoints, e.g. "2500,5000,10000".
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Standardized-capacity experiment with a Kolmogorov–Smirnov report.
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        walks: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cal_horizon: Option<usize>,
        #[arg(long)]
        cal_replicas: Option<usize>,
        #[arg(long)]
        guard: Option<usize>,
    },
    /// Estimate the capacity rate over a parameter grid with smoothness
    /// diagnostics.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept parameter (currently "alpha").
        #[arg(long)]
        param: Option<String>,
        /// "lo:hi:count" or a comma list.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        guard: Option<usize>,
    },
    /// Verify the exact capacity decomposition along exit times on simulated
    /// trajectories.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        max_k: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        guard: Option<usize>,
    },
    /// Print a built-in model configuration.
    Fixtures {
        /// One of: exampleA, null, ray.
        #[arg(long)]
        name: String,
    },
}

fn dispatch(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Command::Genfun { common, z } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) = run::run_genfun(&ctx, z)?;
            print_bundle(&common, "genfun", &summary, &tables)
        }
        Command::Capacity { common, set } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) = run::run_capacity(&ctx, set.as_deref())?;
            print_bundle(&common, "capacity", &summary, &tables)
        }
        Command::Simulate { common, steps, replicas, g, guard, dump } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (lines, _tables) =
                run::run_simulate(&ctx, &SimArgs { steps, replicas, g, guard, dump })?;
            if let Some(dir) = &common.out_dir {
                std::fs::create_dir_all(dir)
                    .and_then(|_| std::fs::write(dir.join("simulate.jsonl"), &lines))
                    .map_err(|e| run::Failure::Validation(format!("writing output: {e}")))?;
            }
            print!("{lines}");
            Ok(())
        }
        Command::Estimate { common, horizon, replicas, g, guard, schedule } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) =
                run::run_estimate(&ctx, &EstimateArgs { horizon, replicas, g, guard, schedule })?;
            print_bundle(&common, "estimate", &summary, &tables)
        }
        Command::Clt { common, walks, steps, cal_horizon, cal_replicas, guard } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) =
                run::run_clt(&ctx, &CltArgs { walks, steps, cal_horizon, cal_replicas, guard })?;
            print_bundle(&common, "clt", &summary, &tables)
        }
        Command::Sweep { common, param, grid, horizon, replicas, guard } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) =
                run::run_sweep(&ctx, &SweepArgs { param, grid, horizon, replicas, guard })?;
            print_bundle(&common, "sweep", &summary, &tables)
        }
        Command::Audit { common, trajectories, max_k, horizon, guard } => {
            let ctx = run::load_context(&common.config, common.seed, common.workers)?;
            let (summary, tables) =
                run::run_audit(&ctx, &AuditArgs { trajectories, max_k, horizon, guard })?;
            print_bundle(&common, "audit", &summary, &tables)
        }
        Command::Fixtures { name } => {
            print!("{}", run::run_fixtures(&name)?);
            Ok(())
        }
    }
}

fn print_bundle(
    common: &Common,
    command: &str,
    summary: &serde_json::Value,
    tables: &[output::CsvTable],
) -> CmdResult<()> {
    let text = output::emit(common.out_dir.as_deref(), &common.format, command, summary, tables)
        .map_err(|e| run::Failure::Numeric(format!("emit: {e}")))?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("freewalk: error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}
