//! Command runners: merge the config file with command-line overrides,
//! execute, and assemble the report bundle (JSON summary + CSV tables, plus
//! the resolved config echoed for provenance).

use std::collections::BTreeMap;
use std::path::PathBuf;

use freewalk_core::capacity::{CapacityEngine, ConeConstraint};
use freewalk_core::config::{
    self, AuditBlock, CapacityBlock, CltBlock, ConstraintSpec, EstimateBlock, GenFunBlock,
    ModelSpec, RunConfig, SimulateBlock, SweepBlock,
};
use freewalk_core::estimators::{
    self, cbar_relation_check, chat_direct, chat_regen, clt_experiment, decomposition_audit,
    ell_and_range_hat, prop57_check, sigma2_hat, EstimatorError,
};
use freewalk_core::genfun::{self, FixedPointConfig};
use freewalk_core::rng::derive_master;
use freewalk_core::sim::{self, WalkSeed};
use freewalk_core::word::Factor;
use freewalk_core::{CapacityError, FreeProduct, GenFunError, Letter, Word};
use serde_json::{json, Value};

use crate::output::{fmt_f64, CsvTable};

/// A command failure carrying its exit class.
#[derive(Debug)]
pub enum Failure {
    /// Config, schema or usage problems → exit 2.
    Validation(String),
    /// Model-assumption failures (transience gate, degenerate cases) → 3.
    Assumption(String),
    /// Numeric failures (divergence, residuals, exhausted budgets) → 4.
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Assumption(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Assumption(m) | Failure::Numeric(m) => m,
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

fn from_genfun(e: GenFunError) -> Failure {
    match e {
        GenFunError::Precondition(m) => Failure::Validation(format!("genfun: {m}")),
        other => Failure::Numeric(format!("genfun: {other}")),
    }
}

fn from_capacity(e: CapacityError) -> Failure {
    match e {
        CapacityError::NotTransient(m) => Failure::Assumption(format!("capacity: {m}")),
        CapacityError::Precondition(m) => Failure::Validation(format!("capacity: {m}")),
        other => Failure::Numeric(format!("capacity: {other}")),
    }
}

fn from_estimator(e: EstimatorError) -> Failure {
    match e {
        EstimatorError::Degenerate(m) => Failure::Assumption(format!("estimators: {m}")),
        EstimatorError::Precondition(m) => Failure::Validation(format!("estimators: {m}")),
        EstimatorError::Capacity(e) => from_capacity(e),
        EstimatorError::GenFun(e) => from_genfun(e),
        EstimatorError::Sim(e) => Failure::Validation(format!("sim: {e}")),
        other @ EstimatorError::NoBlocks { .. } => Failure::Numeric(format!("estimators: {other}")),
    }
}

/// Shared command context after config resolution.
pub struct Ctx {
    pub config: RunConfig,
    pub fp: FreeProduct,
    pub workers: usize,
    pub cfg: FixedPointConfig,
}

pub fn load_context(
    path: &PathBuf,
    seed_flag: Option<u64>,
    workers_flag: Option<usize>,
) -> CmdResult<Ctx> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?;
    if let Some(s) = seed_flag {
        config.seed = Some(s);
    }
    if let Some(w) = workers_flag {
        config.workers = w;
    } else if config.workers == 1 {
        if let Ok(env_w) = std::env::var("FREEWALK_WORKERS") {
            config.workers = env_w
                .parse()
                .map_err(|_| Failure::Validation("FREEWALK_WORKERS must be a number".into()))?;
        }
    }
    let fp = config
        .model
        .build()
        .map_err(|e| Failure::Validation(format!("model: {e}")))?;
    let report = fp.validate();
    if !report.is_empty() {
        let msgs: Vec<&str> = report.iter().map(|v| v.message.as_str()).collect();
        return Err(Failure::Validation(format!(
            "model is not admissible: every outgoing row must sum to 1, no self-loops, all \
             states reachable, alpha in (0,1), not both factors two-state; found: {}",
            msgs.join("; ")
        )));
    }
    let workers = config.workers;
    Ok(Ctx { config, fp, workers, cfg: FixedPointConfig::default() })
}

impl Ctx {
    pub fn need_seed(&self) -> CmdResult<u64> {
        self.config.seed.ok_or_else(|| {
            Failure::Validation(
                "a master seed is mandatory for stochastic commands (--seed or \"seed\" in \
                 the config)"
                    .to_string(),
            )
        })
    }

    fn echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn g_letter(&self, name: Option<&str>) -> CmdResult<Letter> {
        match name {
            Some(n) => {
                let state = self
                    .fp
                    .factor(Factor::One)
                    .state_by_name(n)
                    .ok_or_else(|| {
                        Failure::Validation(format!("unknown factor-1 state {n:?} for g"))
                    })?;
                Letter::new(Factor::One, state)
                    .map_err(|e| Failure::Validation(format!("g: {e}")))
            }
            None => self.fp.g_default().ok_or_else(|| {
                Failure::Validation("factor 1 has no letter adjacent to its root".to_string())
            }),
        }
    }
}

fn estimate_row(table: &mut CsvTable, schema: &str, n: usize, r: &estimators::EstimateReport) {
    table.push(vec![
        schema.to_string(),
        r.name.clone(),
        n.to_string(),
        fmt_f64(r.point),
        fmt_f64(r.stderr),
        fmt_f64(r.ci95.0),
        fmt_f64(r.ci95.1),
        r.n_samples.to_string(),
    ]);
}

// ---------------------------------------------------------------- genfun --

pub fn run_genfun(ctx: &Ctx, z_flag: Option<f64>) -> CmdResult<(Value, Vec<CsvTable>)> {
    let z = z_flag
        .or(ctx.config.genfun.as_ref().map(|b| b.z))
        .unwrap_or(1.0);
    let bracket = genfun::radius_estimate(&ctx.fp, &ctx.cfg);
    let w = genfun::return_weights(&ctx.fp, z, &ctx.cfg).map_err(from_genfun)?;
    let green = genfun::green_at_root(&ctx.fp, z, &ctx.cfg).map_err(from_genfun)?;
    let u_map = |f: Factor| -> BTreeMap<String, f64> {
        w.u[f.idx()]
            .iter()
            .map(|(&s, &v)| (ctx.fp.factor(f).state_name(s), v))
            .collect()
    };
    let summary = json!({
        "schema": "freewalk.genfun.v1",
        "z": z,
        "u1": u_map(Factor::One),
        "u2": u_map(Factor::Two),
        "xi1": w.xi[0],
        "xi2": w.xi[1],
        "green_oo": green,
        "radius_bracket": [bracket.lo, if bracket.hi.is_finite() { Value::from(bracket.hi) } else { Value::Null }],
        "transient": bracket.is_transient(),
        "config_echo": ctx.echo(),
    });
    Ok((summary, Vec::new()))
}

// -------------------------------------------------------------- capacity --

fn parse_set_arg(ctx: &Ctx, text: &str) -> CmdResult<Vec<Word>> {
    let bad = |e: String| Failure::Validation(format!("--set: {e}"));
    if text.trim_start().starts_with('[') {
        let pairs: Vec<Vec<(u8, String)>> =
            serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        pairs
            .iter()
            .map(|p| config::word_from_pairs(&ctx.fp, p).map_err(|e| bad(e.to_string())))
            .collect()
    } else {
        text.split_whitespace()
            .map(|t| config::parse_word_compact(&ctx.fp, t).map_err(|e| bad(e.to_string())))
            .collect()
    }
}

fn build_constraint(ctx: &Ctx, spec: &ConstraintSpec) -> CmdResult<ConeConstraint> {
    let word = |pairs: &[(u8, String)]| {
        config::word_from_pairs(&ctx.fp, pairs)
            .map_err(|e| Failure::Validation(format!("constraint: {e}")))
    };
    Ok(match spec {
        ConstraintSpec::StayIn(p) => ConeConstraint::StayIn(word(p)?),
        ConstraintSpec::AvoidConeAfterStart(p) => ConeConstraint::AvoidConeAfterStart(word(p)?),
        ConstraintSpec::AvoidInitialFactor(f) => ConeConstraint::AvoidInitialFactor(
            Factor::from_number(*f).ok_or_else(|| {
                Failure::Validation("constraint factor must be 1 or 2".to_string())
            })?,
        ),
    })
}

pub fn run_capacity(ctx: &Ctx, set_flag: Option<&str>) -> CmdResult<(Value, Vec<CsvTable>)> {
    let block: Option<&CapacityBlock> = ctx.config.capacity.as_ref();
    let set: Vec<Word> = match (set_flag, block) {
        (Some(text), _) => parse_set_arg(ctx, text)?,
        (None, Some(b)) => b
            .set
            .iter()
            .map(|p| {
                config::word_from_pairs(&ctx.fp, p)
                    .map_err(|e| Failure::Validation(format!("capacity set: {e}")))
            })
            .collect::<CmdResult<Vec<Word>>>()?,
        (None, None) => {
            return Err(Failure::Validation(
                "capacity needs a word set (--set or a \"capacity\" config block)".to_string(),
            ))
        }
    };
    let constraint = match block.and_then(|b| b.constraint.as_ref()) {
        Some(spec) => build_constraint(ctx, spec)?,
        None => ConeConstraint::Unconstrained,
    };
    let engine = CapacityEngine::new(&ctx.fp, &ctx.cfg).map_err(from_capacity)?;
    let mut sorted = set.clone();
    sorted.sort();
    sorted.dedup();
    let (capacity, per_vertex, hull_size, residual) = if sorted.is_empty() {
        (0.0, BTreeMap::new(), 0usize, 0.0)
    } else {
        let mut extra = Vec::new();
        if let Some(w) = constraint.anchor() {
            extra.push(w.clone());
        }
        let hull = engine.hull_for(&sorted, &extra).map_err(from_capacity)?;
        let sol = engine.solve(&hull, &constraint).map_err(from_capacity)?;
        let report = engine.capacity_from_solution(&hull, &sol).map_err(from_capacity)?;
        let per: BTreeMap<String, f64> = report
            .per_vertex
            .iter()
            .map(|&(id, esc)| (config::word_compact(&ctx.fp, &hull.word(id)), esc))
            .collect();
        (report.capacity, per, report.hull_size, report.residual)
    };
    let mut table = CsvTable::new("capacity", &["schema", "word", "escape_probability"]);
    for (w, esc) in &per_vertex {
        table.push(vec!["freewalk.capacity.v1".into(), w.clone(), fmt_f64(*esc)]);
    }
    let summary = json!({
        "schema": "freewalk.capacity.v1",
        "capacity": capacity,
        "per_vertex": per_vertex,
        "hull_size": hull_size,
        "residual": residual,
        "config_echo": ctx.echo(),
    });
    Ok((summary, vec![table]))
}

// -------------------------------------------------------------- simulate --

pub struct SimArgs {
    pub steps: Option<usize>,
    pub replicas: Option<usize>,
    pub g: Option<String>,
    pub guard: Option<usize>,
    pub dump: Option<PathBuf>,
}

pub fn run_simulate(ctx: &Ctx, args: &SimArgs) -> CmdResult<(String, Vec<CsvTable>)> {
    let seed = ctx.need_seed()?;
    let block = ctx.config.simulate.clone().unwrap_or(SimulateBlock {
        steps: 0,
        replicas: 1,
        g: None,
        guard: 1000,
        dump_trajectory: None,
    });
    let steps = args.steps.unwrap_or(block.steps);
    if steps == 0 {
        return Err(Failure::Validation(
            "simulate needs a positive step count (--steps or the \"simulate\" block)".into(),
        ));
    }
    let replicas = args.replicas.unwrap_or(block.replicas).max(1);
    let guard = args.guard.unwrap_or(block.guard);
    let g = ctx.g_letter(args.g.as_deref().or(block.g.as_deref()))?;
    let dump = args
        .dump
        .clone()
        .or_else(|| block.dump_trajectory.as_ref().map(PathBuf::from));

    let lines: Vec<Result<String, Failure>> =
        estimators::run_replicas(ctx.workers, replicas, |stream| {
            let tr = sim::run_walk(&ctx.fp, steps, WalkSeed { master: seed, stream });
            let exits = sim::exit_times(&tr, guard);
            let scan =
                sim::regeneration_blocks(&tr, &exits, g).map_err(|e| Failure::Validation(e.to_string()))?;
            let blocks: Vec<Value> = scan
                .blocks
                .iter()
                .map(|b| {
                    json!({
                        "index": b.index,
                        "duration": b.duration,
                        "start_time": b.start_time,
                        "increment": config::word_compact(&ctx.fp, &b.increment),
                        "range_size": b.range_norm.len(),
                    })
                })
                .collect();
            let line = json!({
                "schema": "freewalk.simulate.v1",
                "seed": {"master": seed, "stream": stream},
                "n": steps,
                "final_norm": tr.norm_at(steps),
                "range": tr.range_curve()[steps],
                "exits_confirmed": exits.confirmed().count(),
                "blocks": blocks,
            });
            Ok(line.to_string())
        });
    let mut out = String::new();
    for l in lines {
        out.push_str(&l?);
        out.push('\n');
    }
    if let Some(path) = dump {
        const DUMP_CAP: usize = 100_000;
        let tr = sim::run_walk(&ctx.fp, steps.min(DUMP_CAP), WalkSeed { master: seed, stream: 0 });
        let mut t = CsvTable::new("trajectory", &["schema", "time", "word"]);
        for m in 0..=tr.len() {
            t.push(vec![
                "freewalk.trajectory.v1".into(),
                m.to_string(),
                config::word_compact(&ctx.fp, &tr.word_at(m)),
            ]);
        }
        std::fs::write(&path, t.render().map_err(|e| Failure::Numeric(e.to_string()))?)
            .map_err(|e| Failure::Validation(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok((out, Vec::new()))
}

// -------------------------------------------------------------- estimate --

pub struct EstimateArgs {
    pub horizon: Option<usize>,
    pub replicas: Option<usize>,
    pub g: Option<String>,
    pub guard: Option<usize>,
    pub schedule: Option<String>,
}

pub fn run_estimate(ctx: &Ctx, args: &EstimateArgs) -> CmdResult<(Value, Vec<CsvTable>)> {
    let seed = ctx.need_seed()?;
    let block = ctx.config.estimate.clone();
    let horizon = args
        .horizon
        .or(block.as_ref().map(|b| b.horizon))
        .ok_or_else(|| Failure::Validation("estimate needs --horizon".into()))?;
    let replicas = args.replicas.or(block.as_ref().map(|b| b.replicas)).unwrap_or(8);
    let guard = args.guard.or(block.as_ref().map(|b| b.guard)).unwrap_or(1000);
    let g = ctx.g_letter(
        args.g
            .as_deref()
            .or(block.as_ref().and_then(|b| b.g.as_deref())),
    )?;
    let schedule: Vec<usize> = match (&args.schedule, block.as_ref().and_then(|b| b.n_schedule.clone())) {
        (Some(text), _) => text
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| Failure::Validation("--schedule must be comma-separated integers".into()))?,
        (None, Some(s)) => s,
        (None, None) => vec![horizon / 4, horizon / 2, horizon]
            .into_iter()
            .filter(|&n| n > 0)
            .collect(),
    };

    // transience gate first: the whole battery presumes it
    let bracket = genfun::transience_check(&ctx.fp, &ctx.cfg)
        .map_err(|e| Failure::Assumption(format!("estimate: {e}")))?;

    let direct =
        chat_direct(&ctx.fp, &schedule, replicas, seed, ctx.workers, &ctx.cfg).map_err(from_estimator)?;
    let regen = chat_regen(
        &ctx.fp,
        horizon,
        replicas,
        derive_master(seed, 1),
        g,
        guard,
        ctx.workers,
        &ctx.cfg,
    )
    .map_err(from_estimator)?;
    let (ell, range) =
        ell_and_range_hat(&ctx.fp, horizon, replicas, derive_master(seed, 2), ctx.workers)
            .map_err(from_estimator)?;
    let sigma2 =
        sigma2_hat(&regen.blocks, direct.report.point, derive_master(seed, 1)).map_err(from_estimator)?;
    let cbar = cbar_relation_check(
        &ctx.fp,
        horizon,
        replicas,
        derive_master(seed, 3),
        g,
        guard,
        ctx.workers,
        &ctx.cfg,
    )
    .map_err(from_estimator)?;
    let prop57 = prop57_check(&regen.blocks, &direct.report);

    let schema = "freewalk.estimate.v1";
    let mut table = CsvTable::new(
        "estimate",
        &["schema", "quantity", "n", "point", "stderr", "ci_lo", "ci_hi", "n_samples"],
    );
    for cp in &direct.checkpoints {
        table.push(vec![
            schema.into(),
            "chat_direct".into(),
            cp.n.to_string(),
            fmt_f64(cp.mean),
            fmt_f64(cp.stderr),
            fmt_f64(cp.mean - 1.96 * cp.stderr),
            fmt_f64(cp.mean + 1.96 * cp.stderr),
            cp.per_replica.len().to_string(),
        ]);
    }
    for r in [&regen.report, &ell, &range, &sigma2.report, &cbar.cbar] {
        estimate_row(&mut table, schema, horizon, r);
    }

    let summary = json!({
        "schema": schema,
        "radius_bracket": [bracket.lo, if bracket.hi.is_finite() { Value::from(bracket.hi) } else { Value::Null }],
        "estimates": {
            "chat_direct": direct.report,
            "chat_regen": regen.report,
            "ell_hat": ell,
            "range_hat": range,
            "sigma2_hat": sigma2.report,
            "cbar_hat": cbar.cbar,
        },
        "checks": {
            "direct_regen_cis_overlap": direct.report.overlaps(&regen.report),
            "capacity_rate_splits_as_cbar_times_ell": {
                "product": cbar.product,
                "product_stderr": cbar.product_stderr,
                "z": cbar.z,
                "consistent": cbar.consistent,
                "inconclusive": cbar.inconclusive,
            },
            "block_functional_cross_check": prop57,
            "mean_centered_block_increment_z": sigma2.mean_d_z,
            "per_block_duration_bound_max_violation": regen.blocks.max_duration_bound_violation(),
            "blocks": regen.blocks.len(),
        },
        "config_echo": ctx.echo(),
    });
    Ok((summary, vec![table]))
}

// ------------------------------------------------------------------- clt --

pub struct CltArgs {
    pub walks: Option<usize>,
    pub steps: Option<usize>,
    pub cal_horizon: Option<usize>,
    pub cal_replicas: Option<usize>,
    pub guard: Option<usize>,
}

pub fn run_clt(ctx: &Ctx, args: &CltArgs) -> CmdResult<(Value, Vec<CsvTable>)> {
    let seed = ctx.need_seed()?;
    let block = ctx.config.clt.clone();
    let walks = args
        .walks
        .or(block.as_ref().map(|b| b.walks))
        .ok_or_else(|| Failure::Validation("clt needs --walks".into()))?;
    let steps = args
        .steps
        .or(block.as_ref().map(|b| b.steps))
        .ok_or_else(|| Failure::Validation("clt needs --steps".into()))?;
    let cal_h = args
        .cal_horizon
        .or(block.as_ref().map(|b| b.calibration_horizon))
        .unwrap_or(20_000);
    let cal_r = args
        .cal_replicas
        .or(block.as_ref().map(|b| b.calibration_replicas))
        .unwrap_or(8);
    let guard = args.guard.or(block.as_ref().map(|b| b.guard)).unwrap_or(1000);
    genfun::transience_check(&ctx.fp, &ctx.cfg)
        .map_err(|e| Failure::Assumption(format!("clt: {e}")))?;
    let report = clt_experiment(
        &ctx.fp, walks, steps, seed, cal_h, cal_r, guard, ctx.workers, &ctx.cfg,
    )
    .map_err(from_estimator)?;
    let mut table = CsvTable::new("clt", &["schema", "walk", "standardized"]);
    for (i, v) in report.standardized.iter().enumerate() {
        table.push(vec!["freewalk.clt.v1".into(), i.to_string(), fmt_f64(*v)]);
    }
    let summary = json!({
        "schema": "freewalk.clt.v1",
        "m_walks": report.m_walks,
        "n_steps": report.n_steps,
        "chat_used": report.chat_used,
        "sigma_used": report.sigma_used,
        "chat_regen": report.chat_regen,
        "sigma_regen": report.sigma_regen,
        "calibration_walks": report.calibration_walks,
        "ks_distance": report.ks_distance,
        "config_echo": ctx.echo(),
    });
    Ok((summary, vec![table]))
}

// ----------------------------------------------------------------- sweep --

pub struct SweepArgs {
    pub param: Option<String>,
    pub grid: Option<String>,
    pub horizon: Option<usize>,
    pub replicas: Option<usize>,
    pub guard: Option<usize>,
}

fn parse_grid(text: &str) -> CmdResult<Vec<f64>> {
    let bad = || Failure::Validation(format!("bad grid {text:?}; use lo:hi:count or v1,v2,..."));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        if count < 2 || hi <= lo || hi.is_nan() || lo.is_nan() {
            return Err(bad());
        }
        Ok((0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect())
    } else {
        text.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

pub fn run_sweep(ctx: &Ctx, args: &SweepArgs) -> CmdResult<(Value, Vec<CsvTable>)> {
    let seed = ctx.need_seed()?;
    let block = ctx.config.sweep.clone();
    let parameter = args
        .param
        .clone()
        .or(block.as_ref().map(|b| b.parameter.clone()))
        .unwrap_or_else(|| "alpha".to_string());
    let grid: Vec<f64> = match (&args.grid, block.as_ref().map(|b| b.grid.clone())) {
        (Some(text), _) => parse_grid(text)?,
        (None, Some(g)) => g,
        (None, None) => return Err(Failure::Validation("sweep needs --grid".into())),
    };
    let horizon = args
        .horizon
        .or(block.as_ref().map(|b| b.horizon))
        .ok_or_else(|| Failure::Validation("sweep needs --horizon".into()))?;
    let replicas = args.replicas.or(block.as_ref().map(|b| b.replicas)).unwrap_or(8);
    let guard = args.guard.or(block.as_ref().map(|b| b.guard)).unwrap_or(1000);
    let report = estimators::sweep(
        &ctx.config.model,
        &parameter,
        &grid,
        horizon,
        replicas,
        seed,
        guard,
        ctx.workers,
        &ctx.cfg,
    )
    .map_err(from_estimator)?;
    let schema = "freewalk.sweep.v1";
    let mut table = CsvTable::new(
        "sweep",
        &["schema", "parameter", "value", "point", "stderr", "ci_lo", "ci_hi", "n_blocks", "skipped"],
    );
    for p in &report.points {
        match (&p.estimate, &p.skipped) {
            (Some(e), _) => table.push(vec![
                schema.into(),
                parameter.clone(),
                fmt_f64(p.value),
                fmt_f64(e.point),
                fmt_f64(e.stderr),
                fmt_f64(e.ci95.0),
                fmt_f64(e.ci95.1),
                e.n_samples.to_string(),
                String::new(),
            ]),
            (None, Some(reason)) => table.push(vec![
                schema.into(),
                parameter.clone(),
                fmt_f64(p.value),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "0".into(),
                reason.clone(),
            ]),
            (None, None) => unreachable!("a sweep point is estimated or skipped"),
        }
    }
    let summary = json!({
        "schema": schema,
        "report": report,
        "spike_threshold_z": estimators::SECOND_DIFF_SPIKE_Z,
        "config_echo": ctx.echo(),
    });
    Ok((summary, vec![table]))
}

// ----------------------------------------------------------------- audit --

pub struct AuditArgs {
    pub trajectories: Option<usize>,
    pub max_k: Option<usize>,
    pub horizon: Option<usize>,
    pub guard: Option<usize>,
}

pub fn run_audit(ctx: &Ctx, args: &AuditArgs) -> CmdResult<(Value, Vec<CsvTable>)> {
    let seed = ctx.need_seed()?;
    let block = ctx.config.audit.clone();
    let trajectories = args
        .trajectories
        .or(block.as_ref().map(|b| b.trajectories))
        .unwrap_or(4);
    let max_k = args.max_k.or(block.as_ref().map(|b| b.max_k)).unwrap_or(10);
    let horizon = args
        .horizon
        .or(block.as_ref().map(|b| b.horizon))
        .unwrap_or(4000);
    let guard = args.guard.or(block.as_ref().map(|b| b.guard)).unwrap_or(1000);
    genfun::transience_check(&ctx.fp, &ctx.cfg)
        .map_err(|e| Failure::Assumption(format!("audit: {e}")))?;
    let engine = CapacityEngine::new(&ctx.fp, &ctx.cfg).map_err(from_capacity)?;
    let schema = "freewalk.audit.v1";
    let mut table = CsvTable::new(
        "audit",
        &["schema", "trajectory", "k", "lhs", "rhs", "abs_error"],
    );
    let mut max_err: f64 = 0.0;
    let mut count = 0usize;
    for stream in 0..trajectories as u64 {
        let tr = sim::run_walk(&ctx.fp, horizon, WalkSeed { master: seed, stream });
        let exits = sim::exit_times(&tr, guard);
        let confirmed = exits.confirmed().count();
        let ks: Vec<usize> = (1..=confirmed.min(max_k)).collect();
        if ks.is_empty() {
            continue;
        }
        let reports = decomposition_audit(&engine, &tr, &exits, &ks).map_err(from_estimator)?;
        for r in reports {
            max_err = max_err.max(r.abs_error);
            count += 1;
            table.push(vec![
                schema.into(),
                stream.to_string(),
                r.k.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                fmt_f64(r.abs_error),
            ]);
        }
    }
    let summary = json!({
        "schema": schema,
        "audited_identities": count,
        "max_abs_error": max_err,
        "config_echo": ctx.echo(),
    });
    Ok((summary, vec![table]))
}

// -------------------------------------------------------------- fixtures --

pub fn run_fixtures(name: &str) -> CmdResult<String> {
    let spec: ModelSpec = freewalk_core::fixtures::by_name(name).ok_or_else(|| {
        Failure::Validation(format!(
            "unknown fixture {name:?}; available: {}",
            freewalk_core::fixtures::FIXTURE_NAMES.join(", ")
        ))
    })?;
    let config = RunConfig::bare(spec);
    Ok(serde_json::to_string_pretty(&config).expect("fixture serializes") + "\n")
}

// keep the block types referenced so config-driven runs stay exercised
#[allow(dead_code)]
fn _block_types(_: &GenFunBlock, _: &EstimateBlock, _: &CltBlock, _: &SweepBlock, _: &AuditBlock) {}
