//! Generating functions of the product walk and of the factor chains.
//!
//! The central object is the family of return weights `u_i(x,z) = F(x,o|z)`
//! for one-letter words `x`: the minimal nonnegative solution of the coupled
//! one-step system
//!
//! ```text
//! u_i(x) = α_i·z·p_i(x,o_i) + α_i·z·Σ_y p_i(x,y)·u_i(y) + ᾱ_j·u_i(x),
//! ᾱ_j    = α_j·z·Σ_s p_j(o_j,s)·u_j(s),             j ≠ i,
//! ```
//!
//! obtained by monotone iteration from zero. Everything else derives from it:
//! `ξ_i(z) = α_i·z/(1−ᾱ_j(z))` (the substitution argument for factor
//! generating functions, equal at `z=1` to the cone-exit probability),
//! `U(o,o|z) = ᾱ_1+ᾱ_2`, and `G(o,o|z) = 1/(1−U(o,o|z))`.
//!
//! Implicit (infinite) factors are solved on balls around the root. For
//! escape-only factors (no path from outside a ball back into it) the killed
//! system is exact at any radius; otherwise a 0/1 boundary sandwich is grown
//! until the gap certifies the truncation error.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::factor::FactorGraph;
use crate::model::FreeProduct;
use crate::word::{Factor, StateId, ROOT_STATE};

/// Margin over 1 that the radius bracket must clear for the model to count
/// as transient.
pub const TRANSIENCE_MARGIN: f64 = 1e-3;
/// Final width of the radius bisection bracket.
pub const RADIUS_BRACKET_WIDTH: f64 = 1e-4;
/// Largest z probed by `radius_estimate`.
pub const RADIUS_PROBE_CAP: f64 = 8.0;

#[derive(Debug, Error)]
pub enum GenFunError {
    #[error(
        "fixed point diverged at z = {z}: residual {residual:.3e} after {iterations} iterations; \
         z is at or beyond the radius of convergence"
    )]
    Divergent { z: f64, residual: f64, iterations: u64 },
    #[error("truncation sandwich gap {gap:.3e} at ball radius {radius}; budget exhausted")]
    SandwichExhausted { gap: f64, radius: usize },
    #[error("z = {z} is at or beyond the Green function radius (total return weight {u:.6})")]
    BeyondRadius { z: f64, u: f64 },
    #[error("linear system is singular at weight {w}")]
    SingularSystem { w: f64 },
    #[error("solution of the linear system is not nonnegative (min entry {min:.3e})")]
    NotNonnegative { min: f64 },
    #[error("{0}")]
    Precondition(String),
}

/// Controls for the monotone fixed-point iteration and implicit-factor
/// truncation.
#[derive(Clone, Debug)]
pub struct FixedPointConfig {
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Starting ball radius for implicit factors.
    pub initial_ball: usize,
    /// Largest ball radius before the sandwich gives up.
    pub max_ball: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            initial_ball: 8,
            max_ball: 4096,
        }
    }
}

/// Converged return weights at one evaluation point.
#[derive(Clone, Debug)]
pub struct ReturnWeights {
    pub z: f64,
    /// `u_i(x,z)` per factor, keyed by non-root state id (ball-limited for
    /// implicit factors).
    pub u: [BTreeMap<StateId, f64>; 2],
    /// `ᾱ_i(z) = α_i·z·Σ_s p_i(o_i,s)·u_i(s,z)`.
    pub abar: [f64; 2],
    /// `ξ_i(z) = α_i·z/(1−ᾱ_j(z))`.
    pub xi: [f64; 2],
    /// Certified truncation gap (0 for explicit / escape-only factors).
    pub gap: f64,
    pub iterations: u64,
}

impl ReturnWeights {
    pub fn xi(&self, f: Factor) -> f64 {
        self.xi[f.idx()]
    }

    pub fn abar(&self, f: Factor) -> f64 {
        self.abar[f.idx()]
    }

    pub fn u_of(&self, f: Factor, state: StateId) -> f64 {
        self.u[f.idx()].get(&state).copied().unwrap_or(0.0)
    }

    /// `U(o,o|z) = ᾱ_1 + ᾱ_2`, the first-return weight at the root.
    pub fn u_root(&self) -> f64 {
        self.abar[0] + self.abar[1]
    }
}

struct FactorTable {
    /// Non-root states carried by the iteration, ascending.
    states: Vec<StateId>,
    /// `p(x, o_i)` per carried state.
    to_root: Vec<f64>,
    /// Non-root transitions per carried state; `None` target = outside ball.
    rows: Vec<Vec<(Option<usize>, f64)>>,
    /// Root row restricted to non-root targets.
    root_row: Vec<(Option<usize>, f64)>,
    /// Value read for outside-ball references.
    boundary: f64,
}

impl FactorTable {
    fn new(g: &FactorGraph, radius: usize, boundary: f64) -> FactorTable {
        let states: Vec<StateId> = match g.state_count() {
            Some(n) => (1..n as StateId).collect(),
            None => g.ball(radius).into_iter().filter(|&s| s != ROOT_STATE).collect(),
        };
        let pos: HashMap<StateId, usize> =
            states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let lookup = |t: StateId| -> Option<usize> { pos.get(&t).copied() };
        let mut to_root = vec![0.0; states.len()];
        let mut rows = vec![Vec::new(); states.len()];
        for (i, &s) in states.iter().enumerate() {
            g.for_each_transition(s, |t, p| {
                if t == ROOT_STATE {
                    to_root[i] = p;
                } else {
                    rows[i].push((lookup(t), p));
                }
            });
        }
        let mut root_row = Vec::new();
        g.for_each_transition(ROOT_STATE, |t, p| {
            if t != ROOT_STATE {
                root_row.push((lookup(t), p));
            }
        });
        FactorTable { states, to_root, rows, root_row, boundary }
    }

    fn read(&self, u: &[f64], target: Option<usize>) -> f64 {
        match target {
            Some(i) => u[i],
            None => self.boundary,
        }
    }

    fn abar(&self, u: &[f64], weight_z: f64) -> f64 {
        weight_z * self.root_row.iter().map(|&(t, p)| p * self.read(u, t)).sum::<f64>()
    }
}

struct USolution {
    u: [Vec<f64>; 2],
    abar: [f64; 2],
    iterations: u64,
}

/// Monotone Jacobi iteration from zero. Divergence is declared when the
/// residual fails to halve over a 10^4-iteration window, when iterates
/// explode, or when the iteration budget runs out.
fn iterate_u(
    fp: &FreeProduct,
    tables: &[FactorTable; 2],
    z: f64,
    cfg: &FixedPointConfig,
) -> Result<USolution, GenFunError> {
    let az = [fp.alpha_for(Factor::One) * z, fp.alpha_for(Factor::Two) * z];
    let mut u = [vec![0.0; tables[0].states.len()], vec![0.0; tables[1].states.len()]];
    let mut next = u.clone();
    let mut window_anchor = f64::INFINITY;
    let mut t: u64 = 0;
    loop {
        t += 1;
        let abar = [tables[0].abar(&u[0], az[0]), tables[1].abar(&u[1], az[1])];
        let mut residual: f64 = 0.0;
        let mut max_u: f64 = 0.0;
        for i in 0..2 {
            let other = abar[1 - i];
            let tab = &tables[i];
            for (k, row) in tab.rows.iter().enumerate() {
                let within: f64 = row.iter().map(|&(tgt, p)| p * tab.read(&u[i], tgt)).sum();
                let v = az[i] * (tab.to_root[k] + within) + other * u[i][k];
                residual = residual.max((v - u[i][k]).abs());
                max_u = max_u.max(v);
                next[i][k] = v;
            }
        }
        std::mem::swap(&mut u, &mut next);
        if residual < cfg.tolerance {
            let abar = [tables[0].abar(&u[0], az[0]), tables[1].abar(&u[1], az[1])];
            return Ok(USolution { u, abar, iterations: t });
        }
        if !residual.is_finite() || max_u > 1e9 {
            return Err(GenFunError::Divergent { z, residual, iterations: t });
        }
        if t.is_multiple_of(10_000) {
            if residual > 0.5 * window_anchor {
                return Err(GenFunError::Divergent { z, residual, iterations: t });
            }
            window_anchor = residual;
        }
        if t >= cfg.max_iterations {
            return Err(GenFunError::Divergent { z, residual, iterations: t });
        }
    }
}

/// Compute the return weights at `z` (minimal nonnegative solution of the
/// coupled system).
pub fn return_weights(
    fp: &FreeProduct,
    z: f64,
    cfg: &FixedPointConfig,
) -> Result<ReturnWeights, GenFunError> {
    if z <= 0.0 || !z.is_finite() {
        return Err(GenFunError::Precondition(format!("z = {z} must be positive and finite")));
    }
    let needs_sandwich = |f: Factor| {
        let g = fp.factor(f);
        !g.is_finite() && !g.escape_only_beyond(cfg.initial_ball as StateId)
    };
    let sandwich = needs_sandwich(Factor::One) || needs_sandwich(Factor::Two);

    let mut radius = cfg.initial_ball;
    loop {
        let lower = [
            FactorTable::new(fp.factor(Factor::One), radius, 0.0),
            FactorTable::new(fp.factor(Factor::Two), radius, 0.0),
        ];
        let lo = iterate_u(fp, &lower, z, cfg)?;
        let (sol, gap) = if sandwich {
            let upper = [
                FactorTable::new(fp.factor(Factor::One), radius, 1.0),
                FactorTable::new(fp.factor(Factor::Two), radius, 1.0),
            ];
            let hi = iterate_u(fp, &upper, z, cfg)?;
            let mut gap: f64 = (hi.abar[0] - lo.abar[0]).abs().max((hi.abar[1] - lo.abar[1]).abs());
            for i in 0..2 {
                for (a, b) in lo.u[i].iter().zip(&hi.u[i]) {
                    gap = gap.max((b - a).abs());
                }
            }
            (lo, gap)
        } else {
            // explicit factors carry no truncation; escape-only implicit
            // factors make the killed system exact at any radius
            (lo, 0.0)
        };

        if gap < cfg.tolerance {
            let u = [
                lower[0].states.iter().copied().zip(sol.u[0].iter().copied()).collect(),
                lower[1].states.iter().copied().zip(sol.u[1].iter().copied()).collect(),
            ];
            let abar = sol.abar;
            for j in 0..2 {
                if abar[j] >= 1.0 - 1e-12 {
                    return Err(GenFunError::BeyondRadius { z, u: abar[0] + abar[1] });
                }
            }
            let xi = [
                fp.alpha_for(Factor::One) * z / (1.0 - abar[1]),
                fp.alpha_for(Factor::Two) * z / (1.0 - abar[0]),
            ];
            return Ok(ReturnWeights { z, u, abar, xi, gap, iterations: sol.iterations });
        }
        if radius >= cfg.max_ball {
            return Err(GenFunError::SandwichExhausted { gap, radius });
        }
        radius *= 2;
    }
}

/// Concurrent memo of return weights keyed by the bits of `z`. Readers share
/// the map; the first writer for a given `z` wins.
#[derive(Default)]
pub struct WeightCache {
    inner: RwLock<HashMap<u64, Arc<ReturnWeights>>>,
}

impl WeightCache {
    pub fn new() -> WeightCache {
        WeightCache::default()
    }

    pub fn get(
        &self,
        fp: &FreeProduct,
        z: f64,
        cfg: &FixedPointConfig,
    ) -> Result<Arc<ReturnWeights>, GenFunError> {
        let key = z.to_bits();
        if let Some(hit) = self.inner.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let computed = Arc::new(return_weights(fp, z, cfg)?);
        let mut map = self.inner.write().expect("cache poisoned");
        Ok(map.entry(key).or_insert(computed).clone())
    }
}

fn lu_solve(a: DMatrix<f64>, b: DVector<f64>, w: f64) -> Result<DVector<f64>, GenFunError> {
    let residual_of = |x: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>| -> f64 {
        (a * x - b).amax()
    };
    let a2 = a.clone();
    let b2 = b.clone();
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(GenFunError::SingularSystem { w })?;
    if residual_of(&x, &a2, &b2) > 1e-9 {
        return Err(GenFunError::SingularSystem { w });
    }
    let min = x.min();
    if min < -1e-9 {
        return Err(GenFunError::NotNonnegative { min });
    }
    Ok(x)
}

/// First-visit generating function `F_i(x,y|w)` of one factor chain:
/// the minimal nonnegative solution of
/// `F(x) = w·Σ_v p(x,v)·F(v)` for `x ≠ y`, with `F(y) = 1`.
pub fn factor_first_visit(
    g: &FactorGraph,
    x: StateId,
    y: StateId,
    w: f64,
    cfg: &FixedPointConfig,
) -> Result<f64, GenFunError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(GenFunError::Precondition(format!("w = {w} must lie in [0,1]")));
    }
    if x == y {
        return Ok(1.0);
    }
    match g.state_count() {
        Some(n) => {
            if (x as usize) >= n || (y as usize) >= n {
                return Err(GenFunError::Precondition("state outside the factor".to_string()));
            }
            let mut a = DMatrix::<f64>::identity(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for v in 0..n as StateId {
                if v == y {
                    b[v as usize] = 1.0;
                    continue;
                }
                g.for_each_transition(v, |t, p| {
                    if t == y {
                        b[v as usize] += w * p;
                    } else {
                        a[(v as usize, t as usize)] -= w * p;
                    }
                });
            }
            let f = lu_solve(a, b, w)?;
            Ok(f[x as usize].clamp(0.0, f64::INFINITY))
        }
        None => implicit_first_visit(g, x, y, w, cfg),
    }
}

/// Last-visit generating function `L_i(x,y|w)`: weighted paths from `x` to
/// `y` that never return to `x` after the start. Satisfies `L(x,x|w) = 1`
/// and, for `v ≠ x`, `L(x,v|w) = w·Σ_u L(x,u|w)·p(u,v)`.
pub fn factor_last_visit(
    g: &FactorGraph,
    x: StateId,
    y: StateId,
    w: f64,
    cfg: &FixedPointConfig,
) -> Result<f64, GenFunError> {
    if w < 0.0 || !w.is_finite() {
        return Err(GenFunError::Precondition(format!("w = {w} must be nonnegative")));
    }
    if x == y {
        return Ok(1.0);
    }
    match g.state_count() {
        Some(n) => {
            if (x as usize) >= n || (y as usize) >= n {
                return Err(GenFunError::Precondition("state outside the factor".to_string()));
            }
            let mut a = DMatrix::<f64>::identity(n, n);
            let mut b = DVector::<f64>::zeros(n);
            b[x as usize] = 1.0;
            for u in 0..n as StateId {
                g.for_each_transition(u, |t, p| {
                    if t == x {
                        return; // no return to the start
                    }
                    if u == x {
                        b[t as usize] += w * p;
                    } else {
                        a[(t as usize, u as usize)] -= w * p;
                    }
                });
            }
            let l = lu_solve(a, b, w)?;
            Ok(l[y as usize].clamp(0.0, f64::INFINITY))
        }
        None => implicit_last_visit(g, x, y, w, cfg),
    }
}

/// Killed-ball Gauss–Seidel for implicit factors; exact for escape-only
/// factors, otherwise bracketed by the 0/1 boundary sandwich.
fn implicit_first_visit(
    g: &FactorGraph,
    x: StateId,
    y: StateId,
    w: f64,
    cfg: &FixedPointConfig,
) -> Result<f64, GenFunError> {
    let mut radius = cfg.initial_ball.max(x.max(y) as usize + 2);
    loop {
        let lo = ball_first_visit(g, x, y, w, radius, 0.0, cfg);
        let exact = g.escape_only_beyond(radius as StateId);
        let gap = if exact { 0.0 } else { (ball_first_visit(g, x, y, w, radius, 1.0, cfg) - lo).abs() };
        if gap < cfg.tolerance {
            return Ok(lo);
        }
        if radius >= cfg.max_ball {
            return Err(GenFunError::SandwichExhausted { gap, radius });
        }
        radius *= 2;
    }
}

fn ball_first_visit(
    g: &FactorGraph,
    x: StateId,
    y: StateId,
    w: f64,
    radius: usize,
    boundary: f64,
    cfg: &FixedPointConfig,
) -> f64 {
    let states: Vec<StateId> = g.ball(radius);
    let pos: HashMap<StateId, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut f = vec![0.0; states.len()];
    if let Some(&iy) = pos.get(&y) {
        f[iy] = 1.0;
    }
    loop {
        let mut change: f64 = 0.0;
        for (i, &s) in states.iter().enumerate() {
            if s == y {
                continue;
            }
            let mut acc = 0.0;
            g.for_each_transition(s, |t, p| {
                acc += p * pos.get(&t).map(|&j| f[j]).unwrap_or(boundary);
            });
            let v = w * acc;
            change = change.max((v - f[i]).abs());
            f[i] = v;
        }
        if change < cfg.tolerance * 1e-2 {
            break;
        }
    }
    pos.get(&x).map(|&i| f[i]).unwrap_or(0.0)
}

fn implicit_last_visit(
    g: &FactorGraph,
    x: StateId,
    y: StateId,
    w: f64,
    cfg: &FixedPointConfig,
) -> Result<f64, GenFunError> {
    let radius = cfg.initial_ball.max(x.max(y) as usize + 2);
    if !g.escape_only_beyond(radius as StateId) {
        return Err(GenFunError::Precondition(
            "last-visit truncation is certified only for escape-only implicit factors".to_string(),
        ));
    }
    // killed ball, exact by the escape-only property
    let states: Vec<StateId> = g.ball(radius);
    let pos: HashMap<StateId, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let ix = *pos.get(&x).ok_or_else(|| {
        GenFunError::Precondition("start state outside the truncation ball".to_string())
    })?;
    let mut l = vec![0.0; states.len()];
    l[ix] = 1.0;
    loop {
        let mut change: f64 = 0.0;
        for (i, &s) in states.iter().enumerate() {
            if s == x {
                continue;
            }
            // incoming sweep: L(v) = w·Σ_u L(u)·p(u,v); rebuilt per sweep
            let mut acc = 0.0;
            for (j, &u) in states.iter().enumerate() {
                acc += l[j] * g.prob(u, s);
            }
            let v = w * acc;
            change = change.max((v - l[i]).abs());
            l[i] = v;
        }
        if change < cfg.tolerance * 1e-2 {
            break;
        }
    }
    Ok(pos.get(&y).map(|&i| l[i]).unwrap_or(0.0))
}

/// `G(o,o|z) = 1/(1 − U(o,o|z))`.
pub fn green_at_root(fp: &FreeProduct, z: f64, cfg: &FixedPointConfig) -> Result<f64, GenFunError> {
    if z == 0.0 {
        return Ok(1.0);
    }
    let w = return_weights(fp, z, cfg)?;
    let u = w.u_root();
    if u >= 1.0 - 1e-9 {
        return Err(GenFunError::BeyondRadius { z, u });
    }
    Ok(1.0 / (1.0 - u))
}

/// Bisection bracket for the radius of convergence. `hi` is `+∞` when every
/// probed point up to the cap converged.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct RadiusBracket {
    pub lo: f64,
    pub hi: f64,
}

impl RadiusBracket {
    /// The conservative point estimate (supremum of convergent z probed).
    pub fn estimate(&self) -> f64 {
        self.lo
    }

    pub fn contains_one(&self) -> bool {
        self.lo <= 1.0 && 1.0 <= self.hi
    }

    /// The transience predicate: the bracket clears 1 by the margin.
    pub fn is_transient(&self) -> bool {
        self.lo >= 1.0 + TRANSIENCE_MARGIN
    }
}

fn converges_at(fp: &FreeProduct, z: f64, cfg: &FixedPointConfig) -> bool {
    match return_weights(fp, z, cfg) {
        Ok(w) => w.u_root() < 1.0 - 1e-9,
        Err(_) => false,
    }
}

/// Estimate the radius of convergence by probing the fixed point over a
/// ladder of z values and bisecting the convergent/divergent boundary down
/// to a bracket of width ≤ 1e−4.
pub fn radius_estimate(fp: &FreeProduct, cfg: &FixedPointConfig) -> RadiusBracket {
    let mut lo = 0.5;
    if !converges_at(fp, lo, cfg) {
        // pathological input; report an empty lower bracket
        return RadiusBracket { lo: 0.0, hi: lo };
    }
    let mut hi = None;
    for z in [1.0, 1.5, 2.0, 4.0, RADIUS_PROBE_CAP] {
        if converges_at(fp, z, cfg) {
            lo = z;
        } else {
            hi = Some(z);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return RadiusBracket { lo: RADIUS_PROBE_CAP, hi: f64::INFINITY };
    };
    while hi - lo > RADIUS_BRACKET_WIDTH {
        let mid = 0.5 * (lo + hi);
        if converges_at(fp, mid, cfg) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    RadiusBracket { lo, hi }
}

/// Run the transience gate: the radius bracket must clear 1 by the margin.
pub fn transience_check(fp: &FreeProduct, cfg: &FixedPointConfig) -> Result<RadiusBracket, GenFunError> {
    let bracket = radius_estimate(fp, cfg);
    if !bracket.is_transient() {
        return Err(GenFunError::Precondition(format!(
            "transience check failed: the Green function radius bracket [{:.5}, {:.5}] does not \
             clear 1 by the margin {TRANSIENCE_MARGIN}; the walk looks recurrent or critical",
            bracket.lo, bracket.hi
        )));
    }
    Ok(bracket)
}

/// Uniform last-visit bound report at `rho0 > 1`: values
/// `L(o,x|ρ₀) = L_i(o_i,x|ξ_i(ρ₀))` per letter, their per-factor suprema,
/// and the maximal cross-factor product.
#[derive(Clone, Debug)]
pub struct LProductReport {
    pub rho0: f64,
    pub xi: [f64; 2],
    /// Letter-name → L value, per factor (budget-limited for implicit factors).
    pub values: [BTreeMap<String, f64>; 2],
    pub sup_per_factor: [f64; 2],
    pub max_cross_product: f64,
    pub enumeration_budget: usize,
}

pub fn l_product_check(
    fp: &FreeProduct,
    rho0: f64,
    budget: usize,
    cfg: &FixedPointConfig,
) -> Result<LProductReport, GenFunError> {
    if rho0 <= 1.0 || rho0.is_nan() {
        return Err(GenFunError::Precondition(format!("rho0 = {rho0} must exceed 1")));
    }
    let w = return_weights(fp, rho0, cfg)?;
    let mut values: [BTreeMap<String, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut sup = [0.0f64; 2];
    for f in [Factor::One, Factor::Two] {
        let g = fp.factor(f);
        let letters: Vec<StateId> = match g.state_count() {
            Some(n) => (1..n as StateId).collect(),
            None => g.ball(budget).into_iter().filter(|&s| s != ROOT_STATE).collect(),
        };
        for s in letters {
            let l = factor_last_visit(g, ROOT_STATE, s, w.xi(f), cfg)?;
            sup[f.idx()] = sup[f.idx()].max(l);
            values[f.idx()].insert(g.state_name(s), l);
        }
    }
    Ok(LProductReport {
        rho0,
        xi: w.xi,
        values,
        sup_per_factor: sup,
        max_cross_product: sup[0] * sup[1],
        enumeration_budget: budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ray_weights_at_one() {
        let fp = fixtures::ray();
        let w = return_weights(&fp, 1.0, &FixedPointConfig::default()).unwrap();
        // deterministic rays never return
        assert!(w.u[0].values().all(|&v| v == 0.0));
        assert!(w.u[1].values().all(|&v| v == 0.0));
        assert_eq!(w.abar, [0.0, 0.0]);
        assert_abs_diff_eq!(w.xi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.xi[1], 0.5, epsilon = 1e-15);
        assert_eq!(w.gap, 0.0);
    }

    #[test]
    fn fix_a_weights_are_probabilities() {
        let fp = fixtures::example_a();
        let w = return_weights(&fp, 1.0, &FixedPointConfig::default()).unwrap();
        for side in &w.u {
            for &v in side.values() {
                assert!((0.0..=1.0).contains(&v), "u = {v}");
            }
        }
        assert!(w.xi[0] > 0.0 && w.xi[0] < 1.0);
        assert!(w.xi[1] > 0.0 && w.xi[1] < 1.0);
        assert!(w.u_root() < 1.0);
    }

    #[test]
    fn u_is_nondecreasing_in_z() {
        let fp = fixtures::example_a();
        let cfg = FixedPointConfig::default();
        let mut prev = 0.0;
        for z in [0.25, 0.5, 0.75, 1.0] {
            let w = return_weights(&fp, z, &cfg).unwrap();
            let u = w.u_of(Factor::One, 1);
            assert!(u >= prev - 1e-12);
            prev = u;
        }
    }

    #[test]
    fn two_state_factor_first_visit_is_w() {
        // o ↔ a with unit probabilities: one forced step
        let g = FactorGraph::explicit(
            "o",
            &[("o".into(), "a".into(), 1.0), ("a".into(), "o".into(), 1.0)],
        )
        .unwrap();
        let cfg = FixedPointConfig::default();
        for w in [0.0, 0.3, 0.9, 1.0] {
            assert_abs_diff_eq!(
                factor_first_visit(&g, 1, 0, w, &cfg).unwrap(),
                w,
                epsilon = 1e-14
            );
            // L(o,a|w) = w as well: the only path is the single step
            assert_abs_diff_eq!(
                factor_last_visit(&g, 0, 1, w, &cfg).unwrap(),
                w,
                epsilon = 1e-14
            );
        }
        assert_eq!(factor_first_visit(&g, 1, 1, 0.7, &cfg).unwrap(), 1.0);
        assert_eq!(factor_last_visit(&g, 1, 1, 0.7, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn fix_a_factor2_first_visit_closed_form() {
        // F(c,o|w) = 0.5w/(1 − 0.5w²), from eliminating the two-state loop
        let fp = fixtures::example_a();
        let g = fp.factor(Factor::Two);
        let c = g.state_by_name("c").unwrap();
        let cfg = FixedPointConfig::default();
        for w in [0.2, 0.5, 0.9, 1.0] {
            let expected = 0.5 * w / (1.0 - 0.5 * w * w);
            assert_abs_diff_eq!(
                factor_first_visit(g, c, 0, w, &cfg).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
        // the finite irreducible factor chain hits every state: F(c,o|1) = 1
        assert_abs_diff_eq!(factor_first_visit(g, c, 0, 1.0, &cfg).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn green_trivial_points() {
        let cfg = FixedPointConfig::default();
        let ray = fixtures::ray();
        assert_abs_diff_eq!(green_at_root(&ray, 1.0, &cfg).unwrap(), 1.0, epsilon = 1e-15);
        let fa = fixtures::example_a();
        assert_eq!(green_at_root(&fa, 0.0, &cfg).unwrap(), 1.0);
        assert!(green_at_root(&fa, 1.0, &cfg).unwrap() >= 1.0);
    }

    #[test]
    fn green_nondecreasing_in_z() {
        let fp = fixtures::example_a();
        let cfg = FixedPointConfig::default();
        let mut prev = 1.0;
        for z in [0.2, 0.5, 0.8, 1.0] {
            let g = green_at_root(&fp, z, &cfg).unwrap();
            assert!(g >= prev - 1e-12);
            prev = g;
        }
    }

    #[test]
    fn radius_brackets_fixtures() {
        let cfg = FixedPointConfig::default();

        let null = fixtures::null_recurrent();
        let b = radius_estimate(&null, &cfg);
        assert!(b.lo >= 0.999 && b.hi <= 1.001, "{b:?}");
        assert!(b.contains_one());
        assert!(!b.is_transient());
        assert!(transience_check(&null, &cfg).is_err());

        let ray = fixtures::ray();
        let b = radius_estimate(&ray, &cfg);
        assert!(b.estimate() >= 2.0, "{b:?}");
        assert!(b.is_transient());

        let fa = fixtures::example_a();
        let b = radius_estimate(&fa, &cfg);
        assert!(b.estimate() > 1.0 + TRANSIENCE_MARGIN, "{b:?}");
        assert!(b.is_transient());
    }

    #[test]
    fn l_product_check_fixtures() {
        let cfg = FixedPointConfig::default();
        let fa = fixtures::example_a();
        let rep = l_product_check(&fa, 1.01, 32, &cfg).unwrap();
        assert!(rep.max_cross_product < 1.0, "{rep:?}");

        let ray = fixtures::ray();
        let rep = l_product_check(&ray, 1.05, 32, &cfg).unwrap();
        assert!(rep.values[0].values().all(|v| v.is_finite()));
        assert!(rep.max_cross_product < 1.0, "{rep:?}");

        assert!(l_product_check(&fa, 1.0, 32, &cfg).is_err());
        assert!(l_product_check(&fa, 0.9, 32, &cfg).is_err());
    }

    #[test]
    fn weight_cache_is_shared() {
        let fp = fixtures::example_a();
        let cfg = FixedPointConfig::default();
        let cache = WeightCache::new();
        let a = cache.get(&fp, 1.0, &cfg).unwrap();
        let b = cache.get(&fp, 1.0, &cfg).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
