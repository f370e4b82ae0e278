//! Exact hitting/escape probabilities and capacities of finite word sets.
//!
//! The infinite product graph is collapsed onto a finite hull: the
//! prefix-closure `T` of the words of interest plus a one-letter boundary.
//! A boundary word `b = t·g` roots a cone containing no target, so the walk
//! below `b` matters only through where it first exits `C(b)`. Exits happen
//! at `b` by a within-factor move, and excursions into the fresh copy
//! attached at `b` return with weight `ᾱ_j(1)`, so the effective first-exit
//! law is
//!
//! ```text
//! P_b[exit C(b) at t·g″] = α_i·p_i(g,g″) / (1 − ᾱ_j(1)),   i = factor of g,
//! ```
//!
//! with the deficit `1 − ξ_i(1)` absorbed as "never exits, never hits". The
//! result is a finite substochastic linear system whose minimal solution is
//! the exact hitting probability on the infinite graph.
//!
//! Hitting solves carry an optional cone constraint; the solved value
//! `h(v)` is the probability of reaching the target set with every
//! strictly-earlier position inside the admissible region (the position at
//! the hit itself is exempt).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::genfun::{self, FixedPointConfig, GenFunError, ReturnWeights};
use crate::model::FreeProduct;
use crate::word::{Factor, Letter, StateId, Word, ROOT_STATE};

/// Residual bound every solve must meet.
pub const SOLVER_RESIDUAL_BOUND: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("model failed the transience gate: {0}")]
    NotTransient(String),
    #[error("linear solve residual {residual:.3e} exceeds the {SOLVER_RESIDUAL_BOUND:.0e} bound")]
    Solver { residual: f64 },
    #[error("hull closure inside an implicit factor cannot be certified: {0}")]
    Truncation(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    GenFun(#[from] GenFunError),
}

/// Cone constraint applied to a hitting solve.
#[derive(Clone, Debug, PartialEq)]
pub enum ConeConstraint {
    Unconstrained,
    /// All positions before the hit must stay in `C(w)`.
    StayIn(Word),
    /// All positions before the hit must stay outside `C(w)`.
    AvoidConeAfterStart(Word),
    /// All positions before the hit must avoid words starting in the given
    /// factor, and the root.
    AvoidInitialFactor(Factor),
}

impl ConeConstraint {
    pub fn anchor(&self) -> Option<&Word> {
        match self {
            ConeConstraint::StayIn(w) | ConeConstraint::AvoidConeAfterStart(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct HullNode {
    parent: u32,
    letter: Letter,
    depth: u32,
    in_t: bool,
    target: bool,
}

/// Prefix-closed finite word set with its one-letter boundary, interned as a
/// tree. Node 0 is the root word `o`.
#[derive(Clone, Debug)]
pub struct Hull {
    nodes: Vec<HullNode>,
    children: HashMap<(u32, Letter), u32>,
}

impl Default for Hull {
    fn default() -> Self {
        Hull::new()
    }
}

impl Hull {
    pub fn new() -> Hull {
        Hull {
            nodes: vec![HullNode {
                parent: 0,
                letter: Letter { factor: Factor::One, state: u32::MAX },
                depth: 0,
                in_t: false,
                target: false,
            }],
            children: HashMap::new(),
        }
    }

    pub const ROOT: u32 = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn child(&self, parent: u32, letter: Letter) -> Option<u32> {
        self.children.get(&(parent, letter)).copied()
    }

    /// Get or create the child `parent · letter`.
    pub fn intern_child(&mut self, parent: u32, letter: Letter) -> u32 {
        if let Some(id) = self.child(parent, letter) {
            return id;
        }
        debug_assert!(
            parent == Hull::ROOT || self.nodes[parent as usize].letter.factor != letter.factor,
            "alternation violated in hull interning"
        );
        let id = self.nodes.len() as u32;
        let depth = self.nodes[parent as usize].depth + 1;
        self.nodes.push(HullNode { parent, letter, depth, in_t: false, target: false });
        self.children.insert((parent, letter), id);
        id
    }

    pub fn intern_word(&mut self, w: &Word) -> u32 {
        let mut cur = Hull::ROOT;
        for &l in w.letters() {
            cur = self.intern_child(cur, l);
        }
        cur
    }

    pub fn parent(&self, id: u32) -> u32 {
        self.nodes[id as usize].parent
    }

    pub fn letter(&self, id: u32) -> Option<Letter> {
        (id != Hull::ROOT).then(|| self.nodes[id as usize].letter)
    }

    pub fn depth(&self, id: u32) -> u32 {
        self.nodes[id as usize].depth
    }

    pub fn in_t(&self, id: u32) -> bool {
        self.nodes[id as usize].in_t
    }

    pub fn is_target(&self, id: u32) -> bool {
        self.nodes[id as usize].target
    }

    /// Mark a node (and its ancestors, keeping `T` prefix-closed) as hull
    /// interior.
    pub fn mark_t(&mut self, id: u32) {
        let mut cur = id;
        loop {
            let node = &mut self.nodes[cur as usize];
            if node.in_t {
                break;
            }
            node.in_t = true;
            if cur == Hull::ROOT {
                break;
            }
            cur = node.parent;
        }
    }

    pub fn mark_target(&mut self, id: u32) {
        self.mark_t(id);
        self.nodes[id as usize].target = true;
    }

    pub fn word(&self, id: u32) -> Word {
        let mut letters = Vec::with_capacity(self.depth(id) as usize);
        let mut cur = id;
        while cur != Hull::ROOT {
            letters.push(self.nodes[cur as usize].letter);
            cur = self.nodes[cur as usize].parent;
        }
        letters.reverse();
        Word::from_letters(letters).expect("hull nodes alternate")
    }

    /// `true` iff `node` lies in the cone of `ancestor`.
    pub fn in_cone_of(&self, node: u32, ancestor: u32) -> bool {
        let target_depth = self.depth(ancestor);
        let mut cur = node;
        while self.depth(cur) > target_depth {
            cur = self.parent(cur);
        }
        cur == ancestor
    }

    pub fn t_nodes(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32).filter(|&i| self.in_t(i)).collect()
    }

    pub fn target_nodes(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32).filter(|&i| self.is_target(i)).collect()
    }
}

/// Hitting probabilities over a hull.
#[derive(Clone, Debug)]
pub struct EscapeSolution {
    /// One value per hull node.
    pub h: Vec<f64>,
    pub residual: f64,
    pub hull_size: usize,
    pub unknowns: usize,
}

/// Solver tuning.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Dense LU below this many unknowns, Gauss–Seidel above.
    pub dense_cutoff: usize,
    pub gs_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        // measured crossover: LU beats the sweep solver only on very small
        // systems; above ~10² unknowns Gauss-Seidel wins by orders of
        // magnitude on these substochastic rows
        SolverOptions { dense_cutoff: 128, gs_tolerance: 1e-13, max_sweeps: 100_000 }
    }
}

/// Exact-capacity engine for one transient model. Holds the z = 1 return
/// weights that drive the effective boundary collapse.
pub struct CapacityEngine<'a> {
    fp: &'a FreeProduct,
    weights: ReturnWeights,
    opts: SolverOptions,
}

impl<'a> CapacityEngine<'a> {
    pub fn new(fp: &'a FreeProduct, cfg: &FixedPointConfig) -> Result<Self, CapacityError> {
        Self::with_options(fp, cfg, SolverOptions::default())
    }

    pub fn with_options(
        fp: &'a FreeProduct,
        cfg: &FixedPointConfig,
        opts: SolverOptions,
    ) -> Result<Self, CapacityError> {
        let report = fp.validate();
        if !report.is_empty() {
            return Err(CapacityError::Precondition(format!(
                "model is not admissible: {}",
                report.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
            )));
        }
        let weights = genfun::return_weights(fp, 1.0, cfg)
            .map_err(|e| CapacityError::NotTransient(e.to_string()))?;
        if weights.u_root() >= 1.0 - 1e-9 {
            return Err(CapacityError::NotTransient(format!(
                "total return weight at the root is {:.9}; the walk is not transient",
                weights.u_root()
            )));
        }
        for f in [Factor::One, Factor::Two] {
            if weights.xi(f) >= 1.0 - 1e-9 {
                return Err(CapacityError::NotTransient(format!(
                    "cone-exit weight ξ_{} = {:.9} is not strictly below 1",
                    f,
                    weights.xi(f)
                )));
            }
        }
        Ok(CapacityEngine { fp, weights, opts })
    }

    pub fn model(&self) -> &FreeProduct {
        self.fp
    }

    pub fn weights(&self) -> &ReturnWeights {
        &self.weights
    }

    /// The copy of factor `f` a hull node occupies: (prefix node, state).
    fn copy_position(&self, hull: &Hull, id: u32, f: Factor) -> (u32, StateId) {
        match hull.letter(id) {
            Some(l) if l.factor == f => (hull.parent(id), l.state),
            _ => (id, ROOT_STATE),
        }
    }

    /// Full one-step kernel row of a hull word; `None` destinations lie
    /// outside the hull (only possible below pruned implicit-factor cuts,
    /// where the hitting value is exactly zero).
    fn kernel_row(&self, hull: &Hull, id: u32) -> Vec<(Option<u32>, f64)> {
        let mut row = Vec::new();
        for f in [Factor::One, Factor::Two] {
            let weight = self.fp.alpha_for(f);
            let (prefix, state) = self.copy_position(hull, id, f);
            self.fp.factor(f).for_each_transition(state, |t, p| {
                let dest = if t == ROOT_STATE {
                    Some(prefix)
                } else {
                    hull.child(prefix, Letter { factor: f, state: t })
                };
                row.push((dest, weight * p));
            });
        }
        row
    }

    /// Effective first-exit row of a boundary word `t·g`.
    fn boundary_row(&self, hull: &Hull, id: u32) -> Vec<(Option<u32>, f64)> {
        let g = hull.letter(id).expect("boundary nodes are not the root");
        let t = hull.parent(id);
        let scale = self.fp.alpha_for(g.factor) / (1.0 - self.weights.abar(g.factor.other()));
        let mut row = Vec::new();
        self.fp.factor(g.factor).for_each_transition(g.state, |s, p| {
            let dest = if s == ROOT_STATE {
                Some(t)
            } else {
                hull.child(t, Letter { factor: g.factor, state: s })
            };
            row.push((dest, scale * p));
        });
        row
    }

    /// Complete the hull: add every one-step successor of `T` and close the
    /// boundary under within-factor moves. Implicit escape-only factors are
    /// cut beyond the largest `T`-relevant state of each copy (exact).
    pub fn close_hull(&self, hull: &mut Hull) -> Result<(), CapacityError> {
        let t_nodes = hull.t_nodes();
        // largest T-child state per (parent, factor) copy
        let mut max_t: HashMap<(u32, Factor), StateId> = HashMap::new();
        for &id in &t_nodes {
            if let Some(l) = hull.letter(id) {
                let e = max_t.entry((hull.parent(id), l.factor)).or_insert(0);
                *e = (*e).max(l.state);
            }
        }
        let mut queue: Vec<u32> = Vec::new();
        for &id in &t_nodes {
            for f in [Factor::One, Factor::Two] {
                let (prefix, state) = self.copy_position(hull, id, f);
                let row = self.fp.factor(f).row_vec(state);
                for (s, _) in row {
                    if s == ROOT_STATE {
                        continue;
                    }
                    let letter = Letter { factor: f, state: s };
                    if hull.child(prefix, letter).is_none() {
                        let nid = hull.intern_child(prefix, letter);
                        queue.push(nid);
                    }
                }
            }
        }
        while let Some(id) = queue.pop() {
            let g = hull.letter(id).expect("boundary node");
            let t = hull.parent(id);
            let factor = self.fp.factor(g.factor);
            let copy_max = max_t.get(&(t, g.factor)).copied().unwrap_or(0);
            for (s, _) in factor.row_vec(g.state) {
                if s == ROOT_STATE {
                    continue;
                }
                let letter = Letter { factor: g.factor, state: s };
                if hull.child(t, letter).is_some() {
                    continue;
                }
                if !factor.is_finite() && s > copy_max {
                    if factor.escape_only_beyond(copy_max) {
                        // nothing at or beyond s is in T and no path leads
                        // back: the hitting value there is exactly 0
                        continue;
                    }
                    return Err(CapacityError::Truncation(
                        "implicit factor admits returns into the hull".to_string(),
                    ));
                }
                let nid = hull.intern_child(t, letter);
                queue.push(nid);
            }
        }
        Ok(())
    }

    fn in_region(&self, hull: &Hull, id: u32, constraint: &ConeConstraint, anchor: Option<u32>) -> bool {
        match constraint {
            ConeConstraint::Unconstrained => true,
            ConeConstraint::StayIn(_) => hull.in_cone_of(id, anchor.expect("anchor interned")),
            ConeConstraint::AvoidConeAfterStart(_) => {
                !hull.in_cone_of(id, anchor.expect("anchor interned"))
            }
            ConeConstraint::AvoidInitialFactor(f) => {
                if id == Hull::ROOT {
                    return false;
                }
                let mut cur = id;
                while hull.parent(cur) != Hull::ROOT {
                    cur = hull.parent(cur);
                }
                hull.letter(cur).map(|l| l.factor) != Some(*f)
            }
        }
    }

    /// Solve the constrained hitting problem toward the hull's target set.
    pub fn solve(&self, hull: &Hull, constraint: &ConeConstraint) -> Result<EscapeSolution, CapacityError> {
        let anchor = match constraint.anchor() {
            Some(w) => {
                let mut cur = Hull::ROOT;
                for &l in w.letters() {
                    cur = hull.child(cur, l).ok_or_else(|| {
                        CapacityError::Precondition(
                            "constraint root does not belong to the hull".to_string(),
                        )
                    })?;
                }
                Some(cur)
            }
            None => None,
        };
        let n = hull.len();
        #[derive(Copy, Clone, PartialEq)]
        enum Pin {
            One,
            Zero,
            Free,
        }
        let mut pin = vec![Pin::Free; n];
        for id in 0..n as u32 {
            if hull.is_target(id) {
                pin[id as usize] = Pin::One;
            } else if !self.in_region(hull, id, constraint, anchor) {
                pin[id as usize] = Pin::Zero;
            }
        }
        let mut unknown_of = vec![usize::MAX; n];
        let mut unknown_ids: Vec<u32> =
            (0..n as u32).filter(|&i| pin[i as usize] == Pin::Free).collect();
        // deepest first: information flows rootward along cone exits
        unknown_ids.sort_by_key(|&i| (std::cmp::Reverse(hull.depth(i)), i));
        for (k, &id) in unknown_ids.iter().enumerate() {
            unknown_of[id as usize] = k;
        }
        let m = unknown_ids.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut rhs = vec![0.0; m];
        for (k, &id) in unknown_ids.iter().enumerate() {
            let raw = if hull.in_t(id) {
                self.kernel_row(hull, id)
            } else {
                self.boundary_row(hull, id)
            };
            for (dest, w) in raw {
                let Some(dest) = dest else { continue };
                match pin[dest as usize] {
                    Pin::One => rhs[k] += w,
                    Pin::Zero => {}
                    Pin::Free => rows[k].push((unknown_of[dest as usize], w)),
                }
            }
        }

        let mut h_unknown = vec![0.0; m];
        let residual;
        if m == 0 {
            residual = 0.0;
        } else if m <= self.opts.dense_cutoff {
            let mut a = DMatrix::<f64>::identity(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for k in 0..m {
                b[k] = rhs[k];
                for &(j, w) in &rows[k] {
                    a[(k, j)] -= w;
                }
            }
            let a2 = a.clone();
            let x = a.lu().solve(&b).ok_or(CapacityError::Solver { residual: f64::INFINITY })?;
            residual = (&a2 * &x - &b).amax();
            for k in 0..m {
                h_unknown[k] = x[k];
            }
        } else {
            // Gauss-Seidel from zero: monotone to the minimal solution
            let mut sweeps = 0usize;
            loop {
                let mut change: f64 = 0.0;
                for k in 0..m {
                    let mut v = rhs[k];
                    for &(j, w) in &rows[k] {
                        v += w * h_unknown[j];
                    }
                    change = change.max((v - h_unknown[k]).abs());
                    h_unknown[k] = v;
                }
                sweeps += 1;
                if change < self.opts.gs_tolerance {
                    break;
                }
                if sweeps >= self.opts.max_sweeps {
                    return Err(CapacityError::Solver { residual: change });
                }
            }
            let mut res: f64 = 0.0;
            for k in 0..m {
                let mut v = rhs[k];
                for &(j, w) in &rows[k] {
                    v += w * h_unknown[j];
                }
                res = res.max((v - h_unknown[k]).abs());
            }
            residual = res;
        }
        if residual > SOLVER_RESIDUAL_BOUND {
            return Err(CapacityError::Solver { residual });
        }

        let mut h = vec![0.0; n];
        for id in 0..n {
            h[id] = match pin[id] {
                Pin::One => 1.0,
                Pin::Zero => 0.0,
                Pin::Free => {
                    let v = h_unknown[unknown_of[id]];
                    if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                        return Err(CapacityError::Solver { residual: v.abs() });
                    }
                    v.clamp(0.0, 1.0)
                }
            };
        }
        Ok(EscapeSolution { h, residual, hull_size: n, unknowns: m })
    }

    /// Build and close a hull around `targets ∪ extra` (targets marked).
    pub fn hull_for(&self, targets: &[Word], extra: &[Word]) -> Result<Hull, CapacityError> {
        let mut hull = Hull::new();
        let mut sorted: Vec<&Word> = targets.iter().collect();
        sorted.sort();
        sorted.dedup();
        for w in sorted {
            let id = hull.intern_word(w);
            hull.mark_target(id);
        }
        let mut sorted: Vec<&Word> = extra.iter().collect();
        sorted.sort();
        sorted.dedup();
        for w in sorted {
            let id = hull.intern_word(w);
            hull.mark_t(id);
        }
        self.close_hull(&mut hull)?;
        Ok(hull)
    }

    /// `P_from[hit A under the constraint]`, hit position exempt from the
    /// region; `from ∈ A` gives 1.
    pub fn hitting_probability(
        &self,
        targets: &[Word],
        from: &Word,
        constraint: &ConeConstraint,
    ) -> Result<f64, CapacityError> {
        if targets.is_empty() {
            return Ok(0.0);
        }
        let mut extra = vec![from.clone()];
        if let Some(w) = constraint.anchor() {
            extra.push(w.clone());
        }
        let hull = self.hull_for(targets, &extra)?;
        let sol = self.solve(&hull, constraint)?;
        let mut cur = Hull::ROOT;
        for &l in from.letters() {
            cur = hull.child(cur, l).expect("start vertex interned");
        }
        Ok(sol.h[cur as usize])
    }

    /// One-step escape functional `1 − Σ_y p(x,y)·h(y)` at a hull word.
    pub fn escape_at(&self, hull: &Hull, sol: &EscapeSolution, id: u32) -> f64 {
        let mut hit = 0.0;
        for (dest, w) in self.kernel_row(hull, id) {
            if let Some(d) = dest {
                hit += w * sol.h[d as usize];
            }
        }
        1.0 - hit
    }

    /// Escape restricted to first steps that stay in the cone of `anchor`
    /// (the moves into the fresh copy attached at it).
    pub fn escape_staying_in_cone(&self, hull: &Hull, sol: &EscapeSolution, id: u32) -> f64 {
        let into = match hull.letter(id) {
            Some(l) => l.factor.other(),
            None => panic!("the root needs an explicit initial factor; use escape_into_factor"),
        };
        self.escape_into_factor(hull, sol, id, into)
    }

    /// Escape restricted to first steps that leave the cone of `anchor`
    /// (its within-factor moves).
    pub fn escape_leaving_cone(&self, hull: &Hull, sol: &EscapeSolution, id: u32) -> f64 {
        let l = hull.letter(id).expect("cone anchor is not the root");
        let t = hull.parent(id);
        let mut esc = 0.0;
        self.fp.factor(l.factor).for_each_transition(l.state, |s, p| {
            let dest = if s == ROOT_STATE {
                Some(t)
            } else {
                hull.child(t, Letter { factor: l.factor, state: s })
            };
            let h = dest.map(|d| sol.h[d as usize]).unwrap_or(0.0);
            esc += self.fp.alpha_for(l.factor) * p * (1.0 - h);
        });
        esc
    }

    /// Escape restricted to first steps from `id` into its attached copy of
    /// one factor.
    pub fn escape_into_factor(
        &self,
        hull: &Hull,
        sol: &EscapeSolution,
        id: u32,
        f: Factor,
    ) -> f64 {
        debug_assert!(hull.letter(id).map(|l| l.factor) != Some(f), "not the attached copy");
        let mut esc = 0.0;
        self.fp.factor(f).for_each_transition(ROOT_STATE, |s, p| {
            if s == ROOT_STATE {
                return;
            }
            let dest = hull.child(id, Letter { factor: f, state: s });
            let h = dest.map(|d| sol.h[d as usize]).unwrap_or(0.0);
            esc += self.fp.alpha_for(f) * p * (1.0 - h);
        });
        esc
    }

    /// `P_x[S_A = ∞]` for `x ∈ A` (first-return escape).
    pub fn escape_probability(&self, targets: &[Word], x: &Word) -> Result<f64, CapacityError> {
        if !targets.contains(x) {
            return Err(CapacityError::Precondition(
                "escape probability requires the start vertex to belong to the set".to_string(),
            ));
        }
        let hull = self.hull_for(targets, &[])?;
        let sol = self.solve(&hull, &ConeConstraint::Unconstrained)?;
        let mut cur = Hull::ROOT;
        for &l in x.letters() {
            cur = hull.child(cur, l).expect("set vertex interned");
        }
        Ok(self.escape_at(&hull, &sol, cur))
    }

    /// `Cap(A) = Σ_{x∈A} P_x[S_A = ∞]`, one hull and one solve for all rows.
    pub fn capacity(&self, targets: &[Word]) -> Result<f64, CapacityError> {
        Ok(self.capacity_detailed(targets)?.capacity)
    }

    pub fn capacity_detailed(&self, targets: &[Word]) -> Result<CapacityReport, CapacityError> {
        if targets.is_empty() {
            return Ok(CapacityReport {
                capacity: 0.0,
                per_vertex: Vec::new(),
                hull_size: 0,
                residual: 0.0,
            });
        }
        let hull = self.hull_for(targets, &[])?;
        let sol = self.solve(&hull, &ConeConstraint::Unconstrained)?;
        self.capacity_from_solution(&hull, &sol)
    }

    /// Capacity summed over the hull's target set from an existing solve.
    pub fn capacity_from_solution(
        &self,
        hull: &Hull,
        sol: &EscapeSolution,
    ) -> Result<CapacityReport, CapacityError> {
        let mut per_vertex = Vec::new();
        let mut total = 0.0;
        for id in hull.target_nodes() {
            let esc = self.escape_at(hull, sol, id);
            total += esc;
            per_vertex.push((id, esc));
        }
        Ok(CapacityReport {
            capacity: total,
            per_vertex,
            hull_size: sol.hull_size,
            residual: sol.residual,
        })
    }

    fn attachable(&self, set: &[Word], g: Letter) -> Result<(), CapacityError> {
        for w in set {
            if let Some(first) = w.first() {
                if first.factor == g.factor {
                    return Err(CapacityError::Precondition(
                        "set words must start in the factor opposite the attachment letter"
                            .to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `P_𝔤[S_{𝔤R} = ∞ and every later position stays in C(𝔤)]`, computed in
    /// normalized coordinates (the `𝔤`-shift is measure preserving).
    pub fn constrained_escape_u0(&self, set: &[Word], g: Letter) -> Result<f64, CapacityError> {
        if !set.contains(&Word::root()) {
            return Err(CapacityError::Precondition(
                "the normalized set must contain the root".to_string(),
            ));
        }
        self.attachable(set, g)?;
        let hull = self.hull_for(set, &[])?;
        let sol = self.solve(&hull, &ConeConstraint::Unconstrained)?;
        Ok(self.escape_into_factor(&hull, &sol, Hull::ROOT, g.factor.other()))
    }

    /// `P_{𝔤x₁}[S_{𝔤R} = ∞ and every later position stays outside C(𝔤x₁)]`,
    /// normalized coordinates.
    pub fn constrained_escape_u1(
        &self,
        set: &[Word],
        x1: &Word,
        g: Letter,
    ) -> Result<f64, CapacityError> {
        if !set.contains(x1) {
            return Err(CapacityError::Precondition(
                "the increment must belong to the normalized set".to_string(),
            ));
        }
        if x1.last() != Some(g) {
            return Err(CapacityError::Precondition(
                "the increment must end with the attachment letter".to_string(),
            ));
        }
        self.attachable(set, g)?;
        let hull = self.hull_for(set, &[])?;
        let sol = self.solve(&hull, &ConeConstraint::Unconstrained)?;
        let mut cur = Hull::ROOT;
        for &l in x1.letters() {
            cur = hull.child(cur, l).expect("set vertex interned");
        }
        Ok(self.escape_leaving_cone(&hull, &sol, cur))
    }

    /// Exact block capacity of a normalized regeneration block
    /// `(R, x₁)` attached by `𝔤`: interior escapes plus the two cone terms,
    /// all from one hull and one factorization.
    pub fn block_capacity(&self, set: &[Word], x1: &Word, g: Letter) -> Result<f64, CapacityError> {
        if !set.contains(&Word::root()) || !set.contains(x1) {
            return Err(CapacityError::Precondition(
                "a block set must contain the root and the increment".to_string(),
            ));
        }
        if x1.last() != Some(g) {
            return Err(CapacityError::Precondition(
                "the increment must end with the attachment letter".to_string(),
            ));
        }
        self.attachable(set, g)?;
        let hull = self.hull_for(set, &[])?;
        let sol = self.solve(&hull, &ConeConstraint::Unconstrained)?;
        let mut total = 0.0;
        for id in hull.target_nodes() {
            let w = hull.word(id);
            if w.is_root() || &w == x1 {
                continue;
            }
            total += self.escape_at(&hull, &sol, id);
        }
        total += self.escape_into_factor(&hull, &sol, Hull::ROOT, g.factor.other());
        let mut cur = Hull::ROOT;
        for &l in x1.letters() {
            cur = hull.child(cur, l).expect("set vertex interned");
        }
        total += self.escape_leaving_cone(&hull, &sol, cur);
        Ok(total)
    }
}

/// Capacity with per-vertex escape probabilities (by hull node id).
#[derive(Clone, Debug)]
pub struct CapacityReport {
    pub capacity: f64,
    pub per_vertex: Vec<(u32, f64)>,
    pub hull_size: usize,
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_word_compact;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn engine(fp: &FreeProduct) -> CapacityEngine<'_> {
        CapacityEngine::new(fp, &FixedPointConfig::default()).unwrap()
    }

    #[test]
    fn null_fixture_fails_the_gate() {
        let fp = fixtures::null_recurrent();
        assert!(matches!(
            CapacityEngine::new(&fp, &FixedPointConfig::default()),
            Err(CapacityError::NotTransient(_))
        ));
    }

    #[test]
    fn hull_for_root_only() {
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let hull = eng.hull_for(&[Word::root()], &[]).unwrap();
        // T = {o}; boundary = one-letter words reachable in one step: a, b
        assert_eq!(hull.t_nodes(), vec![0]);
        assert_eq!(hull.len(), 1 + 2 + 1); // a, b, plus sibling-closure c
    }

    #[test]
    fn hull_for_spec_example() {
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let ab = parse_word_compact(&fp, "1:a/2:b").unwrap();
        let ac = parse_word_compact(&fp, "1:a/2:c").unwrap();
        let hull = eng.hull_for(&[ab, ac], &[]).unwrap();
        let words: Vec<String> = (0..hull.len() as u32)
            .map(|i| crate::config::word_compact(&fp, &hull.word(i)))
            .collect();
        for t in ["o", "1:a", "1:a/2:b", "1:a/2:c"] {
            let id = words.iter().position(|w| w == t).unwrap();
            assert!(hull.in_t(id as u32), "{t} should be interior");
        }
        for b in ["2:b", "2:c", "1:a/2:b/1:a", "1:a/2:c/1:a"] {
            let id = words.iter().position(|w| w == b).expect(b);
            assert!(!hull.in_t(id as u32), "{b} should be boundary");
        }
        assert_eq!(hull.len(), 8);
    }

    #[test]
    fn hitting_is_one_on_the_set() {
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let a = parse_word_compact(&fp, "1:a").unwrap();
        let p = eng
            .hitting_probability(std::slice::from_ref(&a), &a, &ConeConstraint::Unconstrained)
            .unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn ray_never_returns() {
        let fp = fixtures::ray();
        let eng = engine(&fp);
        let g1 = parse_word_compact(&fp, "1:s1").unwrap();
        let p = eng
            .hitting_probability(&[Word::root()], &g1, &ConeConstraint::Unconstrained)
            .unwrap();
        assert_eq!(p, 0.0);
        assert_abs_diff_eq!(
            eng.escape_probability(std::slice::from_ref(&g1), &g1).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        assert_eq!(eng.capacity(&[]).unwrap(), 0.0);
    }

    #[test]
    fn capacity_is_bounded_by_cardinality() {
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let words: Vec<Word> = ["1:a", "1:a/2:b", "2:c", "2:c/1:a"]
            .iter()
            .map(|t| parse_word_compact(&fp, t).unwrap())
            .collect();
        let cap = eng.capacity(&words).unwrap();
        assert!(cap > 0.0 && cap <= words.len() as f64 + 1e-9);
    }

    #[test]
    fn monotone_in_targets() {
        // A ⊆ B ⇒ hitting(A) ≤ hitting(B) pointwise
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let a: Vec<Word> = [Word::root()].to_vec();
        let b: Vec<Word> =
            vec![Word::root(), parse_word_compact(&fp, "1:a").unwrap()];
        for from in ["2:b", "2:c/1:a", "1:a/2:b/1:a"] {
            let from = parse_word_compact(&fp, from).unwrap();
            let ha = eng.hitting_probability(&a, &from, &ConeConstraint::Unconstrained).unwrap();
            let hb = eng.hitting_probability(&b, &from, &ConeConstraint::Unconstrained).unwrap();
            assert!(ha <= hb + 1e-12, "{ha} vs {hb}");
        }
    }

    #[test]
    fn constraint_partition_at_cone_root() {
        // P_x[S_R=∞] splits into the stay-in and leave-never-reenter parts
        // when x ∈ R roots a cone
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let x = parse_word_compact(&fp, "1:a/2:b").unwrap();
        let set: Vec<Word> = vec![
            Word::root(),
            parse_word_compact(&fp, "1:a").unwrap(),
            x.clone(),
            parse_word_compact(&fp, "2:c").unwrap(),
        ];
        let hull = eng.hull_for(&set, &[]).unwrap();
        let sol = eng.solve(&hull, &ConeConstraint::Unconstrained).unwrap();
        let mut id = Hull::ROOT;
        for &l in x.letters() {
            id = hull.child(id, l).unwrap();
        }
        let full = eng.escape_at(&hull, &sol, id);
        let stay = eng.escape_staying_in_cone(&hull, &sol, id);
        let leave = eng.escape_leaving_cone(&hull, &sol, id);
        assert_abs_diff_eq!(full, stay + leave, epsilon = 1e-9);
    }

    #[test]
    fn constrained_solver_agrees_with_plain_when_gateway_is_target() {
        // leaving C(x) forces a hit at x ∈ A, so the StayIn(x) constraint is
        // vacuous for starts inside the cone
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let x = parse_word_compact(&fp, "1:a").unwrap();
        let set = vec![x.clone(), Word::root()];
        let from = parse_word_compact(&fp, "1:a/2:b").unwrap();
        let plain = eng
            .hitting_probability(&set, &from, &ConeConstraint::Unconstrained)
            .unwrap();
        let stay = eng
            .hitting_probability(&set, &from, &ConeConstraint::StayIn(x))
            .unwrap();
        assert_abs_diff_eq!(plain, stay, epsilon = 1e-11);
    }

    #[test]
    fn u0_and_u1_preconditions() {
        let fp = fixtures::ray();
        let eng = engine(&fp);
        let g = Letter::new(Factor::One, 1).unwrap();
        let h1 = parse_word_compact(&fp, "2:s1").unwrap();
        // R must contain o
        assert!(matches!(
            eng.constrained_escape_u0(std::slice::from_ref(&h1), g),
            Err(CapacityError::Precondition(_))
        ));
        // x1 must belong to R
        let x1 = parse_word_compact(&fp, "2:s1/1:s1").unwrap();
        assert!(matches!(
            eng.constrained_escape_u1(&[Word::root(), h1], &x1, g),
            Err(CapacityError::Precondition(_))
        ));
    }

    #[test]
    fn ray_block_terms() {
        // minimal real block on the ray: R = {o, h1, h1·g1}, increment h1·g1
        let fp = fixtures::ray();
        let eng = engine(&fp);
        let g = Letter::new(Factor::One, 1).unwrap();
        let h1 = parse_word_compact(&fp, "2:s1").unwrap();
        let x1 = parse_word_compact(&fp, "2:s1/1:s1").unwrap();
        let set = vec![Word::root(), h1.clone(), x1.clone()];
        // the only in-cone first step from the anchor hits the set
        let u0 = eng.constrained_escape_u0(&set, g).unwrap();
        assert_abs_diff_eq!(u0, 0.0, epsilon = 1e-14);
        // the deterministic sibling move leaves the increment's cone for good
        let u1 = eng.constrained_escape_u1(&set, &x1, g).unwrap();
        assert_abs_diff_eq!(u1, 0.5, epsilon = 1e-14);
        // block capacity: interior h1 contributes 1/2; total = duration/2 = 1
        let cap = eng.block_capacity(&set, &x1, g).unwrap();
        assert_abs_diff_eq!(cap, 1.0, epsilon = 1e-13);
        // spec'd artificial input: R = {o, h1} with anchor g1
        let u0 = eng.constrained_escape_u0(&[Word::root(), h1.clone()], g).unwrap();
        assert_abs_diff_eq!(u0, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn shift_invariance_of_anchored_block_capacity() {
        // the normalized-coordinates block computation must match a direct
        // computation on the w-shifted copy, with the cone terms anchored at
        // w and w·x1; the two go through genuinely different hulls
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let set: Vec<Word> = ["o", "2:b", "2:c", "2:b/1:a"]
            .iter()
            .map(|t| parse_word_compact(&fp, t).unwrap())
            .collect();
        let x1 = parse_word_compact(&fp, "2:b/1:a").unwrap();
        let g = x1.last().unwrap();
        let base = eng.block_capacity(&set, &x1, g).unwrap();

        for anchor in ["1:a", "2:c/1:a", "2:b/1:a/2:b/1:a"] {
            let w = parse_word_compact(&fp, anchor).unwrap();
            assert_eq!(w.last(), Some(g));
            let shifted: Vec<Word> = set.iter().map(|u| w.concat(u).unwrap()).collect();
            let hull = eng.hull_for(&shifted, &[]).unwrap();
            let sol = eng.solve(&hull, &ConeConstraint::Unconstrained).unwrap();
            let node_of = |word: &Word| {
                let mut cur = Hull::ROOT;
                for &l in word.letters() {
                    cur = hull.child(cur, l).unwrap();
                }
                cur
            };
            let wx1 = w.concat(&x1).unwrap();
            let mut direct = 0.0;
            for u in &shifted {
                if u == &w || u == &wx1 {
                    continue;
                }
                direct += eng.escape_at(&hull, &sol, node_of(u));
            }
            direct += eng.escape_staying_in_cone(&hull, &sol, node_of(&w));
            direct += eng.escape_leaving_cone(&hull, &sol, node_of(&wx1));
            assert_abs_diff_eq!(base, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn interior_escape_is_shift_invariant() {
        // for sets containing o, escape from a non-anchor vertex is invariant
        // under attaching the whole set below a longer prefix
        let fp = fixtures::example_a();
        let eng = engine(&fp);
        let set: Vec<Word> = ["o", "2:b", "2:c", "2:b/1:a"]
            .iter()
            .map(|t| parse_word_compact(&fp, t).unwrap())
            .collect();
        let w = parse_word_compact(&fp, "2:c/1:a").unwrap();
        let shifted: Vec<Word> = set.iter().map(|u| w.concat(u).unwrap()).collect();
        for interior in ["2:b", "2:c", "2:b/1:a"] {
            let x = parse_word_compact(&fp, interior).unwrap();
            let down = eng.escape_probability(&set, &x).unwrap();
            let up = eng
                .escape_probability(&shifted, &w.concat(&x).unwrap())
                .unwrap();
            assert_abs_diff_eq!(down, up, epsilon = 1e-12);
        }
    }
}
