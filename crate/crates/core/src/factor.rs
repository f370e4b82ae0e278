//! Rooted factor transition structures.
//!
//! A factor is a rooted set of states with a finitely supported probability
//! row per state. Explicit factors carry a full table; the built-in ray is an
//! infinite factor whose rows are produced on demand.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::word::{StateId, ROOT_STATE};

/// Tolerance for probability identities (row sums, distribution sums).
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("edge references state {0:?} equal to the root on both sides")]
    SelfRootEdge(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("edge weight {2} for {0} -> {1} is not a probability")]
    BadWeight(String, String, f64),
    #[error("unknown builtin factor {0:?}")]
    UnknownBuiltin(String),
}

#[derive(Clone, Debug)]
enum Rows {
    Explicit {
        /// `names[0]` is the root.
        names: Vec<String>,
        rows: Vec<Vec<(StateId, f64)>>,
    },
    /// One-way infinite path: `p(n, n+1) = 1`. States never step back, so
    /// the walk on this factor escapes deterministically.
    Ray,
}

/// A rooted transition structure on one free factor.
#[derive(Clone, Debug)]
pub struct FactorGraph {
    rows: Rows,
}

impl FactorGraph {
    /// Build an explicit factor from an edge list. State ids are interned
    /// deterministically: the root gets id 0, the remaining names get ids in
    /// lexicographic order, independent of edge order.
    pub fn explicit(root: &str, edges: &[(String, String, f64)]) -> Result<FactorGraph, FactorError> {
        let mut names: Vec<String> = Vec::new();
        for (x, y, _) in edges {
            for n in [x, y] {
                if n != root && !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        names.sort();
        names.insert(0, root.to_string());
        let id_of: HashMap<&str, StateId> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i as StateId)).collect();

        let mut rows: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); names.len()];
        for (x, y, p) in edges {
            let xi = id_of[x.as_str()];
            let yi = id_of[y.as_str()];
            if !(*p > 0.0 && *p <= 1.0) || !p.is_finite() {
                return Err(FactorError::BadWeight(x.clone(), y.clone(), *p));
            }
            if rows[xi as usize].iter().any(|(t, _)| *t == yi) {
                return Err(FactorError::DuplicateEdge(x.clone(), y.clone()));
            }
            rows[xi as usize].push((yi, *p));
        }
        for row in &mut rows {
            row.sort_by_key(|(t, _)| *t);
        }
        Ok(FactorGraph { rows: Rows::Explicit { names, rows } })
    }

    /// The one-way infinite ray.
    pub fn ray() -> FactorGraph {
        FactorGraph { rows: Rows::Ray }
    }

    /// Star with two leaves: the root moves to either leaf with probability
    /// 1/2, each leaf returns to the root.
    pub fn two_leaf_star() -> FactorGraph {
        FactorGraph::explicit(
            "o",
            &[
                ("o".into(), "l1".into(), 0.5),
                ("o".into(), "l2".into(), 0.5),
                ("l1".into(), "o".into(), 1.0),
                ("l2".into(), "o".into(), 1.0),
            ],
        )
        .expect("builtin factor is well-formed")
    }

    pub fn by_builtin_name(name: &str) -> Result<FactorGraph, FactorError> {
        match name {
            "ray" => Ok(FactorGraph::ray()),
            "two_leaf_star" => Ok(FactorGraph::two_leaf_star()),
            other => Err(FactorError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.rows, Rows::Explicit { .. })
    }

    /// Number of states for finite factors.
    pub fn state_count(&self) -> Option<usize> {
        match &self.rows {
            Rows::Explicit { names, .. } => Some(names.len()),
            Rows::Ray => None,
        }
    }

    /// Visit the finitely supported row of `state`.
    pub fn for_each_transition(&self, state: StateId, mut f: impl FnMut(StateId, f64)) {
        match &self.rows {
            Rows::Explicit { rows, .. } => {
                if let Some(row) = rows.get(state as usize) {
                    for (t, p) in row {
                        f(*t, *p);
                    }
                }
            }
            Rows::Ray => f(state + 1, 1.0),
        }
    }

    pub fn row_vec(&self, state: StateId) -> Vec<(StateId, f64)> {
        let mut v = Vec::new();
        self.for_each_transition(state, |t, p| v.push((t, p)));
        v
    }

    pub fn prob(&self, from: StateId, to: StateId) -> f64 {
        let mut p = 0.0;
        self.for_each_transition(from, |t, q| {
            if t == to {
                p = q;
            }
        });
        p
    }

    /// Sample the row of `state` with a uniform draw `u ∈ [0,1)`.
    pub fn sample_row(&self, state: StateId, u: f64) -> StateId {
        match &self.rows {
            Rows::Explicit { rows, .. } => {
                let row = &rows[state as usize];
                let mut acc = 0.0;
                for (t, p) in row {
                    acc += p;
                    if u < acc {
                        return *t;
                    }
                }
                row.last().map(|(t, _)| *t).unwrap_or(ROOT_STATE)
            }
            Rows::Ray => state + 1,
        }
    }

    /// All states within `radius` steps of the root.
    pub fn ball(&self, radius: usize) -> Vec<StateId> {
        match &self.rows {
            Rows::Explicit { names, rows } => {
                let mut seen = vec![false; names.len()];
                let mut frontier = vec![ROOT_STATE];
                seen[0] = true;
                let mut out = vec![ROOT_STATE];
                for _ in 0..radius {
                    let mut next = Vec::new();
                    for s in frontier {
                        for (t, _) in &rows[s as usize] {
                            if !seen[*t as usize] {
                                seen[*t as usize] = true;
                                out.push(*t);
                                next.push(*t);
                            }
                        }
                    }
                    frontier = next;
                }
                out.sort_unstable();
                out
            }
            Rows::Ray => (0..=radius as StateId).collect(),
        }
    }

    /// `true` when no state outside the ball of the given radius has a path
    /// back into it (or to the root). Truncations at such a radius are exact.
    pub fn escape_only_beyond(&self, _radius: StateId) -> bool {
        match &self.rows {
            Rows::Explicit { .. } => false,
            Rows::Ray => true,
        }
    }

    pub fn state_name(&self, state: StateId) -> String {
        match &self.rows {
            Rows::Explicit { names, .. } => names
                .get(state as usize)
                .cloned()
                .unwrap_or_else(|| format!("#{state}")),
            Rows::Ray => {
                if state == ROOT_STATE {
                    "o".to_string()
                } else {
                    format!("s{state}")
                }
            }
        }
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        match &self.rows {
            Rows::Explicit { names, .. } => {
                names.iter().position(|n| n == name).map(|i| i as StateId)
            }
            Rows::Ray => {
                if name == "o" {
                    Some(ROOT_STATE)
                } else {
                    name.strip_prefix('s').and_then(|d| d.parse().ok()).filter(|&s| s > 0)
                }
            }
        }
    }

    /// Non-root states reachable in one step from the root, ascending by name.
    pub fn root_successors_by_name(&self) -> Vec<StateId> {
        let mut v: Vec<StateId> = self
            .row_vec(ROOT_STATE)
            .into_iter()
            .filter(|&(t, p)| t != ROOT_STATE && p > 0.0)
            .map(|(t, _)| t)
            .collect();
        v.sort_by_key(|s| self.state_name(*s));
        v
    }

    /// Append admissibility violations of this factor to `out`.
    pub fn validate_into(&self, label: &str, out: &mut Vec<Violation>) {
        match &self.rows {
            Rows::Explicit { names, rows } => {
                if names.len() < 2 {
                    out.push(Violation::new(
                        ViolationKind::TooSmall,
                        format!("{label}: a factor needs at least two states"),
                    ));
                }
                for (s, row) in rows.iter().enumerate() {
                    let sum: f64 = row.iter().map(|(_, p)| p).sum();
                    if (sum - 1.0).abs() > PROB_TOL {
                        out.push(Violation::new(
                            ViolationKind::RowSum,
                            format!("{label}: row of state {:?} sums to {sum}", names[s]),
                        ));
                    }
                    if row.iter().any(|&(t, p)| t as usize == s && p > 0.0) {
                        out.push(Violation::new(
                            ViolationKind::SelfLoop,
                            format!("{label}: self-loop at state {:?}", names[s]),
                        ));
                    }
                }
                let reached = self.ball(names.len());
                if reached.len() < names.len() {
                    let missing: Vec<&str> = (0..names.len() as StateId)
                        .filter(|s| !reached.contains(s))
                        .map(|s| names[s as usize].as_str())
                        .collect();
                    out.push(Violation::new(
                        ViolationKind::Unreachable,
                        format!("{label}: states not reachable from the root: {missing:?}"),
                    ));
                }
            }
            // the ray is admissible by construction
            Rows::Ray => {}
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    RowSum,
    SelfLoop,
    Unreachable,
    TooSmall,
    TwoByTwo,
    AlphaRange,
}

/// One admissibility violation found by `FreeProduct::validate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, message: String) -> Violation {
        Violation { kind, message }
    }
}
