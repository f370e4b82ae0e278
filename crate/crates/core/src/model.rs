//! The free product of two rooted factors and its single-step kernel.
//!
//! The walk at a word `w` first picks factor 1 with weight `α` (factor 2 with
//! `1−α`) and then performs one step of that factor's chain inside the copy
//! `w` currently touches: within the copy of its last letter when the factor
//! matches, into the fresh copy attached at `w` otherwise. Stepping onto a
//! factor root contracts the word.

use serde::{Deserialize, Serialize};

use crate::factor::{FactorGraph, Violation, ViolationKind, PROB_TOL};
use crate::word::{Factor, Letter, Word, ROOT_STATE};

/// A free product `V1 * V2` with mixing weight `α ∈ (0,1)`.
#[derive(Clone, Debug)]
pub struct FreeProduct {
    factors: [FactorGraph; 2],
    alpha: f64,
}

/// One-step distribution from a word: successor words with probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    pub entries: Vec<(Word, f64)>,
}

impl StepDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob_of(&self, w: &Word) -> f64 {
        self.entries.iter().find(|(v, _)| v == w).map(|(_, p)| *p).unwrap_or(0.0)
    }
}

impl FreeProduct {
    pub fn new(factor1: FactorGraph, factor2: FactorGraph, alpha: f64) -> FreeProduct {
        FreeProduct { factors: [factor1, factor2], alpha }
    }

    pub fn factor(&self, f: Factor) -> &FactorGraph {
        &self.factors[f.idx()]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Mixing weight of one factor: `α` for factor 1, `1−α` for factor 2.
    pub fn alpha_for(&self, f: Factor) -> f64 {
        match f {
            Factor::One => self.alpha,
            Factor::Two => 1.0 - self.alpha,
        }
    }

    /// Admissibility report; the model is usable iff the report is empty.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(Violation::new(
                ViolationKind::AlphaRange,
                format!("alpha = {} must lie strictly inside (0,1)", self.alpha),
            ));
        }
        self.factors[0].validate_into("factor1", &mut out);
        self.factors[1].validate_into("factor2", &mut out);
        if self.factors[0].state_count() == Some(2) && self.factors[1].state_count() == Some(2) {
            out.push(Violation::new(
                ViolationKind::TwoByTwo,
                "both factors have exactly two states; the product walk is recurrent \
                 and all asymptotic quantities degenerate to zero"
                    .to_string(),
            ));
        }
        out
    }

    /// The copy of factor `f` that `w` touches: the state `w` occupies in it
    /// and the prefix the copy hangs from.
    fn copy_position(&self, w: &Word, f: Factor) -> (Word, u32) {
        match w.last() {
            Some(l) if l.factor == f => (w.parent().expect("non-root"), l.state),
            _ => (w.clone(), ROOT_STATE),
        }
    }

    /// Enumerate all one-step successors of `w` with their probabilities.
    pub fn step_distribution(&self, w: &Word) -> StepDistribution {
        let mut entries = Vec::new();
        for f in [Factor::One, Factor::Two] {
            let weight = self.alpha_for(f);
            let (prefix, state) = self.copy_position(w, f);
            self.factor(f).for_each_transition(state, |t, p| {
                let succ = if t == ROOT_STATE {
                    prefix.clone()
                } else {
                    prefix
                        .append(Letter { factor: f, state: t })
                        .expect("factor step preserves alternation")
                };
                entries.push((succ, weight * p));
            });
        }
        debug_assert!((StepDistribution { entries: entries.clone() }.total() - 1.0).abs() < PROB_TOL);
        StepDistribution { entries }
    }

    /// Probability of the single step `from → to` (0 when not adjacent).
    pub fn step_prob(&self, from: &Word, to: &Word) -> f64 {
        self.step_distribution(from).prob_of(to)
    }

    /// Probability of a path as a product of step probabilities.
    pub fn path_prob(&self, path: &[Word]) -> f64 {
        path.windows(2).map(|w| self.step_prob(&w[0], &w[1])).product()
    }

    /// The default regeneration letter: lexicographically smallest (by state
    /// name) factor-1 letter with positive mass from the factor-1 root.
    pub fn g_default(&self) -> Option<Letter> {
        self.factor(Factor::One)
            .root_successors_by_name()
            .first()
            .map(|&s| Letter { factor: Factor::One, state: s })
    }
}

/// Serializable handle naming one factor state, used in reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LetterName {
    pub factor: u8,
    pub state: String,
}
