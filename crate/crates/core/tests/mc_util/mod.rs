//! Monte Carlo oracles shared by the integration tests. These realize the
//! walk law directly from the lifted-kernel definition (mixing weight plus
//! factor rows on a letter stack) and never touch the solver or the arena,
//! so agreement with the exact routines is a genuine cross-check.

use std::collections::HashSet;

use freewalk_core::word::{Factor, Letter, ROOT_STATE};
use freewalk_core::{FreeProduct, Word};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// One kernel step on a mutable letter stack.
pub fn mc_step(fp: &FreeProduct, pos: &mut Vec<Letter>, rng: &mut ChaCha12Rng) {
    let u: f64 = rng.random();
    let alpha = fp.alpha();
    let (factor, u_row) = if u < alpha {
        (Factor::One, u / alpha)
    } else {
        (Factor::Two, (u - alpha) / (1.0 - alpha))
    };
    let state = match pos.last() {
        Some(l) if l.factor == factor => {
            let s = l.state;
            pos.pop();
            s
        }
        _ => ROOT_STATE,
    };
    let dest = fp.factor(factor).sample_row(state, u_row);
    if dest != ROOT_STATE {
        pos.push(Letter { factor, state: dest });
    }
}

pub fn to_stack(w: &Word) -> Vec<Letter> {
    w.letters().to_vec()
}

/// Estimate `P_from[hit the target set]` by simulation. A walk counts as a
/// miss once its length exceeds every target by `escape_margin` letters (the
/// probability of returning from that depth is at most `ξ_max^escape_margin`).
pub fn mc_hit_probability(
    fp: &FreeProduct,
    targets: &HashSet<Vec<Letter>>,
    from: &Word,
    replicas: usize,
    escape_margin: usize,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let max_len = targets.iter().map(|t| t.len()).max().unwrap_or(0);
    let cutoff = max_len + escape_margin;
    let mut hits = 0usize;
    for _ in 0..replicas {
        let mut pos = to_stack(from);
        loop {
            mc_step(fp, &mut pos, rng);
            if targets.contains(&pos) {
                hits += 1;
                break;
            }
            if pos.len() > cutoff {
                break;
            }
        }
    }
    hits as f64 / replicas as f64
}

/// Three binomial standard errors plus a truncation allowance.
pub fn binomial_3sigma(p_hat: f64, replicas: usize) -> f64 {
    3.0 * (p_hat.max(1e-12) * (1.0 - p_hat).max(1e-12) / replicas as f64).sqrt() + 1e-4
}

pub fn word_set(words: &[Word]) -> HashSet<Vec<Letter>> {
    words.iter().map(to_stack).collect()
}
