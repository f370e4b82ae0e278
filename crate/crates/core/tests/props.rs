//! Property tests of the word algebra and the step kernel.

use freewalk_core::word::{cone_contains, Factor, Letter, Word};
use freewalk_core::{fixtures, FreeProduct};
use proptest::prelude::*;

/// A random valid word over FIX-A's alphabet, by index sequences.
fn arb_word() -> impl Strategy<Value = Word> {
    proptest::collection::vec((0u8..2, 1u32..3), 0..12).prop_map(|pairs| {
        let mut w = Word::root();
        for (f, s) in pairs {
            let factor = if f == 0 { Factor::One } else { Factor::Two };
            let factor = if w.word_type() == Some(factor) { factor.other() } else { factor };
            let state = if factor == Factor::One { 1 } else { s.min(2) };
            w = w.append(Letter::new(factor, state).unwrap()).unwrap();
        }
        w
    })
}

fn fix_a() -> FreeProduct {
    fixtures::example_a()
}

proptest! {
    #[test]
    fn cone_membership_iff_common_prefix(x in arb_word(), y in arb_word()) {
        prop_assert_eq!(cone_contains(&x, &y), x.common_prefix(&y) == x);
        // the root's cone is everything
        prop_assert!(cone_contains(&Word::root(), &y));
    }

    #[test]
    fn append_then_parent_round_trips(w in arb_word()) {
        let letter = match w.word_type() {
            Some(Factor::One) => Letter::new(Factor::Two, 1).unwrap(),
            _ => Letter::new(Factor::One, 1).unwrap(),
        };
        let extended = w.append(letter).unwrap();
        prop_assert_eq!(extended.parent().unwrap(), w.clone());
        prop_assert_eq!(extended.len(), w.len() + 1);
        // appending a same-factor letter must fail
        if let Some(t) = extended.word_type() {
            let bad = Letter::new(t, 1).unwrap();
            prop_assert!(extended.append(bad).is_err());
        }
    }

    #[test]
    fn step_distribution_is_a_neighbouring_law(w in arb_word()) {
        let fp = fix_a();
        let d = fp.step_distribution(&w);
        let total = d.total();
        prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
        for (succ, p) in &d.entries {
            prop_assert!(*p > 0.0);
            prop_assert_ne!(succ, &w);
            let dl = succ.len() as i64 - w.len() as i64;
            prop_assert!(dl.abs() <= 1);
        }
    }

    #[test]
    fn paths_inside_cones_shift_exactly(seed in 0u64..5_000, anchor in arb_word()) {
        // build a short random path from o, then compare its probability
        // with the same path attached under any compatible anchor
        let fp = fix_a();
        let mut rng_state = seed;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64
        };
        let mut path = vec![Word::root()];
        for _ in 0..8 {
            let d = fp.step_distribution(path.last().unwrap());
            let u = next() * d.total();
            let mut acc = 0.0;
            let mut chosen = d.entries[0].0.clone();
            for (succ, p) in &d.entries {
                acc += p;
                if u < acc {
                    chosen = succ.clone();
                    break;
                }
            }
            path.push(chosen);
        }
        let p0 = fp.path_prob(&path);
        prop_assert!(p0 > 0.0);
        // anchor must not collide with the path's first letters
        let shifted: Option<Vec<Word>> =
            path.iter().map(|w| anchor.concat(w).ok()).collect();
        if let Some(shifted) = shifted {
            let p1 = fp.path_prob(&shifted);
            prop_assert!((p0 - p1).abs() <= 1e-15, "{} vs {}", p0, p1);
        }
    }
}
