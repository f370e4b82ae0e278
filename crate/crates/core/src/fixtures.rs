//! Built-in model fixtures used by the test suites and the `fixtures` CLI
//! subcommand.
//!
//! * `exampleA` — factor 1 is the two-state graph `o1 ↔ a`; factor 2 has
//!   states `{o2, b, c}` with `o2 → b`, `b → c`, and `c` splitting evenly
//!   between `o2` and `b`. Transient; the workhorse fixture.
//! * `null` — both factors are two-leaf stars. The word length performs a
//!   lazy reflected simple random walk, so the product walk is null
//!   recurrent: the Green function's radius of convergence is exactly 1.
//! * `ray` — both factors are one-way infinite rays; the walk never
//!   backtracks, every escape probability from a visited non-terminal vertex
//!   is 1/2, and all estimator targets are known in closed form.

use crate::config::{FactorSpec, ModelSpec};
use crate::model::FreeProduct;

pub const FIXTURE_NAMES: &[&str] = &["exampleA", "null", "ray"];

pub fn example_a_spec() -> ModelSpec {
    ModelSpec {
        factor1: FactorSpec::Explicit {
            root: "o1".to_string(),
            edges: vec![
                ("o1".to_string(), "a".to_string(), 1.0),
                ("a".to_string(), "o1".to_string(), 1.0),
            ],
        },
        factor2: FactorSpec::Explicit {
            root: "o2".to_string(),
            edges: vec![
                ("o2".to_string(), "b".to_string(), 1.0),
                ("b".to_string(), "c".to_string(), 1.0),
                ("c".to_string(), "o2".to_string(), 0.5),
                ("c".to_string(), "b".to_string(), 0.5),
            ],
        },
        alpha: 0.5,
    }
}

pub fn null_spec() -> ModelSpec {
    ModelSpec {
        factor1: FactorSpec::Builtin { name: "two_leaf_star".to_string() },
        factor2: FactorSpec::Builtin { name: "two_leaf_star".to_string() },
        alpha: 0.5,
    }
}

pub fn ray_spec() -> ModelSpec {
    ModelSpec {
        factor1: FactorSpec::Builtin { name: "ray".to_string() },
        factor2: FactorSpec::Builtin { name: "ray".to_string() },
        alpha: 0.5,
    }
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "exampleA" => Some(example_a_spec()),
        "null" => Some(null_spec()),
        "ray" => Some(ray_spec()),
        _ => None,
    }
}

pub fn example_a() -> FreeProduct {
    example_a_spec().build().expect("fixture is well-formed")
}

pub fn null_recurrent() -> FreeProduct {
    null_spec().build().expect("fixture is well-formed")
}

pub fn ray() -> FreeProduct {
    ray_spec().build().expect("fixture is well-formed")
}
