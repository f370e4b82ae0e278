//! Random walks on free products of two rooted graphs: exact escape
//! probabilities and capacities of finite word sets via finite hull systems,
//! generating functions by monotone fixed-point iteration, and regenerative
//! Monte Carlo estimation of the asymptotic capacity of the range, its CLT
//! variance, the rate of escape and the asymptotic range.

#![forbid(unsafe_code)]

pub mod capacity;
pub mod config;
pub mod estimators;
pub mod factor;
pub mod fixtures;
pub mod genfun;
pub mod model;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod word;

pub use capacity::{CapacityEngine, CapacityError, ConeConstraint, Hull};
pub use config::{ModelSpec, RunConfig};
pub use estimators::{EstimateReport, EstimatorError};
pub use factor::{FactorGraph, Violation, ViolationKind};
pub use genfun::{FixedPointConfig, GenFunError, RadiusBracket, ReturnWeights};
pub use model::{FreeProduct, StepDistribution};
pub use sim::{RegenBlock, Trajectory, WalkSeed};
pub use word::{cone_contains, Factor, Letter, Word};
