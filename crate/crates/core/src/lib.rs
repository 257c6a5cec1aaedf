//! Adaptive stochastic optimization (RSGD, RAdaGrad, RRMSProp, RAdam,
//! RAMSGrad) on embedded submanifolds of Euclidean space, with PCA and
//! low-rank matrix completion benchmarks and an experiment harness.

// `!(x > 0.0)` is deliberate: NaN must fail every positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod optim;
pub mod problems;
pub mod verify;

pub use error::{Error, Result};
pub use manifold::{Manifold, ManifoldKind, Point, Retraction, Tangent};
pub use optim::{BatchSchedule, Method, Optimizer, OptimizerSpec, StepSchedule};
pub use problems::{LrmcInstance, PcaInstance, Problem};
