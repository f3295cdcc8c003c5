//! Optimization under performative distribution shift.
//!
//! A model `θ` that is deployed changes the data it is later evaluated on:
//! samples come from `D(θ)`. This crate provides the pieces needed to
//! study that loop numerically:
//!
//! * loss models with exact gradients ([`models`]),
//! * distribution maps `θ ↦ D(θ)` ([`shifts`]),
//! * greedy-deploy optimizers with gradient-evaluation accounting
//!   ([`optim`]),
//! * estimators and checks for the constants and rates of the convergence
//!   theory ([`theory`]).
//!
//! ```
//! use perfopt::{LossModelSpec, ParamVector, Population, Problem, Sample, ShiftMap, ShiftSpec, SprintConfig};
//!
//! let base = vec![
//!     Sample::new(vec![1.0, 0.5], 1),
//!     Sample::new(vec![-1.0, 0.2], 0),
//!     Sample::new(vec![0.8, -0.4], 1),
//!     Sample::new(vec![-0.6, -0.9], 0),
//! ];
//! let pop = Population::new(base, 2)?;
//! let model = LossModelSpec::logistic(2).with_l2(1e-3);
//! let map = ShiftMap::new(ShiftSpec::strategic(0.1), 2)?;
//! let cfg = SprintConfig::constant(2, 50, 0.2, 7, perfopt::rng::streams::OPTIMIZER);
//! let out = perfopt::sprint_run(&cfg, Problem::new(&model, &map, &pop), &ParamVector::zeros(3))?;
//! assert_eq!(out.ifo_optimizer, 50 * (4 + 2 * 2));
//! assert!(out.final_grad_norm_sq < out.records[0].grad_norm_sq.unwrap());
//! # Ok::<(), perfopt::Error>(())
//! ```

pub mod error;
pub mod models;
pub mod optim;
pub mod param;
pub mod population;
pub mod rng;
pub mod shifts;
pub mod theory;

pub use error::{Error, Result};
pub use models::{accuracy, decoupled_risk, weighted_risk, LossModelSpec, ModelKind, RiskEvaluation};
pub use optim::{
    rgd_run, sgd_gd_run, sprint_run, corrected_direction, Logging, Problem, RunOutput, SgdGdConfig, SprintConfig,
    StepSchedule, TrajectoryRecord,
};
pub use param::{norm_sq, param_axpy, ParamVector};
pub use population::{Population, Sample};
pub use rng::RngStream;
pub use shifts::{deploy, ShiftKind, ShiftMap, ShiftSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/decoupled-risk.md")]
    mod decoupled_risk {}
    #[doc = include_str!("../../../book/src/sprint.md")]
    mod sprint {}
    #[doc = include_str!("../../../book/src/step-sizes.md")]
    mod step_sizes {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
