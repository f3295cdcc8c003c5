//! Greedy-deploy optimizers with incremental-first-order-oracle (IFO)
//! accounting.
//!
//! All three methods redeploy the model before every sample they draw, so
//! the data they see always comes from `D(θ)` at the current iterate:
//!
//! * [`sgd_gd_run`]: one sample, one gradient per step.
//! * [`sprint_run`]: epochs of `m` corrected steps around a full-gradient
//!   snapshot; `n + 2m` gradients per epoch.
//! * [`rgd_run`]: one exact full gradient per step.
//!
//! Metric evaluations (`‖∇J(θ;θ)‖²` and `J(θ;θ)` under the exact law of
//! `D(θ)`) draw no randomness and are counted under `ifo_metrics`, never
//! under `ifo_optimizer`.

mod rgd;
mod sgd_gd;
mod sprint;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::LossModelSpec;
use crate::param::{norm_sq, ParamVector};
use crate::population::Population;
use crate::shifts::ShiftMap;

pub use rgd::rgd_run;
pub use sgd_gd::{sgd_gd_run, SgdGdConfig, StepSchedule};
pub use sprint::{sprint_run, corrected_direction, SprintConfig};

/// One row of an optimizer trajectory. Metrics describe the iterate
/// *before* the step taken at `iteration`; IFO counters are cumulative
/// after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub inner_k: usize,
    pub risk: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub step_size: f64,
    pub ifo_optimizer: u64,
    pub ifo_metrics: u64,
    pub wall_ms: Option<f64>,
}

/// How often metrics are evaluated and whether wall time is recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logging {
    /// Evaluate metrics when `iteration % every == 0`; `0` disables
    /// per-iteration metrics (the final iterate is always evaluated).
    pub every: usize,
    pub wall_clock: bool,
}

impl Logging {
    pub fn every(every: usize) -> Self {
        Logging {
            every,
            wall_clock: false,
        }
    }

    fn due(&self, iteration: usize) -> bool {
        self.every > 0 && iteration.is_multiple_of(self.every)
    }
}

impl Default for Logging {
    fn default() -> Self {
        Logging::every(1)
    }
}

/// The model, distribution map and base population an optimizer runs on.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a LossModelSpec,
    pub map: &'a ShiftMap,
    pub pop: &'a Population,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a LossModelSpec, map: &'a ShiftMap, pop: &'a Population) -> Self {
        Problem { model, map, pop }
    }

    /// `(J(θ;θ), ‖∇J(θ;θ)‖², cost)` under the exact law of `D(θ)`.
    pub fn own_metrics(&self, theta: &ParamVector) -> Result<(f64, f64, u64)> {
        let eval = self.map.induced_risk(self.model, theta, theta, self.pop)?;
        Ok((eval.value, norm_sq(&eval.gradient)?, eval.ifo_cost))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub final_theta: ParamVector,
    pub final_risk: f64,
    pub final_grad_norm_sq: f64,
    pub ifo_optimizer: u64,
    pub ifo_metrics: u64,
}

/// Shared bookkeeping for the three optimizers.
struct Tracker<'a> {
    problem: Problem<'a>,
    logging: Logging,
    start: Instant,
    records: Vec<TrajectoryRecord>,
    ifo_optimizer: u64,
    ifo_metrics: u64,
}

impl<'a> Tracker<'a> {
    fn new(problem: Problem<'a>, logging: Logging, capacity: usize) -> Self {
        Tracker {
            problem,
            logging,
            start: Instant::now(),
            records: Vec::with_capacity(capacity),
            ifo_optimizer: 0,
            ifo_metrics: 0,
        }
    }

    fn metrics(&mut self, iteration: usize, theta: &ParamVector) -> Result<(Option<f64>, Option<f64>)> {
        if !self.logging.due(iteration) {
            return Ok((None, None));
        }
        let (risk, g2, cost) = self.problem.own_metrics(theta)?;
        self.ifo_metrics += cost;
        Ok((Some(risk), Some(g2)))
    }

    fn push(&mut self, iteration: usize, epoch: usize, inner_k: usize, metrics: (Option<f64>, Option<f64>), step_size: f64) {
        let wall_ms = self
            .logging
            .wall_clock
            .then(|| self.start.elapsed().as_secs_f64() * 1e3);
        self.records.push(TrajectoryRecord {
            iteration,
            epoch,
            inner_k,
            risk: metrics.0,
            grad_norm_sq: metrics.1,
            step_size,
            ifo_optimizer: self.ifo_optimizer,
            ifo_metrics: self.ifo_metrics,
            wall_ms,
        });
    }

    fn finish(mut self, final_theta: ParamVector) -> Result<RunOutput> {
        let (final_risk, final_grad_norm_sq, cost) = self.problem.own_metrics(&final_theta)?;
        self.ifo_metrics += cost;
        Ok(RunOutput {
            records: self.records,
            final_theta,
            final_risk,
            final_grad_norm_sq,
            ifo_optimizer: self.ifo_optimizer,
            ifo_metrics: self.ifo_metrics,
        })
    }
}
