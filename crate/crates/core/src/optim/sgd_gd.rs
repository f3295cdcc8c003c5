use serde::{Deserialize, Serialize};

use super::{Logging, Problem, RunOutput, Tracker};
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant(f64),
    /// `γ_t = 1/√T` for a run of `T` rounds.
    InvSqrt,
}

impl StepSchedule {
    pub fn step(&self, total_rounds: usize) -> f64 {
        match *self {
            StepSchedule::Constant(g) => g,
            StepSchedule::InvSqrt => 1.0 / (total_rounds as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdGdConfig {
    pub total_rounds: usize,
    pub step: StepSchedule,
    pub seed: u64,
    pub stream_id: u64,
    pub logging: Logging,
}

impl SgdGdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 {
            return Err(Error::invalid("total_rounds", "must be at least 1"));
        }
        let g = self.step.step(self.total_rounds);
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::invalid("step", "step size must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Greedy-deploy SGD: at every round deploy `θ_t`, draw one sample from
/// `D(θ_t)` and step along its gradient.
pub fn sgd_gd_run(cfg: &SgdGdConfig, problem: Problem<'_>, theta0: &ParamVector) -> Result<RunOutput> {
    cfg.validate()?;
    theta0.check_len(problem.model.dim(), "theta0")?;
    theta0.check_finite("theta0")?;
    let mut rng = RngStream::new(cfg.seed, cfg.stream_id);
    let mut tracker = Tracker::new(problem, cfg.logging, cfg.total_rounds);
    let mut theta = theta0.clone();
    let mut grad = vec![0.0; theta.len()];

    for t in 0..cfg.total_rounds {
        let metrics = tracker.metrics(t, &theta)?;
        let gamma = cfg.step.step(cfg.total_rounds);
        let z = problem.map.draw(problem.model, &theta, problem.pop, &mut rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        problem.model.accumulate(&theta, &z, 1.0, &mut grad)?;
        tracker.ifo_optimizer += 1;
        for (th, g) in theta.as_mut_slice().iter_mut().zip(&grad) {
            *th -= gamma * g;
        }
        if theta.first_non_finite().is_some() {
            return Err(Error::Diverged { iteration: t });
        }
        tracker.push(t, 0, t, metrics, gamma);
    }
    tracker.finish(theta)
}
