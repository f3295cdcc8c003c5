//! Brute-force oracles: central finite differences against the analytic
//! per-sample gradient, and the exact snapshot-bias expectation.

use perfopt::rng::{streams, RngStream};
use perfopt::theory::{bias_identity, random_pair};
use perfopt::{LossModelSpec, ParamVector, Sample};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::run::prepare;

pub const FD_STEP: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const BIAS_TOL: f64 = 1e-12;

/// `‖g − ĝ‖ / max(‖g‖, 1e-6)` with `ĝ` the central difference.
pub fn fd_relative_error(model: &LossModelSpec, theta: &ParamVector, z: &Sample) -> Result<f64> {
    let g = model.grad(theta, z)?;
    let mut probe = theta.clone();
    let mut err = 0.0;
    for i in 0..theta.len() {
        let x = theta.as_slice()[i];
        probe.as_mut_slice()[i] = x + FD_STEP;
        let up = model.loss(&probe, z)?;
        probe.as_mut_slice()[i] = x - FD_STEP;
        let down = model.loss(&probe, z)?;
        probe.as_mut_slice()[i] = x;
        let fd = (up - down) / (2.0 * FD_STEP);
        err += (g.as_slice()[i] - fd).powi(2);
    }
    let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
    Ok(err.sqrt() / scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub gradient_trials: usize,
    pub gradient_max_rel_error: f64,
    pub bias_trials: usize,
    pub bias_max_residual: f64,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.gradient_max_rel_error < GRADIENT_TOL && self.bias_max_residual < BIAS_TOL
    }
}

/// Finite-difference checks at `gradient_trials` random `(θ, z)` pairs
/// (θ drawn from the model's initializer, z from the base population) and
/// the exact snapshot-bias identity at `bias_trials` random pairs.
pub fn run_oracles(cfg: &ExperimentConfig, gradient_trials: usize, bias_trials: usize) -> Result<OracleReport> {
    let seed = cfg.seeds[0];
    let p = prepare(cfg, seed)?;
    let root = RngStream::new(seed, streams::THEORY).substream(32);
    let mut rng = root.substream(0);
    let mut worst = 0.0f64;
    for _ in 0..gradient_trials {
        let theta = p.model.init(&mut rng);
        let z = &p.pop.base[rng.index(p.pop.len())];
        worst = worst.max(fd_relative_error(&p.model, &theta, z)?);
    }
    let mut rng = root.substream(1);
    let mut residual = 0.0f64;
    for trial in 0..bias_trials {
        let (a, b) = random_pair(p.model.dim(), cfg.theory.probe_radius, trial, &mut rng);
        residual = residual.max(bias_identity(&p.model, &p.map, &p.pop, &a, &b)?.residual);
    }
    Ok(OracleReport {
        gradient_trials,
        gradient_max_rel_error: worst,
        bias_trials,
        bias_max_residual: residual,
    })
}
