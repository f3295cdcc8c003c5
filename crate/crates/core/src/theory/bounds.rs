use serde::{Deserialize, Serialize};

use super::constants::ConstantsEstimate;
use crate::optim::TrajectoryRecord;

/// Both sides of the SGD-GD descent bound
///
/// ```text
/// Σ (γ_{t+1}/4) ‖∇J(θ_t;θ_t)‖²
///   ≤ Δ₀ + Lε(σ₀ + (1+σ₁²)L₀ε) Σ γ_{t+1} + (L/2) σ₀² Σ γ²_{t+1}
/// ```
///
/// evaluated on a logged trajectory. Informational only: the constants
/// are estimates and the bound is loose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    /// Initial risk minus the lower bound `0` on a nonnegative loss.
    pub delta0: f64,
    pub sensitivity_term: f64,
    pub variance_term: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// When metrics are logged every `k` iterations, each logged value stands
/// for the `k` iterations up to the next logged one. With a zero step
/// size everywhere, nothing moves and both sides are reported as zero.
pub fn sgdgd_bound_report(records: &[TrajectoryRecord], constants: &ConstantsEstimate) -> BoundReport {
    let sum_gamma: f64 = records.iter().map(|r| r.step_size).sum();
    if records.is_empty() || sum_gamma == 0.0 {
        return BoundReport {
            lhs: 0.0,
            delta0: 0.0,
            sensitivity_term: 0.0,
            variance_term: 0.0,
            rhs: 0.0,
            holds: true,
        };
    }
    let sum_gamma_sq: f64 = records.iter().map(|r| r.step_size * r.step_size).sum();

    let logged: Vec<usize> = (0..records.len()).filter(|&i| records[i].grad_norm_sq.is_some()).collect();
    let mut lhs = 0.0;
    for (j, &i) in logged.iter().enumerate() {
        let end = logged.get(j + 1).copied().unwrap_or(records.len());
        let g = records[i].grad_norm_sq.unwrap_or(0.0);
        let steps: f64 = records[i..end].iter().map(|r| r.step_size).sum();
        lhs += steps / 4.0 * g;
    }

    let ConstantsEstimate {
        smoothness: l,
        loss_lipschitz: l0,
        sensitivity: eps,
        variance_floor: s0,
        variance_growth: s1,
        ..
    } = *constants;
    let delta0 = records[0].risk.unwrap_or(0.0).max(0.0);
    let sensitivity_term = l * eps * (s0 + (1.0 + s1 * s1) * l0 * eps) * sum_gamma;
    let variance_term = l / 2.0 * s0 * s0 * sum_gamma_sq;
    let rhs = delta0 + sensitivity_term + variance_term;
    BoundReport {
        lhs,
        delta0,
        sensitivity_term,
        variance_term,
        rhs,
        holds: lhs <= rhs,
    }
}
