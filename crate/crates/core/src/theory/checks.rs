use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{weighted_risk, LossModelSpec};
use crate::optim::corrected_direction;
use crate::param::{norm_sq, ParamVector};
use crate::population::Population;
use crate::shifts::ShiftMap;

/// Slack allowed by [`risk_sensitivity_check`].
pub const RISK_SENSITIVITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCheck {
    /// `|J(θ;θ₁) − J(θ;θ₂)|`.
    pub lhs: f64,
    /// `L₀ε‖θ₁ − θ₂‖`.
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Checks `|J(θ;θ₁) − J(θ;θ₂)| ≤ L₀ε‖θ₁ − θ₂‖` with both risks evaluated
/// exactly over the law of `D(θᵢ)`.
#[allow(clippy::too_many_arguments)]
pub fn risk_sensitivity_check(
    model: &LossModelSpec,
    map: &ShiftMap,
    pop: &Population,
    theta: &ParamVector,
    theta1: &ParamVector,
    theta2: &ParamVector,
    l0: f64,
    eps: f64,
) -> Result<SensitivityCheck> {
    let j1 = map.induced_risk(model, theta, theta1, pop)?.value;
    let j2 = map.induced_risk(model, theta, theta2, pop)?.value;
    let lhs = (j1 - j2).abs();
    let rhs = l0 * eps * theta1.distance(theta2)?;
    let margin = lhs - rhs;
    Ok(SensitivityCheck {
        lhs,
        rhs,
        margin,
        pass: margin <= RISK_SENSITIVITY_SLACK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasIdentity {
    /// `‖E[v_k] − ∇J(θ_k;θ_k) + (∇J(θ̃;θ_k) − ∇J(θ̃;θ̃))‖`.
    pub residual: f64,
    /// `‖E[v_k] − ∇J(θ_k;θ_k)‖`, zero when `D` does not move.
    pub bias: f64,
    /// `‖∇J(θ̃;θ_k) − ∇J(θ̃;θ̃)‖`.
    pub predicted_bias: f64,
}

/// Exact expectation of the corrected direction over `z ~ D(θ_k)` against
/// the snapshot bias it should carry. Every gradient is an exact mean over
/// the law of the relevant distribution.
pub fn bias_identity(
    model: &LossModelSpec,
    map: &ShiftMap,
    pop: &Population,
    theta_k: &ParamVector,
    theta_snapshot: &ParamVector,
) -> Result<BiasIdentity> {
    let snapshot_grad = map.induced_risk(model, theta_snapshot, theta_snapshot, pop)?.gradient;
    let own = map.induced_risk(model, theta_k, theta_k, pop)?.gradient;
    let atoms = map.support(model, theta_k, pop)?;
    let cross = weighted_risk(model, theta_snapshot, atoms.iter().map(|(z, w)| (z, *w)))?.gradient;

    let mut expected = vec![0.0; model.dim()];
    for (z, w) in &atoms {
        let v = corrected_direction(model, theta_k, theta_snapshot, &snapshot_grad, z)?;
        for (e, x) in expected.iter_mut().zip(v.iter()) {
            *e += w * x;
        }
    }
    let expected = ParamVector::new(expected);
    let bias = expected.sub(&own)?;
    let predicted = cross.sub(&snapshot_grad)?;
    let residual = bias.iter().zip(predicted.iter()).map(|(b, p)| (b + p) * (b + p)).sum::<f64>().sqrt();
    Ok(BiasIdentity {
        residual,
        bias: norm_sq(&bias)?.sqrt(),
        predicted_bias: norm_sq(&predicted)?.sqrt(),
    })
}
