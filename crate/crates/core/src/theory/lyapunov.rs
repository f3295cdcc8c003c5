//! Step-size selection from the Lyapunov recursion
//!
//! ```text
//! c_k = ½γ + A·c_{k+1} + B,   c_m = 0
//! A   = 1 + γβ + 2L₀εγ + (4L² + 2L₀²ε²)γ²
//! B   = (2L² + L₀²ε²)Lγ² + (β/2)L₀εγ
//! Γ_k = γ − (c_{k+1}γ + ½L₀εγ)/β − 2Lγ² − 4c_{k+1}γ²
//! ```
//!
//! with `β = 4L + (4/3)L₀ε`. A step size is accepted when `Γ_k > γ/4` for
//! every `k` and, for `ε > 0`, every `c_k` stays under the ceiling
//! `η₀L₀ε = (4L + ⅓L₀ε)/6`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest step size the selector will try before giving up.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Inflation applied to estimated `L` and `L₀` before selecting a step.
pub const SAFETY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSchedule {
    pub m: usize,
    pub beta: f64,
    pub gamma: f64,
    /// `c_0 … c_m`, with `c_m = 0`.
    pub c: Vec<f64>,
    /// `min_k (Γ_k − γ/4)`.
    #[serde(rename = "Gamma_min")]
    pub gamma_min: f64,
}

/// Constants entering the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants {
    pub l: f64,
    pub l0: f64,
    pub eps: f64,
}

impl LyapunovConstants {
    pub fn new(l: f64, l0: f64, eps: f64) -> Self {
        LyapunovConstants { l, l0, eps }
    }

    pub fn beta(&self) -> f64 {
        4.0 * self.l + 4.0 / 3.0 * self.l0 * self.eps
    }

    /// `(A, B)` for step `γ`.
    pub fn coefficients(&self, beta: f64, gamma: f64) -> (f64, f64) {
        let LyapunovConstants { l, l0, eps } = *self;
        let le = l0 * eps;
        let a = 1.0 + gamma * beta + 2.0 * le * gamma + (4.0 * l * l + 2.0 * le * le) * gamma * gamma;
        let b = (2.0 * l * l + le * le) * l * gamma * gamma + beta / 2.0 * le * gamma;
        (a, b)
    }

    /// Backward recursion from `c_m = 0`; returns `c_0 … c_m`.
    pub fn recursion(&self, beta: f64, gamma: f64, m: usize) -> Vec<f64> {
        let (a, b) = self.coefficients(beta, gamma);
        let mut c = vec![0.0; m + 1];
        for k in (0..m).rev() {
            c[k] = 0.5 * gamma + a * c[k + 1] + b;
        }
        c
    }

    /// `Γ_k` given `c_{k+1}`.
    pub fn big_gamma(&self, beta: f64, gamma: f64, c_next: f64) -> f64 {
        let num = c_next * gamma + 0.5 * self.l0 * self.eps * gamma;
        let ratio = if beta > 0.0 {
            num / beta
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        gamma - ratio - 2.0 * self.l * gamma * gamma - 4.0 * c_next * gamma * gamma
    }

    /// `η₀L₀ε`, or `None` when `ε = 0` and the ceiling does not apply.
    pub fn c_ceiling(&self) -> Option<f64> {
        (self.eps > 0.0 && self.l0 > 0.0).then(|| (4.0 * self.l + self.l0 * self.eps / 3.0) / 6.0)
    }

    /// First step size of the halving search.
    pub fn initial_gamma(&self) -> f64 {
        let denom = 8.0 * self.l + 8.0 / 3.0 * self.l0 * self.eps;
        if denom > 0.0 {
            (1.0 / denom).min(1.0)
        } else {
            1.0
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("L", self.l), ("L0", self.l0), ("eps", self.eps)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Evaluates a candidate `γ`; `Some(schedule)` if accepted.
    pub fn try_gamma(&self, gamma: f64, m: usize) -> Option<LyapunovSchedule> {
        let beta = self.beta();
        let c = self.recursion(beta, gamma, m);
        if c.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let gamma_min = (0..m)
            .map(|k| self.big_gamma(beta, gamma, c[k + 1]) - gamma / 4.0)
            .fold(f64::INFINITY, f64::min);
        if gamma_min.is_nan() || gamma_min <= 0.0 {
            return None;
        }
        if let Some(ceiling) = self.c_ceiling() {
            if c.iter().any(|v| *v > ceiling) {
                return None;
            }
        }
        Some(LyapunovSchedule {
            m,
            beta,
            gamma,
            c,
            gamma_min,
        })
    }
}

/// Halving search for the largest accepted constant step size.
pub fn lyapunov_schedule(l: f64, l0: f64, eps: f64, m: usize) -> Result<LyapunovSchedule> {
    let k = LyapunovConstants::new(l, l0, eps);
    k.validate()?;
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    let mut gamma = k.initial_gamma();
    while gamma >= GAMMA_FLOOR {
        if let Some(s) = k.try_gamma(gamma, m) {
            return Ok(s);
        }
        gamma *= 0.5;
    }
    Err(Error::NoAcceptedStepSize { floor: GAMMA_FLOOR })
}

/// Same search on estimated constants, with `L` and `L₀` inflated by
/// [`SAFETY_FACTOR`].
pub fn lyapunov_schedule_estimated(l_hat: f64, l0_hat: f64, sensitivity: f64, m: usize) -> Result<LyapunovSchedule> {
    lyapunov_schedule(SAFETY_FACTOR * l_hat, SAFETY_FACTOR * l0_hat, sensitivity, m)
}

/// Worst violation found when re-checking a schedule against its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAudit {
    /// `max_k |c_k − (½γ + A·c_{k+1} + B)|`.
    pub recursion_residual: f64,
    pub terminal: f64,
    /// `min_k (Γ_k − γ/4)`, recomputed.
    pub gamma_margin: f64,
    /// `max_k c_k − η₀L₀ε` (negative is good); `None` when `ε = 0`.
    pub ceiling_margin: Option<f64>,
}

impl ScheduleAudit {
    pub fn holds(&self, tol: f64) -> bool {
        self.recursion_residual <= tol
            && self.terminal == 0.0
            && self.gamma_margin > 0.0
            && self.ceiling_margin.is_none_or(|m| m <= 0.0)
    }
}

/// Forward re-verification of a schedule, independent of the search.
pub fn audit_schedule(schedule: &LyapunovSchedule, l: f64, l0: f64, eps: f64) -> ScheduleAudit {
    let k = LyapunovConstants::new(l, l0, eps);
    let g = schedule.gamma;
    let beta = 4.0 * l + 4.0 / 3.0 * l0 * eps;
    let le = l0 * eps;
    let a = 1.0 + g * beta + 2.0 * le * g + (4.0 * l * l + 2.0 * le * le) * g * g;
    let b = (2.0 * l * l + le * le) * l * g * g + beta / 2.0 * le * g;
    let c = &schedule.c;
    let m = schedule.m;
    let mut residual: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for i in 0..m {
        residual = residual.max((c[i] - (0.5 * g + a * c[i + 1] + b)).abs());
        margin = margin.min(k.big_gamma(beta, g, c[i + 1]) - g / 4.0);
    }
    let ceiling_margin = k
        .c_ceiling()
        .map(|ceil| c.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v)) - ceil);
    ScheduleAudit {
        recursion_residual: residual,
        terminal: c[m],
        gamma_margin: margin,
        ceiling_margin,
    }
}
