//! Theory report for a config: estimated constants, the step-size schedule
//! and its audit, and numeric checks of the sensitivity inequality and the
//! snapshot bias.

use std::fmt;

use perfopt::rng::{streams, RngStream};
use perfopt::theory::{
    audit_schedule, bias_identity, estimate_constants, risk_sensitivity_check, logistic_loss_lipschitz, random_pair,
    ConstantsEstimate, ScheduleAudit,
};
use perfopt::{ModelKind, ShiftKind};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::run::{choose_step, prepare, StepReport};

/// Tolerance for the schedule audit's recursion residual.
pub const AUDIT_TOL: f64 = 1e-12;
/// Snapshot-bias pairs evaluated by [`theory_check`].
pub const BIAS_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub constants: ConstantsEstimate,
    pub step: StepReport,
    pub audit: Option<ScheduleAudit>,
    /// `"closed_form"` when the check used the exact loss Lipschitz
    /// constant and the designed sensitivity, `"estimated"` otherwise.
    pub sensitivity_constants: String,
    pub sensitivity_trials: usize,
    pub sensitivity_failures: usize,
    /// Largest `lhs − rhs` over the trials.
    pub sensitivity_worst_margin: f64,
    pub bias_pairs: usize,
    /// Largest deviation from the predicted snapshot bias.
    pub bias_max_residual: f64,
    pub bias_max: f64,
}

impl CheckReport {
    pub fn audit_holds(&self) -> bool {
        self.audit.as_ref().is_none_or(|a| a.holds(AUDIT_TOL))
    }
}

/// Runs the theory suite on the first configured seed.
pub fn theory_check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let seed = cfg.seeds[0];
    let p = prepare(cfg, seed)?;
    let t = &cfg.theory;
    let constants = estimate_constants(&p.model, &p.map, &p.pop, t.probe(), t.variance_pairs, seed)?;
    let step = choose_step(cfg, p.pop.len(), &constants)?;
    let audit = match (&step.schedule, step.selector_constants) {
        (Some(s), Some([l, l0, eps])) => Some(audit_schedule(s, l, l0, eps)),
        _ => None,
    };

    let root = RngStream::new(seed, streams::THEORY).substream(16);
    let mut rng = root.substream(0);
    let closed_form = p.model.kind == ModelKind::LogisticBinary && cfg.shift.kind == ShiftKind::GaussianMeanShift;
    let dim = p.model.dim();
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..t.check_trials {
        let theta = random_pair(dim, t.probe_radius, 0, &mut rng).0;
        let (a, b) = random_pair(dim, t.probe_radius, trial, &mut rng);
        let (l0, eps) = if closed_form {
            (logistic_loss_lipschitz(&p.model, &theta)?, cfg.shift.epsilon_nominal)
        } else {
            (constants.loss_lipschitz, constants.sensitivity)
        };
        let out = risk_sensitivity_check(&p.model, &p.map, &p.pop, &theta, &a, &b, l0, eps)?;
        worst = worst.max(out.margin);
        failures += usize::from(!out.pass);
    }

    let mut rng = root.substream(1);
    let (mut residual, mut bias) = (0.0f64, 0.0f64);
    for trial in 0..BIAS_PAIRS {
        let (theta_k, snapshot) = random_pair(dim, t.probe_radius, trial, &mut rng);
        let b = bias_identity(&p.model, &p.map, &p.pop, &theta_k, &snapshot)?;
        residual = residual.max(b.residual);
        bias = bias.max(b.bias);
    }

    Ok(CheckReport {
        seed,
        constants,
        step,
        audit,
        sensitivity_constants: if closed_form { "closed_form" } else { "estimated" }.to_string(),
        sensitivity_trials: t.check_trials,
        sensitivity_failures: failures,
        sensitivity_worst_margin: if t.check_trials > 0 { worst } else { 0.0 },
        bias_pairs: BIAS_PAIRS,
        bias_max_residual: residual,
        bias_max: bias,
    })
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.constants;
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "constants ({} probe pairs)", c.trial_count)?;
        writeln!(f, "  smoothness        L   = {:e}", c.smoothness)?;
        writeln!(f, "  loss lipschitz    L0  = {:e}", c.loss_lipschitz)?;
        writeln!(f, "  sensitivity       eps = {:e}", c.sensitivity)?;
        writeln!(f, "  variance          floor = {:e}, growth = {:e} (least-squares cover)", c.variance_floor, c.variance_growth)?;
        writeln!(f, "step size: {:?}, m = {}, gamma = {:e}", self.step.rule, self.step.epoch_length, self.step.gamma)?;
        if let (Some(s), Some(a)) = (&self.step.schedule, &self.audit) {
            writeln!(f, "  beta = {:e}, min Gamma_k = {:e}", s.beta, s.gamma_min)?;
            writeln!(
                f,
                "  audit: recursion residual {:e}, terminal {:e}, min(Gamma_k - gamma/4) {:e}, ceiling margin {}  [{}]",
                a.recursion_residual,
                a.terminal,
                a.gamma_margin,
                a.ceiling_margin.map_or("n/a".to_string(), |m| format!("{m:e}")),
                if a.holds(AUDIT_TOL) { "ok" } else { "FAILED" }
            )?;
        }
        writeln!(
            f,
            "risk sensitivity ({} constants): {}/{} trials within bound, worst margin {:e}",
            self.sensitivity_constants,
            self.sensitivity_trials - self.sensitivity_failures,
            self.sensitivity_trials,
            self.sensitivity_worst_margin
        )?;
        write!(
            f,
            "snapshot bias: {} pairs, max residual {:e}, max bias {:e}",
            self.bias_pairs, self.bias_max_residual, self.bias_max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn mean_shift_logistic_uses_closed_form_and_passes() {
        let cfg = parse_config(
            r#"
version = 1
seeds = [1]
[model]
kind = "logistic_binary"
[shift]
kind = "gaussian_mean_shift"
epsilon_nominal = 0.1
shift_matrix_seed = 5
[optimizer]
method = "sprint"
iterations = 10
[data]
source = "synthetic"
classes = 2
samples = 20
features = 3
[theory]
trials = 20
variance_pairs = 0
check_trials = 30
"#,
        )
        .unwrap();
        let r = theory_check(&cfg).unwrap();
        assert_eq!(r.sensitivity_constants, "closed_form");
        assert_eq!(r.sensitivity_failures, 0);
        assert!(r.audit_holds());
        assert!(r.bias_max_residual < 1e-12, "{}", r.bias_max_residual);
        assert!(r.to_string().contains("snapshot bias"));
    }
}
