use super::{Logging, Problem, RunOutput, Tracker};
use crate::error::{Error, Result};
use crate::param::{norm_sq, ParamVector};

/// Repeated gradient descent: `θ_{t+1} = θ_t − γ ∇J(θ_t; θ_t)` with the
/// exact population gradient under `D(θ_t)`.
///
/// The full gradient doubles as the logged metric, so metrics cost nothing
/// extra here.
pub fn rgd_run(rounds: usize, gamma: f64, logging: Logging, problem: Problem<'_>, theta0: &ParamVector) -> Result<RunOutput> {
    if rounds == 0 {
        return Err(Error::invalid("rounds", "must be at least 1"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be finite and nonnegative"));
    }
    theta0.check_len(problem.model.dim(), "theta0")?;
    theta0.check_finite("theta0")?;
    let mut tracker = Tracker::new(problem, logging, rounds);
    let mut theta = theta0.clone();
    for t in 0..rounds {
        let eval = problem.map.induced_risk(problem.model, &theta, &theta, problem.pop)?;
        tracker.ifo_optimizer += eval.ifo_cost;
        let metrics = if logging.due(t) {
            (Some(eval.value), Some(norm_sq(&eval.gradient)?))
        } else {
            (None, None)
        };
        theta.add_scaled(-gamma, &eval.gradient)?;
        if theta.first_non_finite().is_some() {
            return Err(Error::Diverged { iteration: t });
        }
        tracker.push(t, t, 0, metrics, gamma);
    }
    tracker.finish(theta)
}
