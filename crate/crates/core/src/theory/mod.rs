//! Numeric checks of the convergence theory: constant estimation, the
//! Lyapunov step-size selector, risk-sensitivity and snapshot-bias checks,
//! and rate and plateau statistics.

mod bounds;
mod checks;
mod constants;
mod lyapunov;
mod rates;
mod wasserstein;

pub use bounds::{sgdgd_bound_report, BoundReport};
pub use checks::{bias_identity, risk_sensitivity_check, BiasIdentity, SensitivityCheck, RISK_SENSITIVITY_SLACK};
pub use constants::{
    estimate_constants, estimate_loss_lipschitz, estimate_sensitivity, estimate_smoothness, estimate_variance,
    logistic_loss_lipschitz, logistic_smoothness_bound, random_pair, ConstantsEstimate, Probe,
};
pub use lyapunov::{
    audit_schedule, lyapunov_schedule, lyapunov_schedule_estimated, LyapunovConstants, LyapunovSchedule,
    ScheduleAudit, GAMMA_FLOOR, SAFETY_FACTOR,
};
pub use rates::{
    fit_rate_slope, logged_series, loglog_slope, ols_slope, plateau_level, pre_plateau_window, statistic_series,
    RateStatistic, DEFAULT_TAIL_FRAC,
};
pub use wasserstein::{w1_sorted, w1_weighted};
