//! Rate and plateau statistics over logged trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::TrajectoryRecord;

/// Default share of the trajectory averaged by [`plateau_level`].
pub const DEFAULT_TAIL_FRAC: f64 = 0.1;

/// What the rate fit regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateStatistic {
    /// `(1/t) Σ_{s≤t} ‖∇J‖²`, the quantity convergence guarantees bound.
    #[default]
    RunningAverage,
    /// The logged `‖∇J‖²` itself.
    Raw,
}

/// `(iteration + 1, grad_norm_sq)` for every record that carries metrics.
pub fn logged_series(records: &[TrajectoryRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| r.grad_norm_sq.map(|g| ((r.iteration + 1) as f64, g)))
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "regression inputs",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("window", "need at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("window", "all abscissae coincide"));
    }
    Ok(sxy / sxx)
}

/// Slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("series", "log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

fn window_bounds(len: usize, window: (f64, f64)) -> Result<(usize, usize)> {
    let (lo, hi) = window;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::invalid("window", format!("need 0 <= lo < hi <= 1, got ({lo}, {hi})")));
    }
    let a = (lo * len as f64).floor() as usize;
    let b = ((hi * len as f64).ceil() as usize).min(len);
    Ok((a, b))
}

/// `(t, value)` of the chosen statistic over the logged points.
pub fn statistic_series(records: &[TrajectoryRecord], statistic: RateStatistic) -> Vec<(f64, f64)> {
    let series = logged_series(records);
    match statistic {
        RateStatistic::Raw => series,
        RateStatistic::RunningAverage => {
            let mut total = 0.0;
            series
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    total += s.1;
                    (s.0, total / (i + 1) as f64)
                })
                .collect()
        }
    }
}

/// Log-log slope of the chosen statistic against `t` over a fractional
/// window of the logged points.
pub fn fit_rate_slope(records: &[TrajectoryRecord], window: (f64, f64), statistic: RateStatistic) -> Result<f64> {
    if logged_series(records).iter().any(|(_, g)| g.is_nan() || *g <= 0.0) {
        return Err(Error::invalid("grad_norm_sq", "rate fit needs positive values"));
    }
    let series = statistic_series(records, statistic);
    let (a, b) = window_bounds(series.len(), window)?;
    if b - a < 10 {
        return Err(Error::invalid("window", format!("{} logged points, need at least 10", b.saturating_sub(a))));
    }
    let (t, v): (Vec<f64>, Vec<f64>) = series[a..b].iter().copied().unzip();
    loglog_slope(&t, &v)
}

/// Mean `grad_norm_sq` over the final `tail_frac` of logged points.
pub fn plateau_level(records: &[TrajectoryRecord], tail_frac: f64) -> Result<f64> {
    if !(tail_frac > 0.0 && tail_frac <= 0.5) {
        return Err(Error::invalid("tail_frac", format!("must lie in (0, 0.5], got {tail_frac}")));
    }
    let series = logged_series(records);
    let k = (tail_frac * series.len() as f64).ceil() as usize;
    if k == 0 {
        return Err(Error::invalid("records", "empty tail"));
    }
    let tail = &series[series.len() - k..];
    Ok(tail.iter().map(|s| s.1).sum::<f64>() / k as f64)
}

/// `(lo, hi)` where `hi` is the fraction of logged points at which the
/// chosen statistic first drops to twice the plateau after `lo`, or 1 if
/// it never does.
pub fn pre_plateau_window(
    records: &[TrajectoryRecord],
    lo: f64,
    tail_frac: f64,
    statistic: RateStatistic,
) -> Result<(f64, f64)> {
    let plateau = plateau_level(records, tail_frac)?;
    let series = statistic_series(records, statistic);
    let n = series.len();
    let start = (lo * n as f64).floor() as usize;
    let hit = series
        .iter()
        .enumerate()
        .skip(start)
        .find(|(_, s)| s.1 <= 2.0 * plateau)
        .map(|(i, _)| i + 1);
    let hi = hit.map_or(1.0, |i| i as f64 / n as f64);
    Ok((lo, hi))
}
