//! One-dimensional Wasserstein-1 distances between empirical laws.

use crate::error::{Error, Result};

/// `W₁` between two equal-size unweighted samples: the mean absolute
/// difference of the sorted values.
pub fn w1_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "w1_sorted",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `W₁ = ∫ |F_a − F_b|` between two weighted empirical laws. Weights of
/// each law are normalized internally.
pub fn w1_weighted(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Result<f64> {
    if xa.len() != wa.len() {
        return Err(Error::DimensionMismatch {
            what: "w1_weighted (first law)",
            expected: xa.len(),
            found: wa.len(),
        });
    }
    if xb.len() != wb.len() {
        return Err(Error::DimensionMismatch {
            what: "w1_weighted (second law)",
            expected: xb.len(),
            found: wb.len(),
        });
    }
    let sa: f64 = wa.iter().sum();
    let sb: f64 = wb.iter().sum();
    if xa.is_empty() || xb.is_empty() || sa <= 0.0 || sb <= 0.0 {
        return Err(Error::EmptyPopulation);
    }
    // signed mass events: +w for law a, -w for law b
    let mut events: Vec<(f64, f64)> = xa
        .iter()
        .zip(wa)
        .map(|(x, w)| (*x, w / sa))
        .chain(xb.iter().zip(wb).map(|(x, w)| (*x, -w / sb)))
        .collect();
    events.sort_by(|l, r| l.0.total_cmp(&r.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}
