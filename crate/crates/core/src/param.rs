//! Flat parameter vectors.
//!
//! A [`ParamVector`] is the single source of truth for both the deployed
//! model and the distribution it induces. Its length is fixed for the
//! lifetime of an experiment and every accepted update keeps it finite.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    pub fn check_len(&self, expected: usize, what: &'static str) -> Result<()> {
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found: self.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        other.check_len(self.len(), "dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Euclidean distance, used for sensitivity ratios.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        other.check_len(self.len(), "distance")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        param_axpy(-1.0, other, self)
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| a * v).collect())
    }

    /// In-place `self += a * x`. No finiteness check; callers validate.
    pub fn add_scaled(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        x.check_len(self.len(), "add_scaled")?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
        Ok(())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

/// Returns `a * x + y`.
pub fn param_axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "param_axpy",
            expected: x.len(),
            found: y.len(),
        });
    }
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect();
    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "param_axpy",
            index,
        });
    }
    Ok(ParamVector(out))
}

/// Squared Euclidean norm.
pub fn norm_sq(x: &ParamVector) -> Result<f64> {
    x.check_finite("norm_sq")?;
    Ok(x.0.iter().map(|v| v * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn axpy_examples() {
        assert_eq!(param_axpy(0.0, &pv(&[1., 2.]), &pv(&[3., 4.])).unwrap(), pv(&[3., 4.]));
        assert_eq!(param_axpy(1.0, &pv(&[1., 1.]), &pv(&[0., 0.])).unwrap(), pv(&[1., 1.]));
        assert_eq!(param_axpy(-0.5, &pv(&[2., 4.]), &pv(&[1., 1.])).unwrap(), pv(&[0., -1.]));
    }

    #[test]
    fn axpy_rejects_mismatch() {
        let err = param_axpy(1.0, &pv(&[1.]), &pv(&[1., 2.])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn axpy_names_the_overflowing_index() {
        let err = param_axpy(f64::MAX, &pv(&[0., 2.]), &pv(&[0., f64::MAX])).unwrap_err();
        assert_eq!(err, Error::NonFinite { what: "param_axpy", index: 1 });
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(norm_sq(&pv(&[0., 0., 0.])).unwrap(), 0.0);
        assert_eq!(norm_sq(&pv(&[3., 4.])).unwrap(), 25.0);
        assert_eq!(norm_sq(&pv(&[1., 1., 1., 1.])).unwrap(), 4.0);
        assert!(norm_sq(&pv(&[1., f64::NAN])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn axpy_exact_on_integers(
                a in -1000i32..1000,
                xs in proptest::collection::vec(-1000i32..1000, 1..16),
            ) {
                let x = ParamVector::new(xs.iter().map(|&v| v as f64).collect());
                let y = ParamVector::new(xs.iter().rev().map(|&v| v as f64).collect());
                let out = param_axpy(a as f64, &x, &y).unwrap();
                for i in 0..xs.len() {
                    let expect = a as i64 * xs[i] as i64 + xs[xs.len() - 1 - i] as i64;
                    prop_assert_eq!(out[i], expect as f64);
                }
            }

            #[test]
            fn norm_sq_zero_iff_zero(xs in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
                let x = ParamVector::new(xs.clone());
                let n = norm_sq(&x).unwrap();
                prop_assert!(n >= 0.0);
                prop_assert_eq!(n == 0.0, xs.iter().all(|&v| v == 0.0));
            }
        }
    }
}
