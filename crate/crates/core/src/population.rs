//! Samples and finite populations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Sample { features, label }
    }
}

/// A finite population of `n` base samples together with its current
/// realization under some deployed model.
///
/// `base` is never mutated after construction. Deterministic pushforward
/// maps rebuild `shifted` from `base` on every deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub base: Vec<Sample>,
    pub shifted: Vec<Sample>,
    /// Features that individuals may manipulate.
    pub strategic_mask: Vec<bool>,
    /// Class frequencies of the current realization.
    pub class_weights: Vec<f64>,
}

impl Population {
    /// Builds a population whose shifted realization equals its base, with
    /// every feature strategic and class weights set to the empirical label
    /// frequencies.
    pub fn new(base: Vec<Sample>, class_count: usize) -> Result<Self> {
        let p = validate_samples(&base, class_count)?;
        let class_weights = empirical_class_weights(&base, class_count);
        Ok(Population {
            shifted: base.clone(),
            base,
            strategic_mask: vec![true; p],
            class_weights,
        })
    }

    pub fn with_strategic_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "strategic_mask",
                expected: self.feature_dim(),
                found: mask.len(),
            });
        }
        self.strategic_mask = mask;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.base.first().map_or(0, |s| s.features.len())
    }

    pub fn class_count(&self) -> usize {
        self.class_weights.len()
    }

    /// Indices of base samples grouped by label.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, s) in self.base.iter().enumerate() {
            out[s.label].push(i);
        }
        out
    }

    /// Replaces the realization, keeping base and mask.
    pub fn realized(&self, shifted: Vec<Sample>, class_weights: Vec<f64>) -> Population {
        Population {
            base: self.base.clone(),
            shifted,
            strategic_mask: self.strategic_mask.clone(),
            class_weights,
        }
    }

    /// A population made of the first `n` base samples; used by the
    /// enumeration oracles which need small populations.
    pub fn truncated(&self, n: usize) -> Result<Population> {
        let n = n.min(self.len());
        let base = self.base[..n].to_vec();
        let mut pop = Population::new(base, self.class_count())?;
        pop.strategic_mask = self.strategic_mask.clone();
        Ok(pop)
    }
}

fn validate_samples(samples: &[Sample], class_count: usize) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptyPopulation)?;
    let p = first.features.len();
    if class_count < 2 {
        return Err(Error::invalid("class_count", "at least two classes are required"));
    }
    for s in samples {
        if s.features.len() != p {
            return Err(Error::DimensionMismatch {
                what: "sample features",
                expected: p,
                found: s.features.len(),
            });
        }
        if s.label >= class_count {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: class_count,
            });
        }
        if let Some(index) = s.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "sample features",
                index,
            });
        }
    }
    Ok(p)
}

pub(crate) fn empirical_class_weights(samples: &[Sample], class_count: usize) -> Vec<f64> {
    let mut counts = vec![0usize; class_count];
    for s in samples {
        counts[s.label] += 1;
    }
    let n = samples.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}
