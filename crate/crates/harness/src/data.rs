//! Dataset construction: Gaussian class clusters and CSV ingestion.

use std::path::Path;

use perfopt::rng::{streams, RngStream};
use perfopt::{Population, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// `classes` isotropic Gaussian clusters. Cluster `c` is centered at
/// `class_separation · u_c`, with `u_c` the `c`-th coordinate axis when
/// `classes ≤ features` and a random unit vector otherwise. Labels are
/// assigned round-robin, so class sizes differ by at most one.
pub fn generate_synthetic(
    classes: usize,
    n: usize,
    features: usize,
    class_separation: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Population> {
    if features < 1 {
        return Err(HarnessError::invalid("features", "must be at least 1"));
    }
    if classes < 2 {
        return Err(HarnessError::invalid("classes", "must be at least 2"));
    }
    if n < classes {
        return Err(HarnessError::invalid("samples", format!("need at least one sample per class ({classes})")));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(HarnessError::invalid("class_separation", "must be finite and nonnegative"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(HarnessError::invalid("noise_sd", "must be finite and nonnegative"));
    }
    let mut rng = RngStream::new(seed, streams::DATA);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let dir: Vec<f64> = if classes <= features {
                (0..features).map(|j| if j == c { 1.0 } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..features).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / norm).collect()
            };
            dir.into_iter().map(|x| class_separation * x).collect()
        })
        .collect();
    let base = (0..n)
        .map(|i| {
            let label = i % classes;
            let x = centers[label].iter().map(|m| m + noise_sd * rng.normal()).collect();
            Sample::new(x, label)
        })
        .collect();
    Ok(Population::new(base, classes)?)
}

/// Per-column z-score statistics applied at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Original label values, indexed by class id.
    pub labels: Vec<String>,
}

/// Reads a headed CSV. Every column other than `label_column` is a
/// numeric feature, standardized to zero mean and unit variance (columns
/// with zero variance are only centered). Labels are mapped to class ids
/// in sorted order, numerically when every label parses as an integer.
pub fn load_csv(path: &Path, label_column: &str, strategic_columns: &[String]) -> Result<(Population, Normalization)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| HarnessError::invalid("data.label_column", format!("no column named `{label_column}`")))?;
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if columns.is_empty() {
        return Err(HarnessError::Data("no feature columns".into()));
    }
    for name in strategic_columns {
        if !columns.contains(name) {
            return Err(HarnessError::invalid("data.strategic_columns", format!("no feature column named `{name}`")));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        let mut x = Vec::with_capacity(columns.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                HarnessError::Data(format!("{}: row {}: `{field}` is not a number", path.display(), line + 2))
            })?;
            if !v.is_finite() {
                return Err(HarnessError::Data(format!("{}: row {}: non-finite value", path.display(), line + 2)));
            }
            x.push(v);
        }
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(HarnessError::Data(format!("{}: no data rows", path.display())));
    }

    let p = columns.len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..p)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    for r in &mut rows {
        for j in 0..p {
            r[j] -= mean[j];
            if sd[j] > 0.0 {
                r[j] /= sd[j];
            }
        }
    }

    let mut labels: Vec<String> = raw_labels.clone();
    labels.sort();
    labels.dedup();
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap_or_default());
    }
    if labels.len() < 2 {
        return Err(HarnessError::Data("need at least two distinct labels".into()));
    }
    let base = rows
        .into_iter()
        .zip(&raw_labels)
        .map(|(x, l)| Sample::new(x, labels.iter().position(|v| v == l).unwrap_or(0)))
        .collect();
    let mut pop = Population::new(base, labels.len())?;
    if !strategic_columns.is_empty() {
        let mask = columns.iter().map(|c| strategic_columns.contains(c)).collect();
        pop = pop.with_strategic_mask(mask)?;
    }
    Ok((
        pop,
        Normalization {
            columns,
            mean,
            sd,
            labels,
        },
    ))
}
