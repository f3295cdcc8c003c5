//! Cross-product sweeps over config keys.

use std::collections::BTreeMap;
use std::path::Path;

use perfopt::theory::{plateau_level, DEFAULT_TAIL_FRAC};
use rayon::prelude::*;

use crate::config::{config_from_value, parse_scalar, read_config_value, set_dotted, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{read_csv, write_atomic};
use crate::run::{run_experiment, RunManifest};

pub const SUMMARY_NAME: &str = "summary.csv";

/// One `--over key=v1,v2,...` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

impl std::str::FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::invalid("--over", format!("`{s}` is not key=v1,v2,...")))?;
        let key = key.trim().to_string();
        let values: Vec<toml::Value> = values.split(',').filter(|v| !v.trim().is_empty()).map(parse_scalar).collect();
        if key.is_empty() || values.is_empty() {
            return Err(HarnessError::invalid("--over", format!("`{s}` names no key or no values")));
        }
        Ok(Axis { key, values })
    }
}

/// A sweep cell: its key/value assignment and the config it produces.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub assignment: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("cell-{:03}", self.index)
    }
}

/// Every combination of axis values applied to the base tree, first axis
/// varying slowest. Each cell config is validated.
pub fn expand(base: &toml::Value, axes: &[Axis], csv_base: &Path) -> Result<Vec<Cell>> {
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(index, assignment)| {
            let mut tree = base.clone();
            for (k, v) in &assignment {
                set_dotted(&mut tree, k, v.clone())?;
            }
            let mut config = config_from_value(tree).map_err(|e| match e {
                HarnessError::Invalid { field, reason } => HarnessError::Invalid {
                    field,
                    reason: format!("{reason} (sweep cell {index})"),
                },
                other => other,
            })?;
            if let crate::config::DataSection::Csv(d) = &mut config.data {
                if d.path.is_relative() {
                    d.path = csv_base.join(&d.path);
                }
            }
            config.workers = 1;
            Ok(Cell {
                index,
                assignment,
                config,
            })
        })
        .collect()
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs every cell into `out_dir/cell-NNN/` (cells in parallel up to
/// `workers`), then writes `summary.csv` with one row per cell and seed.
/// The plateau column is the tail mean of the logged `grad_norm_sq`,
/// recomputed from the written CSV.
pub fn run_sweep(config_path: &Path, axes: &[Axis], out_dir: &Path, workers: usize) -> Result<Vec<RunManifest>> {
    let mut base = read_config_value(config_path)?;
    if let Ok(raw) = std::env::var(crate::config::SEED_OVERRIDE_ENV) {
        let seeds = crate::config::parse_seed_list(&raw)?;
        set_dotted(&mut base, "seeds", toml::Value::Array(seeds.iter().map(|s| toml::Value::Integer(*s as i64)).collect()))?;
    }
    let cells = expand(&base, axes, config_path.parent().unwrap_or(Path::new(".")))?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Data(format!("thread pool: {e}")))?;
    let manifests: Vec<Result<RunManifest>> =
        pool.install(|| cells.par_iter().map(|c| run_experiment(&c.config, &out_dir.join(c.dir_name()))).collect());

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Data(e.to_string());
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(
        ["seed", "final_risk", "final_grad_norm_sq", "plateau_grad_norm_sq", "ifo_optimizer", "error"].map(String::from),
    );
    w.write_record(&header).map_err(csv_err)?;
    let mut out = Vec::with_capacity(cells.len());
    for (cell, manifest) in cells.iter().zip(manifests) {
        let manifest = manifest?;
        for s in &manifest.seeds {
            let plateau = s
                .csv
                .as_ref()
                .and_then(|f| read_csv(&out_dir.join(cell.dir_name()).join(f)).ok())
                .and_then(|r| plateau_level(&r, DEFAULT_TAIL_FRAC).ok());
            let mut row = vec![cell.dir_name()];
            row.extend(cell.assignment.iter().map(|(_, v)| value_text(v)));
            row.push(s.seed.to_string());
            row.push(s.final_risk.map(|v| format!("{v:e}")).unwrap_or_default());
            row.push(s.final_grad_norm_sq.map(|v| format!("{v:e}")).unwrap_or_default());
            row.push(plateau.map(|v| format!("{v:e}")).unwrap_or_default());
            row.push(s.ifo_optimizer.map(|v| v.to_string()).unwrap_or_default());
            row.push(s.error.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        out.push(manifest);
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))?;
    write_atomic(&out_dir.join(SUMMARY_NAME), &bytes)?;
    Ok(out)
}

/// Groups `--over` arguments that name the same key.
pub fn merge_axes(axes: Vec<Axis>) -> Vec<Axis> {
    let mut order: Vec<String> = Vec::new();
    let mut by_key: BTreeMap<String, Vec<toml::Value>> = BTreeMap::new();
    for a in axes {
        if !by_key.contains_key(&a.key) {
            order.push(a.key.clone());
        }
        by_key.entry(a.key).or_default().extend(a.values);
    }
    order
        .into_iter()
        .map(|key| {
            let values = by_key.remove(&key).unwrap_or_default();
            Axis { key, values }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
version = 1
seeds = [1, 2]
[model]
kind = "logistic_binary"
[shift]
kind = "strategic_response"
alpha = 0.1
[optimizer]
method = "sgd_gd"
iterations = 20
[data]
source = "synthetic"
classes = 2
samples = 20
features = 2
[theory]
trials = 5
variance_pairs = 0
"#;

    #[test]
    fn axis_parsing() {
        let a: Axis = "shift.alpha=0.01, 0.2,0.4".parse().unwrap();
        assert_eq!(a.key, "shift.alpha");
        assert_eq!(a.values, vec![toml::Value::Float(0.01), toml::Value::Float(0.2), toml::Value::Float(0.4)]);
        assert!("shift.alpha".parse::<Axis>().is_err());
        assert!("=1".parse::<Axis>().is_err());
    }

    #[test]
    fn expansion_is_a_cross_product() {
        let base: toml::Value = toml::from_str(BASE).unwrap();
        let axes = vec![
            "shift.alpha=0.1,0.2".parse().unwrap(),
            "optimizer.method=sgd_gd,sprint,rgd".parse().unwrap(),
        ];
        let cells = expand(&base, &axes, Path::new(".")).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[4].config.shift.alpha, 0.2);
        assert_eq!(cells[4].config.optimizer.method, crate::config::Method::Sprint);
    }

    #[test]
    fn invalid_cell_names_the_field() {
        let base: toml::Value = toml::from_str(BASE).unwrap();
        let err = expand(&base, &["optimizer.epoch_length=0".parse().unwrap()], Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("epoch_length"), "{err}");
    }

    #[test]
    fn sweep_writes_cells_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, BASE).unwrap();
        let out = dir.path().join("out");
        let axes = merge_axes(vec!["shift.alpha=0.0".parse().unwrap(), "shift.alpha=0.3".parse().unwrap()]);
        let manifests = run_sweep(&cfg, &axes, &out, 2).unwrap();
        assert_eq!(manifests.len(), 2);
        let summary = std::fs::read_to_string(out.join(SUMMARY_NAME)).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "cell,shift.alpha,seed,final_risk,final_grad_norm_sq,plateau_grad_norm_sq,ifo_optimizer,error");
        assert_eq!(lines.len(), 5);
        assert!(out.join("cell-001").join("seed-2.csv").is_file());
    }
}
