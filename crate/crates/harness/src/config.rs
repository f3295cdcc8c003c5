//! Experiment configuration.
//!
//! Configs are TOML documents with a `version = 1` key. Unknown keys are
//! rejected everywhere. A minimal config:
//!
//! ```toml
//! version = 1
//! seeds = [7]
//!
//! [model]
//! kind = "logistic_binary"
//!
//! [shift]
//! kind = "strategic_response"
//! alpha = 0.2
//!
//! [optimizer]
//! method = "sprint"
//! iterations = 2000
//! epoch_length = 10
//!
//! [data]
//! source = "synthetic"
//! classes = 2
//! samples = 200
//! features = 4
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use perfopt::theory::Probe;
use perfopt::{LossModelSpec, ModelKind, ShiftSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable replacing the configured seeds: a comma-separated
/// list of integers.
pub const SEED_OVERRIDE_ENV: &str = "PERFOPT_SEED_OVERRIDE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seeds: Vec<u64>,
    /// Metrics are evaluated every `metrics_cadence` iterations; `0` keeps
    /// only the final evaluation.
    #[serde(default = "default_cadence")]
    pub metrics_cadence: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fills the `wall_ms` column. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    pub model: ModelSection,
    pub shift: ShiftSection,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    #[serde(default)]
    pub theory: TheorySection,
}

fn default_cadence() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("perfopt-out")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_hidden() -> usize {
    16
}

fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    pub kind: perfopt::ShiftKind,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub epsilon_nominal: f64,
    #[serde(default)]
    pub shift_matrix_seed: u64,
}

impl ShiftSection {
    pub fn spec(&self) -> ShiftSpec {
        ShiftSpec {
            kind: self.kind,
            alpha: self.alpha,
            epsilon_nominal: self.epsilon_nominal,
            shift_matrix_seed: self.shift_matrix_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Largest constant step accepted by the Lyapunov selector, computed
    /// from estimated (or configured) constants.
    Lyapunov,
    Constant,
    /// `1/√T`.
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sprint,
    SgdGd,
    Rgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub method: Method,
    /// Inner iterations (SPRINT) or rounds (SGD-GD, RGD).
    pub iterations: usize,
    /// SPRINT epoch length `m`. For the other methods it is the epoch
    /// length handed to the Lyapunov selector. Defaults to `⌈√n / 4⌉`.
    #[serde(default)]
    pub epoch_length: Option<usize>,
    #[serde(default)]
    pub step: Option<StepRule>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl OptimizerSection {
    pub fn step_rule(&self) -> StepRule {
        self.step.unwrap_or(match self.method {
            Method::SgdGd => StepRule::InvSqrt,
            Method::Sprint | Method::Rgd => StepRule::Lyapunov,
        })
    }

    pub fn epoch_length_for(&self, n: usize) -> usize {
        self.epoch_length
            .unwrap_or_else(|| ((n as f64).sqrt() / 4.0).ceil().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSection {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub classes: usize,
    pub samples: usize,
    pub features: usize,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Data seed; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Feature indices open to strategic manipulation; all by default.
    #[serde(default)]
    pub strategic_features: Option<Vec<usize>>,
}

fn default_separation() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default)]
    pub strategic_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_radius")]
    pub probe_radius: f64,
    #[serde(default = "default_variance_pairs")]
    pub variance_pairs: usize,
    /// Known smoothness, used instead of the estimate (no safety factor).
    #[serde(default)]
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub loss_lipschitz: Option<f64>,
    #[serde(default)]
    pub sensitivity: Option<f64>,
    /// Triples tried by `check` for the risk-sensitivity inequality.
    #[serde(default = "default_check_trials")]
    pub check_trials: usize,
}

fn default_trials() -> usize {
    200
}

fn default_radius() -> f64 {
    1.0
}

fn default_variance_pairs() -> usize {
    10
}

fn default_check_trials() -> usize {
    100
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            trials: default_trials(),
            probe_radius: default_radius(),
            variance_pairs: default_variance_pairs(),
            smoothness: None,
            loss_lipschitz: None,
            sensitivity: None,
            check_trials: default_check_trials(),
        }
    }
}

impl TheorySection {
    pub fn probe(&self) -> Probe {
        Probe::new(self.trials, self.probe_radius)
    }
}

impl ExperimentConfig {
    /// Model spec for a population with `input_dim` features and
    /// `class_count` classes.
    pub fn model_spec(&self, input_dim: usize, class_count: usize) -> LossModelSpec {
        let m = &self.model;
        let base = match m.kind {
            ModelKind::LogisticBinary => LossModelSpec::logistic(input_dim),
            ModelKind::MlpSoftmax => LossModelSpec::mlp(input_dim, m.hidden_dim, class_count),
        };
        base.with_l2(m.l2).with_init_scale(m.init_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::invalid(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::invalid("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::invalid("seeds", "seeds must be distinct"));
        }
        if self.workers == 0 {
            return Err(HarnessError::invalid("workers", "must be at least 1"));
        }
        let m = &self.model;
        if m.kind == ModelKind::MlpSoftmax && m.hidden_dim == 0 {
            return Err(HarnessError::invalid("model.hidden_dim", "must be at least 1"));
        }
        if !(m.l2 >= 0.0 && m.l2.is_finite()) {
            return Err(HarnessError::invalid("model.l2", "must be finite and nonnegative"));
        }
        if !(m.init_scale >= 0.0 && m.init_scale.is_finite()) {
            return Err(HarnessError::invalid("model.init_scale", "must be finite and nonnegative"));
        }
        self.shift
            .spec()
            .validate()
            .map_err(|e| HarnessError::invalid("shift", e.to_string()))?;

        let o = &self.optimizer;
        if o.iterations == 0 {
            return Err(HarnessError::invalid("optimizer.iterations", "must be at least 1"));
        }
        if o.epoch_length == Some(0) {
            return Err(HarnessError::invalid("optimizer.epoch_length", "must be at least 1"));
        }
        match (o.method, o.step_rule()) {
            (Method::Sprint | Method::Rgd, StepRule::InvSqrt) => {
                return Err(HarnessError::invalid("optimizer.step", "inv_sqrt is only available for sgd_gd"));
            }
            (_, StepRule::Constant) => match o.gamma {
                Some(g) if g >= 0.0 && g.is_finite() => {}
                Some(_) => return Err(HarnessError::invalid("optimizer.gamma", "must be finite and nonnegative")),
                None => return Err(HarnessError::invalid("optimizer.gamma", "required by step = \"constant\"")),
            },
            (_, _) if o.gamma.is_some() => {
                return Err(HarnessError::invalid("optimizer.gamma", "only used with step = \"constant\""));
            }
            _ => {}
        }

        match &self.data {
            DataSection::Synthetic(d) => {
                if d.features < 1 {
                    return Err(HarnessError::invalid("data.features", "must be at least 1"));
                }
                if d.classes < 2 {
                    return Err(HarnessError::invalid("data.classes", "must be at least 2"));
                }
                if d.samples < d.classes {
                    return Err(HarnessError::invalid("data.samples", "must be at least the number of classes"));
                }
                if m.kind == ModelKind::LogisticBinary && d.classes != 2 {
                    return Err(HarnessError::invalid("data.classes", "logistic_binary needs exactly 2 classes"));
                }
                if let Some(idx) = &d.strategic_features {
                    if let Some(bad) = idx.iter().find(|i| **i >= d.features) {
                        return Err(HarnessError::invalid(
                            "data.strategic_features",
                            format!("index {bad} out of range for {} features", d.features),
                        ));
                    }
                }
            }
            DataSection::Csv(d) => {
                if !d.path.is_file() {
                    return Err(HarnessError::invalid("data.path", format!("{} does not exist", d.path.display())));
                }
            }
        }

        let t = &self.theory;
        if t.trials == 0 {
            return Err(HarnessError::invalid("theory.trials", "must be at least 1"));
        }
        if !(t.probe_radius > 0.0 && t.probe_radius.is_finite()) {
            return Err(HarnessError::invalid("theory.probe_radius", "must be finite and positive"));
        }
        for (name, v) in [
            ("theory.smoothness", t.smoothness),
            ("theory.loss_lipschitz", t.loss_lipschitz),
            ("theory.sensitivity", t.sensitivity),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(HarnessError::invalid(name, "must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (keys sorted), so the hash does
    /// not depend on key order or formatting in the source file.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolves a relative CSV path against the directory holding the
    /// config file.
    fn resolve_paths(&mut self, base: &Path) {
        if let DataSection::Csv(d) = &mut self.data {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
    }

    /// Replaces the seeds with those in `PERFOPT_SEED_OVERRIDE`, if set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_OVERRIDE_ENV) {
            self.seeds = parse_seed_list(&raw)?;
        }
        Ok(())
    }
}

pub fn parse_seed_list(raw: &str) -> Result<Vec<u64>> {
    let seeds = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| HarnessError::invalid(SEED_OVERRIDE_ENV, format!("`{s}` is not a seed")))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(HarnessError::invalid(SEED_OVERRIDE_ENV, "no seeds given"));
    }
    Ok(seeds)
}

/// Parses and validates a config tree.
pub fn config_from_value(value: toml::Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config_value(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

/// Same as [`load_config`] but resolves relative paths and then applies
/// `overrides` (dotted key → value) to the raw tree before validation.
pub fn load_config_with(path: &Path, overrides: &BTreeMap<String, toml::Value>) -> Result<ExperimentConfig> {
    let mut value = read_config_value(path)?;
    for (key, v) in overrides {
        set_dotted(&mut value, key, v.clone())?;
    }
    let mut cfg: ExperimentConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::invalid(key, "malformed key"));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::invalid(key, format!("`{part}` is not inside a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| HarnessError::invalid(key, "parent is not a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a scalar as TOML (integer, float, boolean), falling back to a
/// bare string.
pub fn parse_scalar(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
seeds = [7]

[model]
kind = "logistic_binary"

[shift]
kind = "identity"

[optimizer]
method = "sprint"
iterations = 100

[data]
source = "synthetic"
classes = 2
samples = 40
features = 3
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.metrics_cadence, 1);
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.output_dir, PathBuf::from("perfopt-out"));
        assert_eq!(cfg.theory, TheorySection::default());
        assert_eq!(cfg.optimizer.step_rule(), StepRule::Lyapunov);
        assert_eq!(cfg.optimizer.epoch_length_for(40), 2);
        assert!(!cfg.record_wall_time);
        let DataSection::Synthetic(d) = &cfg.data else { panic!() };
        assert_eq!((d.class_separation, d.noise_sd, d.seed), (1.0, 1.0, None));
    }

    #[test]
    fn empty_seeds_named() {
        let err = parse_config(&MINIMAL.replace("seeds = [7]", "seeds = []")).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
        assert_eq!(err.exit_code(), 1);
        assert!(parse_config(&MINIMAL.replace("seeds = [7]", "seeds = [7, 7]")).is_err());
    }

    #[test]
    fn zero_epoch_length_named() {
        let text = MINIMAL.replace("iterations = 100", "iterations = 100\nepoch_length = 0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("epoch_length"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config(&MINIMAL.replace("kind = \"identity\"", "kind = \"identity\"\nalhpa = 0.2")).unwrap_err();
        assert!(err.to_string().contains("alhpa"), "{err}");
        assert!(parse_config(&format!("{MINIMAL}\nbogus = 1")).is_err());
        let err = parse_config(&MINIMAL.replace("features = 3", "features = 3\ncolour = 1")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn step_rules_checked() {
        let text = MINIMAL.replace("iterations = 100", "iterations = 100\nstep = \"constant\"");
        assert!(parse_config(&text).unwrap_err().to_string().contains("gamma"));
        let text = MINIMAL.replace("iterations = 100", "iterations = 100\nstep = \"inv_sqrt\"");
        assert!(parse_config(&text).is_err());
        let text = MINIMAL.replace("iterations = 100", "iterations = 100\ngamma = 0.1");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn version_and_class_checks() {
        assert!(parse_config(&MINIMAL.replace("version = 1", "version = 2")).is_err());
        assert!(parse_config(&MINIMAL.replace("classes = 2", "classes = 3")).is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let reordered = r#"
seeds = [7]
version = 1
[data]
features = 3
samples = 40
classes = 2
source = "synthetic"
[optimizer]
iterations = 100
method = "sprint"
[shift]
kind = "identity"
[model]
kind = "logistic_binary"
"#;
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&MINIMAL.replace("seeds = [7]", "seeds = [8]")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn dotted_overrides() {
        let mut v: toml::Value = toml::from_str(MINIMAL).unwrap();
        set_dotted(&mut v, "shift.alpha", parse_scalar("0.4")).unwrap();
        set_dotted(&mut v, "shift.kind", parse_scalar("strategic_response")).unwrap();
        let cfg = config_from_value(v).unwrap();
        assert_eq!(cfg.shift.alpha, 0.4);
        assert_eq!(cfg.shift.kind, perfopt::ShiftKind::StrategicResponse);
        assert_eq!(parse_scalar("20"), toml::Value::Integer(20));
        assert_eq!(parse_scalar("true"), toml::Value::Boolean(true));
    }

    #[test]
    fn seed_list_parsing() {
        assert_eq!(parse_seed_list("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("x").is_err());
    }
}
