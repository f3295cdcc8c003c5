//! Seeded experiment execution and the run manifest.

use std::path::{Path, PathBuf};

use perfopt::rng::{streams, RngStream};
use perfopt::theory::{
    estimate_constants, lyapunov_schedule, sgdgd_bound_report, BoundReport, ConstantsEstimate, LyapunovSchedule,
    SAFETY_FACTOR,
};
use perfopt::{
    rgd_run, sgd_gd_run, sprint_run, LossModelSpec, Logging, ParamVector, Population, Problem, RunOutput,
    SgdGdConfig, ShiftMap, SprintConfig, StepSchedule,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSection, ExperimentConfig, Method, StepRule};
use crate::data::{generate_synthetic, load_csv, Normalization};
use crate::error::{HarnessError, Result};
use crate::output::{csv_bytes, render_svg, write_atomic};

/// Set to anything but `0` or the empty string to skip chart emission.
pub const NO_SVG_ENV: &str = "PERFOPT_NO_SVG";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything a seed's run is built from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pop: Population,
    pub normalization: Option<Normalization>,
    pub model: LossModelSpec,
    pub map: ShiftMap,
    pub theta0: ParamVector,
}

impl Prepared {
    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.model, &self.map, &self.pop)
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (pop, normalization) = match &cfg.data {
        DataSection::Synthetic(d) => {
            let mut pop = generate_synthetic(
                d.classes,
                d.samples,
                d.features,
                d.class_separation,
                d.noise_sd,
                d.seed.unwrap_or(seed),
            )?;
            if let Some(idx) = &d.strategic_features {
                let mask = (0..d.features).map(|j| idx.contains(&j)).collect();
                pop = pop.with_strategic_mask(mask)?;
            }
            (pop, None)
        }
        DataSection::Csv(d) => {
            let (pop, norm) = load_csv(&d.path, &d.label_column, &d.strategic_columns)?;
            (pop, Some(norm))
        }
    };
    let model = cfg.model_spec(pop.feature_dim(), pop.class_count());
    model.validate()?;
    let map = ShiftMap::new(cfg.shift.spec(), pop.feature_dim())?;
    let theta0 = model.init(&mut RngStream::new(seed, streams::INIT));
    Ok(Prepared {
        pop,
        normalization,
        model,
        map,
        theta0,
    })
}

/// Constant step chosen for a seed, with the schedule it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub rule: StepRule,
    pub epoch_length: usize,
    /// First step size of the run (all steps for constant rules).
    pub gamma: f64,
    pub schedule: Option<LyapunovSchedule>,
    /// Constants the selector was given, after the safety factor or
    /// configured overrides.
    pub selector_constants: Option<[f64; 3]>,
}

/// Constants handed to the Lyapunov selector: configured values where
/// given, otherwise the estimates inflated by the safety factor.
pub fn selector_constants(cfg: &ExperimentConfig, c: &ConstantsEstimate) -> [f64; 3] {
    let t = &cfg.theory;
    [
        t.smoothness.unwrap_or(SAFETY_FACTOR * c.smoothness),
        t.loss_lipschitz.unwrap_or(SAFETY_FACTOR * c.loss_lipschitz),
        t.sensitivity.unwrap_or(c.sensitivity),
    ]
}

pub fn choose_step(cfg: &ExperimentConfig, n: usize, constants: &ConstantsEstimate) -> Result<StepReport> {
    let o = &cfg.optimizer;
    let m = o.epoch_length_for(n);
    let rule = o.step_rule();
    let mut report = StepReport {
        rule,
        epoch_length: m,
        gamma: 0.0,
        schedule: None,
        selector_constants: None,
    };
    match rule {
        StepRule::Constant => report.gamma = o.gamma.unwrap_or_default(),
        StepRule::InvSqrt => report.gamma = StepSchedule::InvSqrt.step(o.iterations),
        StepRule::Lyapunov => {
            let [l, l0, eps] = selector_constants(cfg, constants);
            let schedule = lyapunov_schedule(l, l0, eps, m)?;
            report.gamma = schedule.gamma;
            report.schedule = Some(schedule);
            report.selector_constants = Some([l, l0, eps]);
        }
    }
    Ok(report)
}

/// In-memory result of one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub output: RunOutput,
    pub constants: ConstantsEstimate,
    pub step: StepReport,
    pub bound: Option<BoundReport>,
}

/// Builds the population, estimates constants, picks the step size and
/// runs the configured optimizer. Writes nothing.
pub fn execute_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let prepared = prepare(cfg, seed)?;
    execute_prepared(cfg, seed, &prepared)
}

pub fn execute_prepared(cfg: &ExperimentConfig, seed: u64, prepared: &Prepared) -> Result<SeedResult> {
    let t = &cfg.theory;
    let constants = estimate_constants(
        &prepared.model,
        &prepared.map,
        &prepared.pop,
        t.probe(),
        t.variance_pairs,
        seed,
    )?;
    let step = choose_step(cfg, prepared.pop.len(), &constants)?;
    let logging = Logging {
        every: cfg.metrics_cadence,
        wall_clock: cfg.record_wall_time,
    };
    let o = &cfg.optimizer;
    let problem = prepared.problem();
    let output = match o.method {
        Method::Sprint => {
            let m = step.epoch_length;
            let sc = SprintConfig {
                logging,
                ..SprintConfig::constant(
                    m,
                    SprintConfig::epochs_for(o.iterations, m),
                    step.gamma,
                    seed,
                    streams::OPTIMIZER,
                )
            };
            sprint_run(&sc, problem, &prepared.theta0)?
        }
        Method::SgdGd => {
            let schedule = match step.rule {
                StepRule::InvSqrt => StepSchedule::InvSqrt,
                _ => StepSchedule::Constant(step.gamma),
            };
            let sc = SgdGdConfig {
                total_rounds: o.iterations,
                step: schedule,
                seed,
                stream_id: streams::OPTIMIZER,
                logging,
            };
            sgd_gd_run(&sc, problem, &prepared.theta0)?
        }
        Method::Rgd => rgd_run(o.iterations, step.gamma, logging, problem, &prepared.theta0)?,
    };
    let bound = (o.method == Method::SgdGd).then(|| sgdgd_bound_report(&output.records, &constants));
    Ok(SeedResult {
        output,
        constants,
        step,
        bound,
    })
}

/// Manifest entry for one seed. `error` is set and the file names are
/// absent when the seed failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub csv: Option<String>,
    pub svg: Option<String>,
    pub constants: Option<ConstantsEstimate>,
    pub step: Option<StepReport>,
    pub bound: Option<BoundReport>,
    pub final_risk: Option<f64>,
    pub final_grad_norm_sq: Option<f64>,
    pub ifo_optimizer: Option<u64>,
    pub ifo_metrics: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    /// The validated config with every default filled in.
    pub config: ExperimentConfig,
    pub normalization: Option<Normalization>,
    pub seeds: Vec<SeedEntry>,
}

impl RunManifest {
    pub fn failed(&self) -> usize {
        self.seeds.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }
}

fn svg_enabled() -> bool {
    std::env::var(NO_SVG_ENV).map_or(true, |v| v.is_empty() || v == "0")
}

pub fn csv_name(seed: u64) -> String {
    format!("seed-{seed}.csv")
}

fn run_one(cfg: &ExperimentConfig, seed: u64, out_dir: &Path, svg: bool) -> (SeedEntry, Option<Normalization>) {
    let mut entry = SeedEntry {
        seed,
        csv: None,
        svg: None,
        constants: None,
        step: None,
        bound: None,
        final_risk: None,
        final_grad_norm_sq: None,
        ifo_optimizer: None,
        ifo_metrics: None,
        error: None,
    };
    let mut normalization = None;
    let outcome = (|| -> Result<()> {
        let prepared = prepare(cfg, seed)?;
        normalization = prepared.normalization.clone();
        let res = execute_prepared(cfg, seed, &prepared)?;
        let csv = csv_name(seed);
        write_atomic(&out_dir.join(&csv), &csv_bytes(&res.output.records)?)?;
        if svg {
            let name = format!("seed-{seed}.svg");
            let title = format!("{:?} / {:?}, seed {seed}", cfg.optimizer.method, cfg.shift.kind);
            write_atomic(&out_dir.join(&name), render_svg(&res.output.records, &title).as_bytes())?;
            entry.svg = Some(name);
        }
        entry.csv = Some(csv);
        entry.final_risk = Some(res.output.final_risk);
        entry.final_grad_norm_sq = Some(res.output.final_grad_norm_sq);
        entry.ifo_optimizer = Some(res.output.ifo_optimizer);
        entry.ifo_metrics = Some(res.output.ifo_metrics);
        entry.constants = Some(res.constants);
        entry.step = Some(res.step);
        entry.bound = res.bound;
        Ok(())
    })();
    if let Err(e) = outcome {
        entry.svg = None;
        entry.error = Some(e.to_string());
    }
    (entry, normalization)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Data(format!("thread pool: {e}")))
}

/// Runs every seed, writes `seed-<s>.csv` (and `.svg`) per seed, then
/// `manifest.json` last. Seed failures are recorded in the manifest, not
/// returned; check [`RunManifest::failed`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let svg = svg_enabled();
    let results: Vec<(SeedEntry, Option<Normalization>)> = pool(cfg.workers)?
        .install(|| cfg.seeds.par_iter().map(|&s| run_one(cfg, s, out_dir, svg)).collect());
    let normalization = results.iter().find_map(|r| r.1.clone());
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        normalization,
        seeds: results.into_iter().map(|r| r.0).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Data(e.to_string()))?;
    write_atomic(&out_dir.join(MANIFEST_NAME), json.as_bytes())?;
    Ok(manifest)
}

/// Output directory: the override if given, else the config's.
pub fn output_dir(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny(method: &str, extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"
version = 1
seeds = [3, 4]
metrics_cadence = 5

[model]
kind = "logistic_binary"
l2 = 0.01

[shift]
kind = "strategic_response"
alpha = 0.1

[optimizer]
method = "{method}"
iterations = 40
{extra}

[data]
source = "synthetic"
classes = 2
samples = 30
features = 3

[theory]
trials = 10
variance_pairs = 2
"#
        ))
        .unwrap()
    }

    #[test]
    fn sprint_seed_uses_lyapunov_gamma() {
        let cfg = tiny("sprint", "");
        let res = execute_seed(&cfg, 3).unwrap();
        let sched = res.step.schedule.as_ref().unwrap();
        assert_eq!(res.step.gamma, sched.gamma);
        assert_eq!(res.step.epoch_length, 2);
        // 20 epochs of n + 2m
        assert_eq!(res.output.ifo_optimizer, 20 * (30 + 4));
        assert_eq!(res.output.records.len(), 40);
        let [l, l0, _] = res.step.selector_constants.unwrap();
        assert_eq!(l, 2.0 * res.constants.smoothness);
        assert_eq!(l0, 2.0 * res.constants.loss_lipschitz);
        assert!(res.bound.is_none());
    }

    #[test]
    fn overrides_bypass_the_safety_factor() {
        let mut cfg = tiny("sprint", "");
        cfg.theory.smoothness = Some(1.0);
        cfg.theory.loss_lipschitz = Some(0.5);
        cfg.theory.sensitivity = Some(0.0);
        let res = execute_seed(&cfg, 3).unwrap();
        assert_eq!(res.step.selector_constants, Some([1.0, 0.5, 0.0]));
    }

    #[test]
    fn sgd_gd_defaults_to_inv_sqrt_and_reports_bound() {
        let res = execute_seed(&tiny("sgd_gd", ""), 4).unwrap();
        assert_eq!(res.step.rule, StepRule::InvSqrt);
        assert_eq!(res.step.gamma, 1.0 / 40f64.sqrt());
        assert!(res.output.records.iter().all(|r| r.step_size == res.step.gamma));
        assert!(res.bound.is_some());
    }

    #[test]
    fn rgd_with_constant_step() {
        let res = execute_seed(&tiny("rgd", "step = \"constant\"\ngamma = 0.5"), 4).unwrap();
        assert_eq!(res.output.ifo_optimizer, 40 * 30);
        assert!(res.output.final_grad_norm_sq < res.output.records[0].grad_norm_sq.unwrap());
    }

    #[test]
    fn run_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("sprint", "");
        let manifest = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.failed(), 0);
        assert_eq!(manifest.seeds.len(), 2);
        for s in &manifest.seeds {
            assert!(dir.path().join(s.csv.as_ref().unwrap()).is_file());
        }
        let loaded = RunManifest::load(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(loaded.config_hash, cfg.hash());
    }
}
