use super::{Logging, Problem, RunOutput, Tracker};
use crate::error::{Error, Result};
use crate::models::{decoupled_risk, LossModelSpec};
use crate::param::ParamVector;
use crate::population::Sample;
use crate::rng::RngStream;

/// Epoch structure and inner step sizes. A run performs
/// `epoch_count × epoch_length` inner iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SprintConfig {
    pub epoch_length: usize,
    pub epoch_count: usize,
    /// One step size per inner index `k`.
    pub steps: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
    pub logging: Logging,
}

impl SprintConfig {
    /// Constant step size; metrics at every epoch boundary.
    pub fn constant(epoch_length: usize, epoch_count: usize, gamma: f64, seed: u64, stream_id: u64) -> Self {
        SprintConfig {
            epoch_length,
            epoch_count,
            steps: vec![gamma; epoch_length],
            seed,
            stream_id,
            logging: Logging::every(epoch_length),
        }
    }

    /// `S = ⌈T/m⌉` epochs for a budget of `T` inner iterations.
    pub fn epochs_for(total_iterations: usize, epoch_length: usize) -> usize {
        total_iterations.div_ceil(epoch_length)
    }

    pub fn total_iterations(&self) -> usize {
        self.epoch_length * self.epoch_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_length == 0 {
            return Err(Error::invalid("epoch_length", "must be at least 1"));
        }
        if self.epoch_count == 0 {
            return Err(Error::invalid("epoch_count", "must be at least 1"));
        }
        if self.steps.len() != self.epoch_length {
            return Err(Error::DimensionMismatch {
                what: "inner step sizes",
                expected: self.epoch_length,
                found: self.steps.len(),
            });
        }
        if self.steps.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::invalid("steps", "step sizes must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Variance-reduced direction `∇ℓ(z; θ_k) − ∇ℓ(z; θ̃) + ∇J(θ̃; θ̃)`.
pub fn corrected_direction(
    model: &LossModelSpec,
    theta_k: &ParamVector,
    theta_snapshot: &ParamVector,
    snapshot_grad: &ParamVector,
    z: &Sample,
) -> Result<ParamVector> {
    snapshot_grad.check_len(model.dim(), "snapshot_grad")?;
    let mut diff = vec![0.0; model.dim()];
    model.accumulate(theta_k, z, 1.0, &mut diff)?;
    model.accumulate(theta_snapshot, z, -1.0, &mut diff)?;
    Ok(ParamVector::new(
        diff.iter().zip(snapshot_grad.iter()).map(|(d, g)| d + g).collect(),
    ))
}

/// Variance-reduced greedy-deploy optimization.
///
/// Each epoch deploys the snapshot `θ̃`, takes the full gradient over the
/// `n` samples of `D(θ̃)`, then performs `m` inner steps. Every inner step
/// deploys the current iterate, draws one sample, and evaluates its
/// gradient at both the iterate and the snapshot. The last inner iterate
/// becomes the next snapshot.
pub fn sprint_run(cfg: &SprintConfig, problem: Problem<'_>, theta0: &ParamVector) -> Result<RunOutput> {
    cfg.validate()?;
    let model = problem.model;
    theta0.check_len(model.dim(), "theta0")?;
    theta0.check_finite("theta0")?;
    let mut rng = RngStream::new(cfg.seed, cfg.stream_id);
    let mut tracker = Tracker::new(problem, cfg.logging, cfg.total_iterations());
    let m = cfg.epoch_length;
    let mut snapshot = theta0.clone();
    let mut grad_k = vec![0.0; model.dim()];
    let mut grad_snap = vec![0.0; model.dim()];

    for s in 0..cfg.epoch_count {
        let realized = problem.map.deploy(model, &snapshot, problem.pop, &mut rng)?;
        let full = decoupled_risk(model, &snapshot, &realized)?;
        tracker.ifo_optimizer += full.ifo_cost;
        if full.gradient.first_non_finite().is_some() {
            return Err(Error::Diverged { iteration: s * m });
        }
        let snapshot_grad = full.gradient;

        let mut theta = snapshot.clone();
        for (k, &gamma) in cfg.steps.iter().enumerate() {
            let t = s * m + k;
            let metrics = tracker.metrics(t, &theta)?;
            let z = problem.map.draw(model, &theta, problem.pop, &mut rng)?;
            grad_k.iter_mut().for_each(|g| *g = 0.0);
            grad_snap.iter_mut().for_each(|g| *g = 0.0);
            model.accumulate(&theta, &z, 1.0, &mut grad_k)?;
            model.accumulate(&snapshot, &z, 1.0, &mut grad_snap)?;
            tracker.ifo_optimizer += 2;
            for ((th, gk), (gs, gf)) in theta
                .as_mut_slice()
                .iter_mut()
                .zip(&grad_k)
                .zip(grad_snap.iter().zip(snapshot_grad.iter()))
            {
                *th -= gamma * ((gk - gs) + gf);
            }
            if theta.first_non_finite().is_some() {
                return Err(Error::Diverged { iteration: t });
            }
            tracker.push(t, s, k, metrics, gamma);
        }
        snapshot = theta;
    }
    tracker.finish(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LossModelSpec;
    use crate::param::param_axpy;
    use crate::population::{Population, Sample};
    use crate::shifts::{ShiftMap, ShiftSpec};

    fn pop(n: usize) -> Population {
        let mut rng = RngStream::new(4, 4);
        let base = (0..n)
            .map(|i| Sample::new(vec![rng.normal(), rng.normal()], i % 2))
            .collect();
        Population::new(base, 2).unwrap()
    }

    #[test]
    fn vk_cancels_at_the_snapshot() {
        let model = LossModelSpec::mlp(2, 3, 2);
        let theta = model.init(&mut RngStream::new(1, 1));
        let g = ParamVector::new((0..model.dim()).map(|i| i as f64 * 0.1 - 0.7).collect());
        let z = Sample::new(vec![0.4, -1.3], 1);
        assert_eq!(corrected_direction(&model, &theta, &theta, &g, &z).unwrap(), g);
        let zero = ParamVector::zeros(model.dim());
        assert_eq!(corrected_direction(&model, &theta, &theta, &zero, &z).unwrap(), zero);
    }

    #[test]
    fn vk_rejects_dimension_mismatch() {
        let model = LossModelSpec::logistic(2);
        let theta = ParamVector::zeros(3);
        let z = Sample::new(vec![0.4, -1.3], 1);
        assert!(corrected_direction(&model, &theta, &theta, &ParamVector::zeros(2), &z).is_err());
    }

    #[test]
    fn snapshot_only_schedule_is_one_full_gradient_step() {
        let model = LossModelSpec::logistic(2);
        let p = pop(12);
        let map = ShiftMap::new(ShiftSpec::identity(), 2).unwrap();
        let theta0 = ParamVector::new(vec![0.2, -0.4, 0.1]);
        let mut steps = vec![0.0; 12];
        steps[0] = 0.5;
        let cfg = SprintConfig {
            epoch_length: 12,
            epoch_count: 1,
            steps,
            seed: 1,
            stream_id: 2,
            logging: Logging::every(1),
        };
        let out = sprint_run(&cfg, Problem::new(&model, &map, &p), &theta0).unwrap();
        let full = decoupled_risk(&model, &theta0, &p).unwrap();
        assert_eq!(out.final_theta, param_axpy(-0.5, &full.gradient, &theta0).unwrap());
    }

    #[test]
    fn ifo_per_epoch_is_n_plus_2m() {
        let model = LossModelSpec::logistic(2);
        let p = pop(9);
        let map = ShiftMap::new(ShiftSpec::strategic(0.1), 2).unwrap();
        let cfg = SprintConfig::constant(4, 3, 0.05, 1, 2);
        let out = sprint_run(&cfg, Problem::new(&model, &map, &p), &ParamVector::zeros(3)).unwrap();
        assert_eq!(out.ifo_optimizer, 3 * (9 + 8));
        for r in &out.records {
            if r.inner_k == 3 {
                assert_eq!(r.ifo_optimizer, (r.epoch as u64 + 1) * 17);
            }
        }
        assert_eq!(out.records.len(), 12);
        assert!(out.records.windows(2).all(|w| w[0].ifo_optimizer <= w[1].ifo_optimizer));
    }

    #[test]
    fn zero_steps_keep_theta() {
        let model = LossModelSpec::logistic(2);
        let p = pop(6);
        let map = ShiftMap::new(ShiftSpec::retention(20.0), 2).unwrap();
        let theta0 = ParamVector::new(vec![0.3, 0.3, -0.3]);
        let cfg = SprintConfig::constant(3, 4, 0.0, 1, 2);
        let out = sprint_run(&cfg, Problem::new(&model, &map, &p), &theta0).unwrap();
        assert_eq!(out.final_theta, theta0);
    }

    #[test]
    fn epochs_round_up() {
        assert_eq!(SprintConfig::epochs_for(100, 10), 10);
        assert_eq!(SprintConfig::epochs_for(101, 10), 11);
        let mut cfg = SprintConfig::constant(0, 1, 0.1, 0, 0);
        assert!(cfg.validate().is_err());
        cfg = SprintConfig::constant(2, 1, 0.1, 0, 0);
        cfg.steps.pop();
        assert!(cfg.validate().is_err());
    }
}
