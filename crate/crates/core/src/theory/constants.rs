//! Randomized estimates of the problem constants.
//!
//! Every estimator returns a maximum of observed ratios, so it is a lower
//! bound on the true constant and never decreases as trials are added.

use serde::{Deserialize, Serialize};

use super::wasserstein::w1_weighted;
use crate::error::{Error, Result};
use crate::models::{weighted_risk, LossModelSpec, ModelKind};
use crate::param::ParamVector;
use crate::population::{Population, Sample};
use crate::rng::{streams, RngStream};
use crate::shifts::ShiftMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    pub smoothness: f64,
    pub loss_lipschitz: f64,
    pub sensitivity: f64,
    pub variance_floor: f64,
    pub variance_growth: f64,
    pub trial_count: usize,
}

/// Where random parameter vectors are drawn from: the box `[-r, r]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub trials: usize,
    pub radius: f64,
}

impl Probe {
    pub fn new(trials: usize, radius: f64) -> Self {
        Probe { trials, radius }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("radius", "must be finite and positive"));
        }
        Ok(())
    }
}

fn random_theta(dim: usize, radius: f64, rng: &mut RngStream) -> ParamVector {
    ParamVector::new((0..dim).map(|_| rng.uniform_in(-radius, radius)).collect())
}

fn random_unit(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A pair `(θ, θ')` drawn from the probe box: either two independent
/// points or a point and a small perturbation of it, alternating.
pub fn random_pair(dim: usize, radius: f64, trial: usize, rng: &mut RngStream) -> (ParamVector, ParamVector) {
    let a = random_theta(dim, radius, rng);
    if trial.is_multiple_of(2) {
        let b = random_theta(dim, radius, rng);
        (a, b)
    } else {
        let u = random_unit(dim, rng);
        let h = radius * 10f64.powf(rng.uniform_in(-4.0, 0.0));
        let b = ParamVector::new(a.iter().zip(&u).map(|(x, d)| x + h * d).collect());
        (a, b)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Max over pairs of `Ŵ₁(D(θ), D(θ'))/‖θ − θ'‖`.
///
/// Pushforward maps use the identity coupling cost
/// `(1/n) Σ ‖T_θ(z_i) − T_θ'(z_i)‖`, an upper bound on `W₁`. Retention
/// compares the exact weighted laws feature by feature and sums the 1-D
/// distances.
pub fn estimate_sensitivity(
    map: &ShiftMap,
    model: &LossModelSpec,
    pop: &Population,
    pairs: &[(ParamVector, ParamVector)],
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (theta, theta_p) in pairs {
        let dist = theta.distance(theta_p)?;
        if dist == 0.0 {
            return Err(Error::invalid("theta_pairs", "pair at zero distance"));
        }
        let w1 = if map.is_pushforward() {
            let mut total = 0.0;
            for z in &pop.base {
                let a = map.push_sample(model, theta, z, &pop.strategic_mask)?;
                let b = map.push_sample(model, theta_p, z, &pop.strategic_mask)?;
                total += euclid(&a.features, &b.features);
            }
            total / pop.len() as f64
        } else {
            let sa = map.support(model, theta, pop)?;
            let sb = map.support(model, theta_p, pop)?;
            let wa: Vec<f64> = sa.iter().map(|(_, w)| *w).collect();
            let wb: Vec<f64> = sb.iter().map(|(_, w)| *w).collect();
            let mut total = 0.0;
            for j in 0..pop.feature_dim() {
                let xa: Vec<f64> = sa.iter().map(|(z, _)| z.features[j]).collect();
                let xb: Vec<f64> = sb.iter().map(|(z, _)| z.features[j]).collect();
                total += w1_weighted(&xa, &wa, &xb, &wb)?;
            }
            total
        };
        best = best.max(w1 / dist);
    }
    Ok(best)
}

/// Max over random `(z, θ, θ')` of `‖∇ℓ(z;θ) − ∇ℓ(z;θ')‖ / ‖θ − θ'‖`.
pub fn estimate_smoothness(model: &LossModelSpec, pop: &Population, probe: Probe, rng: &mut RngStream) -> Result<f64> {
    probe.validate()?;
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut best: f64 = 0.0;
    let mut used = 0;
    for trial in 0..probe.trials {
        let z = &pop.base[rng.index(pop.len())];
        let (a, b) = random_pair(model.dim(), probe.radius, trial, rng);
        let dist = a.distance(&b)?;
        if dist == 0.0 {
            continue;
        }
        used += 1;
        let ga = model.grad(&a, z)?;
        let gb = model.grad(&b, z)?;
        best = best.max(ga.distance(&gb)? / dist);
    }
    if used == 0 {
        return Err(Error::DegenerateTrials { trials: probe.trials });
    }
    Ok(best)
}

/// Max over random `(z, z', θ)` of `|ℓ(z;θ) − ℓ(z';θ)| / ‖z − z'‖`, with
/// `z'` a feature perturbation of a base sample carrying the same label.
pub fn estimate_loss_lipschitz(model: &LossModelSpec, pop: &Population, probe: Probe, rng: &mut RngStream) -> Result<f64> {
    probe.validate()?;
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let p = pop.feature_dim();
    let mut best: f64 = 0.0;
    for _ in 0..probe.trials {
        let z = &pop.base[rng.index(pop.len())];
        let theta = random_theta(model.dim(), probe.radius, rng);
        let u = random_unit(p, rng);
        let scale = 1.0 + z.features.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let h = scale * 10f64.powf(rng.uniform_in(-4.0, 0.0));
        let moved = Sample::new(z.features.iter().zip(&u).map(|(x, d)| x + h * d).collect(), z.label);
        let dist = euclid(&z.features, &moved.features);
        if dist == 0.0 {
            continue;
        }
        let diff = (model.loss(&theta, z)? - model.loss(&theta, &moved)?).abs();
        best = best.max(diff / dist);
    }
    Ok(best)
}

/// `(σ₀, σ₁)` from a least-squares fit of `V = σ₀² + σ₁² G` over random
/// `(θ₁, θ₂)`, where `V` is the exact per-sample gradient variance under
/// `D(θ₂)` and `G = ‖∇J(θ₁;θ₂)‖²`. Negative coefficients are clamped and
/// the other one refit so the bound covers every observed pair.
pub fn estimate_variance(
    model: &LossModelSpec,
    map: &ShiftMap,
    pop: &Population,
    probe: Probe,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    probe.validate()?;
    let mut obs = Vec::with_capacity(probe.trials);
    for trial in 0..probe.trials {
        let (t1, t2) = random_pair(model.dim(), probe.radius, trial, rng);
        let atoms = map.support(model, &t2, pop)?;
        let mean = weighted_risk(model, &t1, atoms.iter().map(|(z, w)| (z, *w)))?.gradient;
        let mut v = 0.0;
        for (z, w) in &atoms {
            let g = model.grad(&t1, z)?;
            v += w * g.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let g2 = mean.iter().map(|x| x * x).sum::<f64>();
        obs.push((g2, v));
    }
    let (s0, s1) = fit_affine_cover(&obs);
    Ok((s0.sqrt(), s1.sqrt()))
}

/// Fits `v ≈ a + b·g`, clamps to `a, b ≥ 0`, then raises `a` until every
/// observation is covered.
fn fit_affine_cover(obs: &[(f64, f64)]) -> (f64, f64) {
    let n = obs.len() as f64;
    let mg = obs.iter().map(|o| o.0).sum::<f64>() / n;
    let mv = obs.iter().map(|o| o.1).sum::<f64>() / n;
    let sgg: f64 = obs.iter().map(|o| (o.0 - mg) * (o.0 - mg)).sum();
    let sgv: f64 = obs.iter().map(|o| (o.0 - mg) * (o.1 - mv)).sum();
    let mut b = if sgg > 0.0 { (sgv / sgg).max(0.0) } else { 0.0 };
    let mut a = mv - b * mg;
    if a < 0.0 {
        a = 0.0;
        b = obs
            .iter()
            .filter(|o| o.0 > 0.0)
            .map(|o| o.1 / o.0)
            .fold(0.0, f64::max);
    }
    let slack = obs.iter().map(|o| o.1 - a - b * o.0).fold(0.0, f64::max);
    (a + slack, b)
}

/// Runs all estimators on independent substreams of `(seed, THEORY)`.
/// Sensitivity pairs are drawn from the same probe box.
pub fn estimate_constants(
    model: &LossModelSpec,
    map: &ShiftMap,
    pop: &Population,
    probe: Probe,
    variance_pairs: usize,
    seed: u64,
) -> Result<ConstantsEstimate> {
    probe.validate()?;
    let root = RngStream::new(seed, streams::THEORY);
    let l_hat = estimate_smoothness(model, pop, probe, &mut root.substream(0))?;
    let l0_hat = estimate_loss_lipschitz(model, pop, probe, &mut root.substream(1))?;
    let mut pair_rng = root.substream(2);
    let pairs: Vec<_> = (0..probe.trials)
        .map(|t| random_pair(model.dim(), probe.radius, t, &mut pair_rng))
        .filter(|(a, b)| a != b)
        .collect();
    let sensitivity = estimate_sensitivity(map, model, pop, &pairs)?;
    let (variance_floor, variance_growth) = if variance_pairs > 0 {
        estimate_variance(model, map, pop, Probe::new(variance_pairs, probe.radius), &mut root.substream(3))?
    } else {
        (0.0, 0.0)
    };
    Ok(ConstantsEstimate {
        smoothness: l_hat,
        loss_lipschitz: l0_hat,
        sensitivity,
        variance_floor,
        variance_growth,
        trial_count: probe.trials,
    })
}

/// `¼ max ‖x̃‖² + l2` over the base population, with `x̃ = [x; 1]`: a
/// global bound on the logistic Hessian.
pub fn logistic_smoothness_bound(model: &LossModelSpec, pop: &Population) -> Result<f64> {
    if model.kind != ModelKind::LogisticBinary {
        return Err(Error::invalid("model", "closed-form bound needs the logistic model"));
    }
    let max_sq = pop
        .base
        .iter()
        .map(|z| 1.0 + z.features.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(0.25 * max_sq + model.l2)
}

/// `‖w‖`, the Lipschitz constant of the logistic loss in `x` at `θ = [w; b]`.
pub fn logistic_loss_lipschitz(model: &LossModelSpec, theta: &ParamVector) -> Result<f64> {
    if model.kind != ModelKind::LogisticBinary {
        return Err(Error::invalid("model", "closed-form bound needs the logistic model"));
    }
    theta.check_len(model.dim(), "theta")?;
    Ok(theta.as_slice()[..model.input_dim].iter().map(|w| w * w).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shifts::ShiftSpec;
    use proptest::prelude::*;

    fn gaussian_pop(n: usize, p: usize, seed: u64) -> Population {
        let mut rng = RngStream::new(seed, streams::DATA);
        let base = (0..n)
            .map(|i| Sample::new((0..p).map(|_| rng.normal()).collect(), i % 2))
            .collect();
        Population::new(base, 2).unwrap()
    }

    #[test]
    fn identity_map_is_insensitive() {
        let model = LossModelSpec::logistic(3);
        let pop = gaussian_pop(10, 3, 1);
        let map = ShiftMap::new(ShiftSpec::identity(), 3).unwrap();
        let mut rng = RngStream::new(2, streams::THEORY);
        let pairs: Vec<_> = (0..10).map(|t| random_pair(4, 1.0, t, &mut rng)).collect();
        assert_eq!(estimate_sensitivity(&map, &model, &pop, &pairs).unwrap(), 0.0);
    }

    #[test]
    fn zero_distance_pair_rejected() {
        let model = LossModelSpec::logistic(2);
        let pop = gaussian_pop(4, 2, 1);
        let map = ShiftMap::new(ShiftSpec::identity(), 2).unwrap();
        let t = ParamVector::zeros(3);
        assert!(estimate_sensitivity(&map, &model, &pop, &[(t.clone(), t)]).is_err());
    }

    #[test]
    fn mean_shift_sensitivity_is_capped_by_nominal() {
        let model = LossModelSpec::logistic(4);
        let pop = gaussian_pop(12, 4, 3);
        let map = ShiftMap::new(ShiftSpec::gaussian_mean_shift(0.1, 9), 4).unwrap();
        let mut rng = RngStream::new(5, streams::THEORY);
        let pairs: Vec<_> = (0..50).map(|t| random_pair(5, 2.0, t, &mut rng)).collect();
        let eps = estimate_sensitivity(&map, &model, &pop, &pairs).unwrap();
        assert!(eps <= 0.1 + 1e-10, "{eps}");
        assert!(eps > 0.0);
    }

    #[test]
    fn retention_sensitivity_is_finite_and_positive() {
        let model = LossModelSpec::logistic(2);
        let pop = gaussian_pop(10, 2, 4);
        let map = ShiftMap::new(ShiftSpec::retention(20.0), 2).unwrap();
        let pairs = vec![(ParamVector::new(vec![1.0, 0.0, 0.0]), ParamVector::new(vec![-1.0, 0.5, 0.0]))];
        let eps = estimate_sensitivity(&map, &model, &pop, &pairs).unwrap();
        assert!(eps.is_finite() && eps > 0.0);
    }

    #[test]
    fn logistic_smoothness_under_closed_form() {
        let model = LossModelSpec::logistic(3).with_l2(1e-3);
        let pop = gaussian_pop(20, 3, 6);
        let bound = logistic_smoothness_bound(&model, &pop).unwrap();
        let est = estimate_smoothness(&model, &pop, Probe::new(500, 3.0), &mut RngStream::new(1, 4)).unwrap();
        assert!(est <= bound + 1e-9, "{est} > {bound}");
    }

    #[test]
    fn zero_features_leave_only_the_bias_curvature() {
        let model = LossModelSpec::logistic(3);
        let base = (0..6).map(|i| Sample::new(vec![0.0; 3], i % 2)).collect();
        let pop = Population::new(base, 2).unwrap();
        let est = estimate_smoothness(&model, &pop, Probe::new(200, 2.0), &mut RngStream::new(1, 4)).unwrap();
        assert!(est <= 0.25 + 1e-12, "{est}");
    }

    #[test]
    fn single_trial_is_reproducible() {
        let model = LossModelSpec::mlp(2, 3, 2);
        let pop = gaussian_pop(5, 2, 8);
        let a = estimate_smoothness(&model, &pop, Probe::new(1, 1.0), &mut RngStream::new(3, 4)).unwrap();
        let b = estimate_smoothness(&model, &pop, Probe::new(1, 1.0), &mut RngStream::new(3, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_lipschitz_under_weight_norm() {
        let model = LossModelSpec::logistic(3);
        let pop = gaussian_pop(10, 3, 2);
        let mut rng = RngStream::new(1, 4);
        for _ in 0..50 {
            let theta = random_theta(4, 2.0, &mut rng);
            let bound = logistic_loss_lipschitz(&model, &theta).unwrap();
            let z = &pop.base[rng.index(10)];
            let u = random_unit(3, &mut rng);
            let moved = Sample::new(z.features.iter().zip(&u).map(|(x, d)| x + 0.3 * d).collect(), z.label);
            let diff = (model.loss(&theta, z).unwrap() - model.loss(&theta, &moved).unwrap()).abs();
            assert!(diff <= bound * 0.3 + 1e-12);
        }
        let est = estimate_loss_lipschitz(&model, &pop, Probe::new(100, 1.0), &mut rng).unwrap();
        assert!(est <= 3f64.sqrt() + 1e-9);
    }

    #[test]
    fn affine_cover_contains_every_observation() {
        let obs = [(0.0, 1.0), (1.0, 3.5), (2.0, 4.0), (4.0, 9.0)];
        let (a, b) = fit_affine_cover(&obs);
        assert!(a >= 0.0 && b >= 0.0);
        for (g, v) in obs {
            assert!(v <= a + b * g + 1e-12);
        }
    }

    #[test]
    fn variance_is_zero_on_a_singleton() {
        let model = LossModelSpec::logistic(2);
        let pop = Population::new(vec![Sample::new(vec![1.0, 2.0], 1)], 2).unwrap();
        let map = ShiftMap::new(ShiftSpec::identity(), 2).unwrap();
        let (s0, s1) = estimate_variance(&model, &map, &pop, Probe::new(8, 1.0), &mut RngStream::new(1, 4)).unwrap();
        assert!(s0.abs() < 1e-12 && s1.abs() < 1e-12, "{s0} {s1}");
    }

    #[test]
    fn estimates_grow_with_trial_count() {
        let model = LossModelSpec::logistic(3);
        let pop = gaussian_pop(10, 3, 2);
        let map = ShiftMap::new(ShiftSpec::strategic(0.3), 3).unwrap();
        let small = estimate_constants(&model, &map, &pop, Probe::new(20, 1.0), 0, 7).unwrap();
        let large = estimate_constants(&model, &map, &pop, Probe::new(60, 1.0), 0, 7).unwrap();
        assert!(large.smoothness >= small.smoothness);
        assert!(large.loss_lipschitz >= small.loss_lipschitz);
        assert!(large.sensitivity >= small.sensitivity);
    }

    proptest! {
        #[test]
        fn mean_shift_never_exceeds_nominal(
            eps in 0.001f64..1.0, seed in any::<u64>(), pair_seed in any::<u64>(),
        ) {
            let model = LossModelSpec::logistic(3);
            let pop = gaussian_pop(6, 3, 1);
            let map = ShiftMap::new(ShiftSpec::gaussian_mean_shift(eps, seed), 3).unwrap();
            let mut rng = RngStream::new(pair_seed, streams::THEORY);
            let pairs: Vec<_> = (0..8).map(|t| random_pair(4, 5.0, t, &mut rng)).collect();
            let est = estimate_sensitivity(&map, &model, &pop, &pairs).unwrap();
            prop_assert!(est <= eps + 1e-10);
        }
    }
}
