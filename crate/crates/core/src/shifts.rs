//! Distribution maps `D(θ)`.
//!
//! A map turns the fixed base population into the population induced by
//! deploying `θ`. Three of the four maps are deterministic pushforwards
//! (each base sample is transported by `T_θ`); retention is stochastic and
//! changes only class frequencies.
//!
//! | kind                  | effect of deploying `θ`                                   |
//! |-----------------------|-----------------------------------------------------------|
//! | `identity`            | none                                                      |
//! | `strategic_response`  | `x_s ← x_s + α ∇_x f_θ(x)` on strategic coordinates        |
//! | `retention`           | class `c` drawn with probability `∝ exp(-α ℓ_c(θ))`        |
//! | `gaussian_mean_shift` | `x ← x + ε A θ[..p]` with `A` orthogonal                   |
//!
//! For `gaussian_mean_shift` the transport cost between `D(θ)` and `D(θ')`
//! is exactly `ε ‖A(θ-θ')[..p]‖ ≤ ε ‖θ-θ'‖`, which gives a ground-truth
//! sensitivity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{weighted_risk, LossModelSpec, RiskEvaluation};
use crate::param::ParamVector;
use crate::population::{Population, Sample};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Identity,
    StrategicResponse,
    Retention,
    GaussianMeanShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    /// Shift intensity for `strategic_response` and `retention`.
    #[serde(default)]
    pub alpha: f64,
    /// Designed sensitivity of `gaussian_mean_shift`.
    #[serde(default)]
    pub epsilon_nominal: f64,
    #[serde(default)]
    pub shift_matrix_seed: u64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        ShiftSpec {
            kind: ShiftKind::Identity,
            alpha: 0.0,
            epsilon_nominal: 0.0,
            shift_matrix_seed: 0,
        }
    }

    pub fn strategic(alpha: f64) -> Self {
        ShiftSpec {
            kind: ShiftKind::StrategicResponse,
            alpha,
            ..ShiftSpec::identity()
        }
    }

    pub fn retention(alpha: f64) -> Self {
        ShiftSpec {
            kind: ShiftKind::Retention,
            alpha,
            ..ShiftSpec::identity()
        }
    }

    pub fn gaussian_mean_shift(epsilon: f64, matrix_seed: u64) -> Self {
        ShiftSpec {
            kind: ShiftKind::GaussianMeanShift,
            epsilon_nominal: epsilon,
            shift_matrix_seed: matrix_seed,
            ..ShiftSpec::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and nonnegative"));
        }
        if !(self.epsilon_nominal >= 0.0 && self.epsilon_nominal.is_finite()) {
            return Err(Error::invalid("epsilon_nominal", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// A validated map bound to a feature dimension.
#[derive(Debug, Clone)]
pub struct ShiftMap {
    spec: ShiftSpec,
    feature_dim: usize,
    /// Row-major orthogonal `p × p` matrix (gaussian_mean_shift only).
    matrix: Option<Vec<f64>>,
}

impl ShiftMap {
    pub fn new(spec: ShiftSpec, feature_dim: usize) -> Result<Self> {
        spec.validate()?;
        let matrix = match spec.kind {
            ShiftKind::GaussianMeanShift => Some(random_orthogonal(feature_dim, spec.shift_matrix_seed)),
            _ => None,
        };
        Ok(ShiftMap {
            spec,
            feature_dim,
            matrix,
        })
    }

    pub fn spec(&self) -> &ShiftSpec {
        &self.spec
    }

    pub fn kind(&self) -> ShiftKind {
        self.spec.kind
    }

    /// True for pushforward maps, which transport each base sample.
    pub fn is_pushforward(&self) -> bool {
        self.spec.kind != ShiftKind::Retention
    }

    /// The transport matrix of `gaussian_mean_shift`.
    pub fn matrix(&self) -> Option<&[f64]> {
        self.matrix.as_deref()
    }

    fn check_pop(&self, pop: &Population) -> Result<()> {
        if pop.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if pop.feature_dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "population features",
                expected: self.feature_dim,
                found: pop.feature_dim(),
            });
        }
        Ok(())
    }

    /// `T_θ(z)` for pushforward maps. Retention leaves samples unchanged.
    pub fn push_sample(&self, model: &LossModelSpec, theta: &ParamVector, z: &Sample, mask: &[bool]) -> Result<Sample> {
        let mut features = z.features.clone();
        match self.spec.kind {
            ShiftKind::Identity | ShiftKind::Retention => {}
            ShiftKind::StrategicResponse => {
                if self.spec.alpha != 0.0 {
                    let class = strategic_target(model, z);
                    let g = strategic_feature_grad(model, theta, &z.features, class)?;
                    for (j, f) in features.iter_mut().enumerate() {
                        if mask[j] {
                            *f += self.spec.alpha * g[j];
                        }
                    }
                }
            }
            ShiftKind::GaussianMeanShift => {
                let offset = self.mean_offset(theta);
                for (j, f) in features.iter_mut().enumerate() {
                    if mask[j] {
                        *f += offset[j];
                    }
                }
            }
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "shifted features",
                index,
            });
        }
        Ok(Sample::new(features, z.label))
    }

    /// `ε A θ[..p]`, zero-padded when `d < p`.
    pub fn mean_offset(&self, theta: &ParamVector) -> Vec<f64> {
        let p = self.feature_dim;
        let Some(a) = &self.matrix else {
            return vec![0.0; p];
        };
        let t = theta.as_slice();
        let q = p.min(t.len());
        (0..p)
            .map(|i| {
                let row = &a[i * p..i * p + q];
                self.spec.epsilon_nominal * row.iter().zip(&t[..q]).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect()
    }

    /// Class probabilities of `D(θ)`: the retention softmax, or the base
    /// label frequencies for every other map.
    pub fn class_weights(&self, model: &LossModelSpec, theta: &ParamVector, pop: &Population) -> Result<Vec<f64>> {
        self.check_pop(pop)?;
        if self.spec.kind != ShiftKind::Retention {
            return Ok(crate::population::empirical_class_weights(&pop.base, pop.class_count()));
        }
        let members = pop.class_members();
        let mut losses = Vec::with_capacity(members.len());
        for (class, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::MissingClass { class });
            }
            let mut total = 0.0;
            for &i in idx {
                total += model.loss(theta, &pop.base[i])?;
            }
            losses.push(total / idx.len() as f64);
        }
        class_reweight(&losses, self.spec.alpha)
    }

    /// Realizes `D(θ)` as a population of `n` samples.
    pub fn deploy(&self, model: &LossModelSpec, theta: &ParamVector, pop: &Population, rng: &mut RngStream) -> Result<Population> {
        self.check_pop(pop)?;
        match self.spec.kind {
            ShiftKind::Identity => Ok(pop.realized(pop.base.clone(), pop.class_weights.clone())),
            ShiftKind::Retention => {
                let weights = self.class_weights(model, theta, pop)?;
                let members = pop.class_members();
                let shifted = (0..pop.len())
                    .map(|_| {
                        let c = rng.categorical(&weights);
                        pop.base[members[c][rng.index(members[c].len())]].clone()
                    })
                    .collect();
                Ok(pop.realized(shifted, weights))
            }
            _ => {
                let shifted = pop
                    .base
                    .iter()
                    .map(|z| self.push_sample(model, theta, z, &pop.strategic_mask))
                    .collect::<Result<Vec<_>>>()?;
                Ok(pop.realized(shifted, pop.class_weights.clone()))
            }
        }
    }

    /// Draws one sample from `D(θ)`. For pushforward maps only the drawn
    /// base sample is transported, which has the same law as deploying the
    /// whole population and drawing uniformly.
    pub fn draw(&self, model: &LossModelSpec, theta: &ParamVector, pop: &Population, rng: &mut RngStream) -> Result<Sample> {
        self.check_pop(pop)?;
        match self.spec.kind {
            ShiftKind::Retention => {
                let weights = self.class_weights(model, theta, pop)?;
                let members = pop.class_members();
                let c = rng.categorical(&weights);
                Ok(pop.base[members[c][rng.index(members[c].len())]].clone())
            }
            _ => {
                let i = rng.index(pop.len());
                self.push_sample(model, theta, &pop.base[i], &pop.strategic_mask)
            }
        }
    }

    /// The exact law of `D(θ)` as weighted atoms over the base population.
    pub fn support(&self, model: &LossModelSpec, theta: &ParamVector, pop: &Population) -> Result<Vec<(Sample, f64)>> {
        self.check_pop(pop)?;
        if self.spec.kind == ShiftKind::Retention {
            let weights = self.class_weights(model, theta, pop)?;
            let members = pop.class_members();
            let mut atoms = Vec::with_capacity(pop.len());
            for (c, idx) in members.iter().enumerate() {
                let w = weights[c] / idx.len() as f64;
                atoms.extend(idx.iter().map(|&i| (pop.base[i].clone(), w)));
            }
            return Ok(atoms);
        }
        let w = 1.0 / pop.len() as f64;
        pop.base
            .iter()
            .map(|z| Ok((self.push_sample(model, theta, z, &pop.strategic_mask)?, w)))
            .collect()
    }

    /// Exact decoupled risk `J(θ_model; θ_deploy)` under this map's law.
    pub fn induced_risk(
        &self,
        model: &LossModelSpec,
        theta_model: &ParamVector,
        theta_deploy: &ParamVector,
        pop: &Population,
    ) -> Result<RiskEvaluation> {
        let atoms = self.support(model, theta_deploy, pop)?;
        weighted_risk(model, theta_model, atoms.iter().map(|(z, w)| (z, *w)))
    }
}

/// Realizes `D(θ)`; convenience wrapper around [`ShiftMap::deploy`].
pub fn deploy(
    spec: &ShiftSpec,
    theta: &ParamVector,
    model: &LossModelSpec,
    pop: &Population,
    rng: &mut RngStream,
) -> Result<Population> {
    ShiftMap::new(spec.clone(), pop.feature_dim())?.deploy(model, theta, pop, rng)
}

/// Softmax of `-α · losses` with max-subtraction.
pub fn class_reweight(losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if let Some(index) = losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "class losses", index });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be finite and nonnegative"));
    }
    if losses.is_empty() {
        return Err(Error::invalid("losses", "at least one class is required"));
    }
    let exps: Vec<f64> = losses.iter().map(|l| -alpha * l).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = exps.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Gradient of the class-`class_index` logit with respect to the features.
pub fn strategic_feature_grad(
    model: &LossModelSpec,
    theta: &ParamVector,
    features: &[f64],
    class_index: usize,
) -> Result<Vec<f64>> {
    model.input_grad(theta, features, class_index)
}

// Binary models score the positive class; multiclass models score the
// sample's own label.
fn strategic_target(model: &LossModelSpec, z: &Sample) -> usize {
    if model.class_count == 2 {
        1
    } else {
        z.label
    }
}

/// Gaussian matrix orthonormalized by two passes of modified Gram–Schmidt.
fn random_orthogonal(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, streams::SHIFT);
    let mut cols: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| rng.normal()).collect()).collect();
    for _pass in 0..2 {
        for j in 0..p {
            for k in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let dot: f64 = head[k].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
                for (v, u) in tail[0].iter_mut().zip(&head[k]) {
                    *v -= dot * u;
                }
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
        }
    }
    let mut a = vec![0.0; p * p];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            a[i * p + j] = *v;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pop(n: usize, p: usize, classes: usize, seed: u64) -> Population {
        let mut rng = RngStream::new(seed, 9);
        let base = (0..n)
            .map(|i| Sample::new((0..p).map(|_| rng.normal()).collect(), i % classes))
            .collect();
        Population::new(base, classes).unwrap()
    }

    #[test]
    fn identity_deploy_is_bitwise_base() {
        let pop = toy_pop(8, 3, 2, 1);
        let model = LossModelSpec::logistic(3);
        let theta = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0]);
        let out = deploy(&ShiftSpec::identity(), &theta, &model, &pop, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out.shifted, pop.base);
    }

    #[test]
    fn zero_alpha_strategic_is_bitwise_base() {
        let pop = toy_pop(8, 3, 3, 2);
        let model = LossModelSpec::mlp(3, 4, 3);
        let theta = model.init(&mut RngStream::new(1, 1));
        let out = deploy(&ShiftSpec::strategic(0.0), &theta, &model, &pop, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out.shifted, pop.base);
    }

    #[test]
    fn strategic_moves_only_masked_features() {
        let pop = toy_pop(6, 3, 2, 3).with_strategic_mask(vec![true, false, true]).unwrap();
        let model = LossModelSpec::logistic(3);
        let theta = ParamVector::new(vec![1.0, -2.0, 0.5, 0.0]);
        let out = deploy(&ShiftSpec::strategic(0.4), &theta, &model, &pop, &mut RngStream::new(0, 0)).unwrap();
        for (b, s) in pop.base.iter().zip(&out.shifted) {
            assert_eq!(s.features[1], b.features[1]);
            assert_eq!(s.features[0], b.features[0] + 0.4 * 1.0);
            assert_eq!(s.features[2], b.features[2] + 0.4 * 0.5);
            assert_eq!(s.label, b.label);
        }
    }

    #[test]
    fn reweight_examples() {
        let w = class_reweight(&[0.0, std::f64::consts::LN_2], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(class_reweight(&[1.3; 4], 7.0).unwrap(), vec![0.25; 4]);
        let u = class_reweight(&[0.1, 5.0, 2.0], 0.0).unwrap();
        assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(class_reweight(&[f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn retention_missing_class_is_an_error() {
        let base = vec![Sample::new(vec![0.0], 0), Sample::new(vec![1.0], 0)];
        let pop = Population::new(base, 2).unwrap();
        let model = LossModelSpec::logistic(1);
        let err = deploy(&ShiftSpec::retention(1.0), &ParamVector::zeros(2), &model, &pop, &mut RngStream::new(0, 0))
            .unwrap_err();
        assert_eq!(err, Error::MissingClass { class: 1 });
    }

    #[test]
    fn retention_weights_follow_class_losses() {
        // class 0 sample is predicted perfectly (loss ≈ 0), class 1 at θ=0 has ln 2
        let model = LossModelSpec::logistic(1);
        let base = vec![Sample::new(vec![0.0], 0), Sample::new(vec![0.0], 1)];
        let pop = Population::new(base, 2).unwrap();
        let map = ShiftMap::new(ShiftSpec::retention(1.0), 1).unwrap();
        let w = map.class_weights(&model, &ParamVector::zeros(2), &pop).unwrap();
        // both classes have loss ln 2 at θ = 0
        assert!((w[0] - 0.5).abs() < 1e-15);
        let theta = ParamVector::new(vec![0.0, -1000.0]);
        let w = map.class_weights(&model, &theta, &pop).unwrap();
        let l0 = model.loss(&theta, &pop.base[0]).unwrap();
        let l1 = model.loss(&theta, &pop.base[1]).unwrap();
        let expect = class_reweight(&[l0, l1], 1.0).unwrap();
        assert_eq!(w, expect);
    }

    #[test]
    fn retention_resample_keeps_label_support() {
        let pop = toy_pop(30, 2, 3, 4);
        let model = LossModelSpec::mlp(2, 3, 3);
        let theta = model.init(&mut RngStream::new(2, 2));
        let mut rng = RngStream::new(5, 5);
        let out = deploy(&ShiftSpec::retention(50.0), &theta, &model, &pop, &mut rng).unwrap();
        assert_eq!(out.shifted.len(), 30);
        for s in &out.shifted {
            assert!(pop.base.contains(s));
        }
        assert!((out.class_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deploy_is_reproducible() {
        let pop = toy_pop(20, 2, 2, 6);
        let model = LossModelSpec::logistic(2);
        let theta = ParamVector::new(vec![0.3, -0.2, 0.1]);
        let a = deploy(&ShiftSpec::retention(20.0), &theta, &model, &pop, &mut RngStream::new(8, 3)).unwrap();
        let b = deploy(&ShiftSpec::retention(20.0), &theta, &model, &pop, &mut RngStream::new(8, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_matrix_has_unit_operator_norm() {
        for p in [1, 3, 10] {
            let a = random_orthogonal(p, 17);
            for i in 0..p {
                for j in 0..p {
                    let dot: f64 = (0..p).map(|k| a[k * p + i] * a[k * p + j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - target).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn gaussian_shift_translates_by_offset() {
        let pop = toy_pop(5, 3, 2, 7);
        let model = LossModelSpec::logistic(3);
        let map = ShiftMap::new(ShiftSpec::gaussian_mean_shift(0.1, 3), 3).unwrap();
        let theta = ParamVector::new(vec![1.0, 0.0, 0.0, 5.0]);
        let out = map.deploy(&model, &theta, &pop, &mut RngStream::new(0, 0)).unwrap();
        let a = map.matrix().unwrap();
        for (b, s) in pop.base.iter().zip(&out.shifted) {
            for i in 0..3 {
                assert!((s.features[i] - b.features[i] - 0.1 * a[i * 3]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn support_weights_sum_to_one() {
        let pop = toy_pop(7, 2, 3, 8);
        let model = LossModelSpec::mlp(2, 3, 3);
        let theta = model.init(&mut RngStream::new(3, 3));
        for spec in [
            ShiftSpec::identity(),
            ShiftSpec::strategic(0.2),
            ShiftSpec::retention(20.0),
            ShiftSpec::gaussian_mean_shift(0.1, 1),
        ] {
            let map = ShiftMap::new(spec, 2).unwrap();
            let atoms = map.support(&model, &theta, &pop).unwrap();
            assert!((atoms.iter().map(|a| a.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reweight_is_a_shift_invariant_simplex(
                losses in proptest::collection::vec(0.0f64..5.0, 1..8),
                alpha in 0.0f64..80.0,
                c in -3.0f64..3.0,
            ) {
                let w = class_reweight(&losses, alpha).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|&v| v >= 0.0));
                let shifted: Vec<f64> = losses.iter().map(|l| l + c).collect();
                let w2 = class_reweight(&shifted, alpha).unwrap();
                for (a, b) in w.iter().zip(&w2) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
