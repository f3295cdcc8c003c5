//! Cross-entropy loss models with exact gradients, and the decoupled risk
//! `J(θ_model; θ_deploy)` evaluated over a realized population.
//!
//! Two model families are supported:
//!
//! * `LogisticBinary`: `θ = [w (p entries), b]`, score `z = w·x + b`.
//!   Its class logits are `[0, z]`, so the softmax over them is the sigmoid.
//! * `MlpSoftmax`: one tanh hidden layer of width `h` and `C` output logits.
//!   The flat layout is hidden weights (`h × p`, row-major), hidden biases
//!   (`h`), output weights (`C × h`, row-major), output biases (`C`).
//!
//! Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` before the softmax.
//! Gradients pass straight through the clamp, so they are exact wherever
//! the clamp is inactive and stay finite everywhere else.
//!
//! An optional ridge term `l2/2 · ‖θ‖²` is added to every per-sample loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::population::{Population, Sample};
use crate::rng::RngStream;

pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticBinary,
    MlpSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored by the logistic model.
    pub hidden_dim: usize,
    pub class_count: usize,
    pub init_scale: f64,
    #[serde(default)]
    pub l2: f64,
}

/// Mean loss, mean gradient and the number of per-sample gradients spent.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEvaluation {
    pub value: f64,
    pub gradient: ParamVector,
    pub ifo_cost: u64,
}

impl LossModelSpec {
    pub fn logistic(input_dim: usize) -> Self {
        LossModelSpec {
            kind: ModelKind::LogisticBinary,
            input_dim,
            hidden_dim: 0,
            class_count: 2,
            init_scale: 0.1,
            l2: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, class_count: usize) -> Self {
        LossModelSpec {
            kind: ModelKind::MlpSoftmax,
            input_dim,
            hidden_dim,
            class_count,
            init_scale: 0.1,
            l2: 0.0,
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> Self {
        self.init_scale = init_scale;
        self
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        let (p, h, c) = (self.input_dim, self.hidden_dim, self.class_count);
        match self.kind {
            ModelKind::LogisticBinary => p + 1,
            ModelKind::MlpSoftmax => h * (p + 1) + c * (h + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        match self.kind {
            ModelKind::LogisticBinary if self.class_count != 2 => {
                return Err(Error::invalid("class_count", "logistic_binary requires exactly 2 classes"));
            }
            ModelKind::MlpSoftmax if self.hidden_dim == 0 => {
                return Err(Error::invalid("hidden_dim", "mlp_softmax requires a hidden layer"));
            }
            ModelKind::MlpSoftmax if self.class_count < 2 => {
                return Err(Error::invalid("class_count", "at least two classes are required"));
            }
            _ => {}
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale", "must be finite and nonnegative"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// I.i.d. uniform draws in `[-init_scale, init_scale]`.
    pub fn init(&self, rng: &mut RngStream) -> ParamVector {
        let s = self.init_scale;
        ParamVector::new((0..self.dim()).map(|_| rng.uniform_in(-s, s)).collect())
    }

    fn check(&self, theta: &ParamVector, features: &[f64]) -> Result<()> {
        theta.check_len(self.dim(), "theta")?;
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "sample features",
                expected: self.input_dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.class_count {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.class_count,
            });
        }
        Ok(())
    }

    /// Unclamped class logits.
    pub fn logits(&self, theta: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, features)?;
        let t = theta.as_slice();
        Ok(match self.kind {
            ModelKind::LogisticBinary => vec![0.0, logistic_score(t, features)],
            ModelKind::MlpSoftmax => {
                let net = Mlp::new(self, t);
                let hidden = net.hidden(features);
                net.output(&hidden)
            }
        })
    }

    pub fn predict(&self, theta: &ParamVector, features: &[f64]) -> Result<usize> {
        let logits = self.logits(theta, features)?;
        Ok(argmax(&logits))
    }

    pub fn loss(&self, theta: &ParamVector, z: &Sample) -> Result<f64> {
        self.check(theta, &z.features)?;
        self.check_label(z.label)?;
        let t = theta.as_slice();
        let data_loss = match self.kind {
            ModelKind::LogisticBinary => {
                let zc = clamp_logit(logistic_score(t, &z.features));
                if z.label == 1 {
                    softplus(-zc)
                } else {
                    softplus(zc)
                }
            }
            ModelKind::MlpSoftmax => {
                let net = Mlp::new(self, t);
                let hidden = net.hidden(&z.features);
                let logits: Vec<f64> = net.output(&hidden).into_iter().map(clamp_logit).collect();
                cross_entropy(&logits, z.label)
            }
        };
        Ok(data_loss + self.ridge(t))
    }

    pub fn grad(&self, theta: &ParamVector, z: &Sample) -> Result<ParamVector> {
        let mut out = vec![0.0; self.dim()];
        self.accumulate(theta, z, 1.0, &mut out)?;
        Ok(ParamVector::new(out))
    }

    /// Adds `weight · ∇ℓ(z; θ)` into `out` and returns `ℓ(z; θ)`.
    pub fn accumulate(&self, theta: &ParamVector, z: &Sample, weight: f64, out: &mut [f64]) -> Result<f64> {
        self.check(theta, &z.features)?;
        self.check_label(z.label)?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "gradient buffer",
                expected: self.dim(),
                found: out.len(),
            });
        }
        let t = theta.as_slice();
        let x = &z.features;
        let data_loss = match self.kind {
            ModelKind::LogisticBinary => {
                let p = self.input_dim;
                let zc = clamp_logit(logistic_score(t, x));
                let y = z.label as f64;
                let r = weight * (sigmoid(zc) - y);
                for j in 0..p {
                    out[j] += r * x[j];
                }
                out[p] += r;
                if z.label == 1 {
                    softplus(-zc)
                } else {
                    softplus(zc)
                }
            }
            ModelKind::MlpSoftmax => Mlp::new(self, t).accumulate(x, z.label, weight, out),
        };
        if self.l2 > 0.0 {
            for (o, v) in out.iter_mut().zip(t) {
                *o += weight * self.l2 * v;
            }
        }
        Ok(data_loss + self.ridge(t))
    }

    /// Gradient of the unclamped logit of `class_index` with respect to the
    /// input features.
    pub fn input_grad(&self, theta: &ParamVector, features: &[f64], class_index: usize) -> Result<Vec<f64>> {
        self.check(theta, features)?;
        self.check_label(class_index)?;
        let t = theta.as_slice();
        Ok(match self.kind {
            ModelKind::LogisticBinary => {
                if class_index == 1 {
                    t[..self.input_dim].to_vec()
                } else {
                    vec![0.0; self.input_dim]
                }
            }
            ModelKind::MlpSoftmax => Mlp::new(self, t).input_grad(features, class_index),
        })
    }

    fn ridge(&self, t: &[f64]) -> f64 {
        if self.l2 > 0.0 {
            0.5 * self.l2 * t.iter().map(|v| v * v).sum::<f64>()
        } else {
            0.0
        }
    }
}

/// Weighted risk over explicit atoms `(sample, weight)`; weights should sum
/// to one. Every atom costs one gradient evaluation.
pub fn weighted_risk<'a, I>(spec: &LossModelSpec, theta: &ParamVector, atoms: I) -> Result<RiskEvaluation>
where
    I: IntoIterator<Item = (&'a Sample, f64)>,
{
    let mut gradient = vec![0.0; spec.dim()];
    let mut value = 0.0;
    let mut count = 0u64;
    for (z, w) in atoms {
        value += w * spec.accumulate(theta, z, w, &mut gradient)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyPopulation);
    }
    Ok(RiskEvaluation {
        value,
        gradient: ParamVector::new(gradient),
        ifo_cost: count,
    })
}

/// `J(θ_model; θ')` where `pop.shifted` is the realization of `D(θ')`.
pub fn decoupled_risk(spec: &LossModelSpec, theta_model: &ParamVector, pop: &Population) -> Result<RiskEvaluation> {
    let n = pop.shifted.len();
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    let w = 1.0 / n as f64;
    weighted_risk(spec, theta_model, pop.shifted.iter().map(|z| (z, w)))
}

/// Fraction of `samples` classified correctly.
pub fn accuracy(spec: &LossModelSpec, theta: &ParamVector, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut hits = 0usize;
    for z in samples {
        if spec.predict(theta, &z.features)? == z.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

struct Mlp<'a> {
    p: usize,
    h: usize,
    c: usize,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl<'a> Mlp<'a> {
    fn new(spec: &LossModelSpec, t: &'a [f64]) -> Self {
        let (p, h, c) = (spec.input_dim, spec.hidden_dim, spec.class_count);
        let (w1, rest) = t.split_at(h * p);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        Mlp { p, h, c, w1, b1, w2, b2 }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.h)
            .map(|j| {
                let row = &self.w1[j * self.p..(j + 1) * self.p];
                let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
                a.tanh()
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.c)
            .map(|k| {
                let row = &self.w2[k * self.h..(k + 1) * self.h];
                row.iter().zip(hidden).map(|(w, v)| w * v).sum::<f64>() + self.b2[k]
            })
            .collect()
    }

    fn accumulate(&self, x: &[f64], label: usize, weight: f64, out: &mut [f64]) -> f64 {
        let (p, h, c) = (self.p, self.h, self.c);
        let hidden = self.hidden(x);
        let logits: Vec<f64> = self.output(&hidden).into_iter().map(clamp_logit).collect();
        let loss = cross_entropy(&logits, label);

        let mut delta_out = softmax(&logits);
        delta_out[label] -= 1.0;
        for d in delta_out.iter_mut() {
            *d *= weight;
        }

        let (g_w1, rest) = out.split_at_mut(h * p);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(c * h);

        let mut delta_hidden = vec![0.0; h];
        for k in 0..c {
            let dk = delta_out[k];
            g_b2[k] += dk;
            let row = &self.w2[k * h..(k + 1) * h];
            let g_row = &mut g_w2[k * h..(k + 1) * h];
            for j in 0..h {
                g_row[j] += dk * hidden[j];
                delta_hidden[j] += dk * row[j];
            }
        }
        for j in 0..h {
            let dj = delta_hidden[j] * (1.0 - hidden[j] * hidden[j]);
            g_b1[j] += dj;
            let g_row = &mut g_w1[j * p..(j + 1) * p];
            for (g, v) in g_row.iter_mut().zip(x) {
                *g += dj * v;
            }
        }
        loss
    }

    fn input_grad(&self, x: &[f64], class_index: usize) -> Vec<f64> {
        let (p, h) = (self.p, self.h);
        let hidden = self.hidden(x);
        let out_row = &self.w2[class_index * h..(class_index + 1) * h];
        let mut g = vec![0.0; p];
        for j in 0..h {
            let dj = out_row[j] * (1.0 - hidden[j] * hidden[j]);
            for (gi, w) in g.iter_mut().zip(&self.w1[j * p..(j + 1) * p]) {
                *gi += dj * w;
            }
        }
        g
    }
}

fn logistic_score(t: &[f64], x: &[f64]) -> f64 {
    let p = x.len();
    t[..p].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + t[p]
}

fn clamp_logit(z: f64) -> f64 {
    z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `logsumexp(logits) - logits[label]`, split so both parts are nonnegative.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    (m - logits[label]) + s.ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
