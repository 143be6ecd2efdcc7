//! Per-sample loss and gradient providers.
//!
//! Parameters are one flat vector. Layouts:
//! - `Mean`: `[μ]`
//! - `Logistic`: `[w (d), b]`, single-logit binary cross-entropy
//! - `Softmax`: `[W (K×d, row-major), b (K)]`
//! - `Mlp`: `[W1 (h×d), b1 (h), W2 (K×h), b2 (K)]`, ReLU hidden layer
//!
//! Gradients follow the descent convention `∂ℒ_i/∂θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, l2_norm, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mean,
    Logistic,
    Softmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default = "two")]
    pub num_classes: usize,
    #[serde(default)]
    pub hidden: usize,
}

fn two() -> usize {
    2
}

impl ModelSpec {
    pub fn mean() -> Self {
        Self { kind: ModelKind::Mean, input_dim: 1, num_classes: 1, hidden: 0 }
    }

    pub fn logistic(input_dim: usize) -> Self {
        Self { kind: ModelKind::Logistic, input_dim, num_classes: 2, hidden: 0 }
    }

    pub fn softmax(input_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Softmax, input_dim, num_classes, hidden: 0 }
    }

    pub fn mlp(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Mlp, input_dim, num_classes, hidden }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Mean if self.input_dim != 1 => {
                Err(Error::param("mean estimator takes one-dimensional input"))
            }
            ModelKind::Logistic if self.num_classes != 2 => {
                Err(Error::param("binary logistic regression needs num_classes = 2"))
            }
            ModelKind::Softmax | ModelKind::Mlp if self.num_classes < 2 => {
                Err(Error::param("classifier needs at least 2 classes"))
            }
            ModelKind::Mlp if self.hidden == 0 => Err(Error::param("mlp needs hidden width >= 1")),
            _ if self.input_dim == 0 => Err(Error::param("input dimension must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn num_params(&self) -> usize {
        let (d, k, h) = (self.input_dim, self.num_classes, self.hidden);
        match self.kind {
            ModelKind::Mean => 1,
            ModelKind::Logistic => d + 1,
            ModelKind::Softmax => k * d + k,
            ModelKind::Mlp => h * d + h + k * h + k,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.kind != ModelKind::Mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl ModelState {
    pub fn new(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.num_params() {
            return Err(Error::Dimension { expected: spec.num_params(), got: params.len() });
        }
        Ok(Self { spec, params })
    }
}

/// Zero for the mean estimator and all biases; weights uniform in `±1/√fan_in`.
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> Result<ModelState> {
    spec.validate()?;
    let (d, k, h) = (spec.input_dim, spec.num_classes, spec.hidden);
    let mut params = Vec::with_capacity(spec.num_params());
    let mut weights = |count: usize, fan_in: usize, out: &mut Vec<f64>| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        out.extend((0..count).map(|_| rng.uniform_range(-bound, bound)));
    };
    match spec.kind {
        ModelKind::Mean => params.push(0.0),
        ModelKind::Logistic => {
            weights(d, d, &mut params);
            params.push(0.0);
        }
        ModelKind::Softmax => {
            weights(k * d, d, &mut params);
            params.extend(std::iter::repeat_n(0.0, k));
        }
        ModelKind::Mlp => {
            weights(h * d, d, &mut params);
            params.extend(std::iter::repeat_n(0.0, h));
            weights(k * h, h, &mut params);
            params.extend(std::iter::repeat_n(0.0, k));
        }
    }
    ModelState::new(spec.clone(), params)
}

/// Per-sample losses, gradients (one row per sample), and gradient norms.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    losses: Vec<f64>,
    grads: Matrix,
    norms: Vec<f64>,
}

impl PerSampleGrads {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn grads(&self) -> &Matrix {
        &self.grads
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            f64::NAN
        } else {
            self.losses.iter().sum::<f64>() / self.losses.len() as f64
        }
    }
}

fn check_batch(state: &ModelState, features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.cols() != state.spec.input_dim {
        return Err(Error::Dimension { expected: state.spec.input_dim, got: features.cols() });
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension { expected: features.rows(), got: labels.len() });
    }
    if state.spec.is_classifier() {
        if let Some(&bad) = labels.iter().find(|&&l| l >= state.spec.num_classes) {
            return Err(Error::param(format!("label {bad} >= num_classes {}", state.spec.num_classes)));
        }
    }
    Ok(())
}

pub fn per_sample_loss_grads(state: &ModelState, features: &Matrix, labels: &[usize]) -> Result<PerSampleGrads> {
    check_batch(state, features, labels)?;
    let p = state.spec.num_params();
    let n = features.rows();
    let mut grads = Matrix::zeros(n, p);
    let mut losses = Vec::with_capacity(n);
    let mut scratch = Scratch::new(&state.spec);
    for (i, &y) in labels.iter().enumerate() {
        let loss = sample_grad(state, features.row(i), y, grads.row_mut(i), &mut scratch);
        losses.push(loss);
    }
    let norms = grads.iter_rows().map(l2_norm).collect();
    Ok(PerSampleGrads { losses, grads, norms })
}

/// Forward-only loss of one sample.
pub fn sample_loss(state: &ModelState, x: &[f64], y: usize) -> f64 {
    let mut scratch = Scratch::new(&state.spec);
    forward(state, x, y, &mut scratch)
}

/// Mean loss over a batch, computed on the forward path only.
pub fn batch_loss(state: &ModelState, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check_batch(state, features, labels)?;
    let mut scratch = Scratch::new(&state.spec);
    let total: f64 = features
        .iter_rows()
        .zip(labels)
        .map(|(x, &y)| forward(state, x, y, &mut scratch))
        .sum();
    Ok(total / features.rows().max(1) as f64)
}

struct Scratch {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden_pre: vec![0.0; spec.hidden],
            hidden: vec![0.0; spec.hidden],
            logits: vec![0.0; spec.num_classes],
            delta_hidden: vec![0.0; spec.hidden],
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Replaces logits with softmax probabilities and returns log-sum-exp.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter_mut().for_each(|z| *z = (*z - lse).exp());
    lse
}

fn linear(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = dot(&weights[k * d..(k + 1) * d], x) + bias[k];
    }
}

/// Runs the forward pass, leaving activations in `scratch`, and returns the loss.
/// For classifiers `scratch.logits` ends up holding probabilities.
fn forward(state: &ModelState, x: &[f64], y: usize, s: &mut Scratch) -> f64 {
    let spec = &state.spec;
    let theta = &state.params;
    let (d, k, h) = (spec.input_dim, spec.num_classes, spec.hidden);
    match spec.kind {
        ModelKind::Mean => 0.5 * (x[0] - theta[0]).powi(2),
        ModelKind::Logistic => {
            let z = dot(&theta[..d], x) + theta[d];
            softplus(z) - if y == 1 { z } else { 0.0 }
        }
        ModelKind::Softmax => {
            linear(&theta[..k * d], &theta[k * d..], x, &mut s.logits);
            let z_y = s.logits[y];
            softmax_in_place(&mut s.logits) - z_y
        }
        ModelKind::Mlp => {
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(k * h);
            linear(w1, b1, x, &mut s.hidden_pre);
            for (a, r) in s.hidden_pre.iter().zip(s.hidden.iter_mut()) {
                *r = a.max(0.0);
            }
            linear(w2, b2, &s.hidden, &mut s.logits);
            let z_y = s.logits[y];
            softmax_in_place(&mut s.logits) - z_y
        }
    }
}

fn sample_grad(state: &ModelState, x: &[f64], y: usize, g: &mut [f64], s: &mut Scratch) -> f64 {
    let loss = forward(state, x, y, s);
    let spec = &state.spec;
    let theta = &state.params;
    let (d, k, h) = (spec.input_dim, spec.num_classes, spec.hidden);
    match spec.kind {
        ModelKind::Mean => g[0] = theta[0] - x[0],
        ModelKind::Logistic => {
            let z = dot(&theta[..d], x) + theta[d];
            let r = sigmoid(z) - if y == 1 { 1.0 } else { 0.0 };
            for (gi, xi) in g[..d].iter_mut().zip(x) {
                *gi = r * xi;
            }
            g[d] = r;
        }
        ModelKind::Softmax => {
            s.logits[y] -= 1.0;
            let (gw, gb) = g.split_at_mut(k * d);
            for c in 0..k {
                let r = s.logits[c];
                for (gi, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *gi = r * xi;
                }
                gb[c] = r;
            }
        }
        ModelKind::Mlp => {
            s.logits[y] -= 1.0;
            let w2 = &theta[h * d + h..h * d + h + k * h];
            let (gw1, rest) = g.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(k * h);
            s.delta_hidden.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                let r = s.logits[c];
                gb2[c] = r;
                let row = &w2[c * h..(c + 1) * h];
                for j in 0..h {
                    gw2[c * h + j] = r * s.hidden[j];
                    s.delta_hidden[j] += r * row[j];
                }
            }
            for j in 0..h {
                let da = if s.hidden_pre[j] > 0.0 { s.delta_hidden[j] } else { 0.0 };
                gb1[j] = da;
                for (gi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gi = da * xi;
                }
            }
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Mean estimator: the estimate itself for every row.
    Regression(Vec<f64>),
    Classes { labels: Vec<usize>, probs: Matrix },
}

impl Prediction {
    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Prediction::Classes { labels, .. } => Some(labels),
            Prediction::Regression(_) => None,
        }
    }
}

/// Argmax prediction; ties go to the lowest class index, and binary logistic
/// maps `p = 0.5` to class 1.
pub fn predict(state: &ModelState, features: &Matrix) -> Result<Prediction> {
    if features.cols() != state.spec.input_dim {
        return Err(Error::Dimension { expected: state.spec.input_dim, got: features.cols() });
    }
    let spec = &state.spec;
    let n = features.rows();
    if spec.kind == ModelKind::Mean {
        return Ok(Prediction::Regression(vec![state.params[0]; n]));
    }
    let k = spec.num_classes;
    let mut probs = Matrix::zeros(n, k);
    let mut labels = Vec::with_capacity(n);
    let mut s = Scratch::new(spec);
    for (i, x) in features.iter_rows().enumerate() {
        let out = probs.row_mut(i);
        if spec.kind == ModelKind::Logistic {
            let d = spec.input_dim;
            let p1 = sigmoid(dot(&state.params[..d], x) + state.params[d]);
            out[0] = 1.0 - p1;
            out[1] = p1;
            labels.push(usize::from(p1 >= 0.5));
        } else {
            forward(state, x, 0, &mut s);
            out.copy_from_slice(&s.logits);
            let mut best = 0;
            for c in 1..k {
                if out[c] > out[best] {
                    best = c;
                }
            }
            labels.push(best);
        }
    }
    Ok(Prediction::Classes { labels, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::logistic(5).num_params(), 6);
        assert_eq!(ModelSpec::mlp(4, 3, 2).num_params(), 23);
        assert_eq!(ModelSpec::softmax(3, 4).num_params(), 16);
        let st = init_params(&ModelSpec::mean(), &mut Rng::new(0)).unwrap();
        assert_eq!(st.params, vec![0.0]);
    }

    #[test]
    fn init_ranges() {
        let spec = ModelSpec::mlp(16, 8, 3);
        let st = init_params(&spec, &mut Rng::new(1)).unwrap();
        let w1 = &st.params[..16 * 8];
        assert!(w1.iter().all(|w| w.abs() <= 0.25));
        assert!(st.params[16 * 8..16 * 8 + 8].iter().all(|&b| b == 0.0));
        assert!(ModelSpec::mlp(4, 0, 2).validate().is_err());
    }

    #[test]
    fn mean_gradient_closed_form() {
        let st = ModelState::new(ModelSpec::mean(), vec![0.0]).unwrap();
        let x = Matrix::from_vec(1, 1, vec![0.4]).unwrap();
        let g = per_sample_loss_grads(&st, &x, &[0]).unwrap();
        assert_eq!(g.grads().row(0), &[-0.4]);
        assert!((g.losses()[0] - 0.08).abs() < 1e-15);
        assert_eq!(g.norms()[0], 0.4);
    }

    #[test]
    fn logistic_at_zero() {
        let st = ModelState::new(ModelSpec::logistic(2), vec![0.0; 3]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![2.0, -3.0]).unwrap();
        let g = per_sample_loss_grads(&st, &x, &[1]).unwrap();
        assert_eq!(g.grads().row(0), &[-1.0, 1.5, -0.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let st = ModelState::new(ModelSpec::logistic(2), vec![0.0; 3]).unwrap();
        let x = Matrix::zeros(1, 3);
        assert!(per_sample_loss_grads(&st, &x, &[0]).is_err());
        let x = Matrix::zeros(1, 2);
        assert!(per_sample_loss_grads(&st, &x, &[2]).is_err());
    }

    #[test]
    fn prediction_tie_rules() {
        let st = ModelState::new(ModelSpec::softmax(2, 3), vec![0.0; 9]).unwrap();
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let Prediction::Classes { labels, probs } = predict(&st, &x).unwrap() else { panic!() };
        assert_eq!(labels, vec![0, 0]);
        assert!(probs.as_slice().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

        let lr = ModelState::new(ModelSpec::logistic(1), vec![0.0, 0.0]).unwrap();
        let x = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(predict(&lr, &x).unwrap().labels().unwrap(), &[1]);

        let mean = ModelState::new(ModelSpec::mean(), vec![0.37]).unwrap();
        assert_eq!(predict(&mean, &Matrix::zeros(2, 1)).unwrap(), Prediction::Regression(vec![0.37, 0.37]));
    }
}
