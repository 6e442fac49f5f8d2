//! Dense numerical core: flat parameter vectors and a two-layer ReLU MLP with
//! softmax cross-entropy and exact reverse-mode gradients.
//!
//! Parameter layout is layer-major with weights before biases:
//!
//! ```text
//! [ W1 (hidden x input, row-major) | b1 (hidden) | W2 (output x hidden, row-major) | b2 (output) ]
//! ```

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SafariError};

/// Flattened model parameters or gradients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared l2 distance. Panics on length mismatch.
    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &ParamVector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len(), "length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.output_dim
            + self.output_dim
    }

    fn offsets(&self) -> Offsets {
        let w1 = 0;
        let b1 = w1 + self.input_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.hidden_dim * self.output_dim;
        Offsets { w1, b1, w2, b2 }
    }

    /// The two dense layers in parameter order, for layout-generic routines.
    pub fn layers(&self) -> [DenseLayer; 2] {
        [
            DenseLayer {
                inputs: self.input_dim,
                outputs: self.hidden_dim,
                bias: true,
            },
            DenseLayer {
                inputs: self.hidden_dim,
                outputs: self.output_dim,
                bias: true,
            },
        ]
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(SafariError::Config(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        if params.len() != self.param_count() {
            return Err(SafariError::Config(format!(
                "parameter vector has length {}, model expects {}",
                params.len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// One fully connected layer in a flat parameter vector: a row-major
/// `outputs x inputs` weight block followed by an optional bias block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub bias: bool,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + if self.bias { self.outputs } else { 0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Row-major feature matrix plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, input_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || inputs.len() != input_dim * labels.len() {
            return Err(SafariError::Config(format!(
                "batch has {} features for {} labels at input_dim {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        Ok(Self {
            inputs,
            input_dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Copy out a sub-batch.
    pub fn select(&self, rows: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(rows.len() * self.input_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Batch {
            inputs,
            input_dim: self.input_dim,
            labels,
        }
    }

    fn check(&self, spec: &ModelSpec, rows: Option<&[usize]>) -> Result<()> {
        if self.input_dim != spec.input_dim {
            return Err(SafariError::Config(format!(
                "batch input_dim {} does not match model input_dim {}",
                self.input_dim, spec.input_dim
            )));
        }
        let count = rows.map_or(self.len(), |r| r.len());
        if count == 0 {
            return Err(SafariError::Config("batch is empty".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= spec.output_dim) {
            return Err(SafariError::Config(format!(
                "label {bad} out of range for {} classes",
                spec.output_dim
            )));
        }
        if let Some(rows) = rows {
            if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
                return Err(SafariError::Config(format!(
                    "row {bad} out of range for batch of {}",
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

/// Pre-activations, activations and logits for one sample.
struct Trace {
    pre: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_sample(params: &[f64], spec: &ModelSpec, off: Offsets, x: &[f64]) -> Trace {
    let (n_in, n_h, n_out) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
    let mut pre = vec![0.0; n_h];
    for (j, z) in pre.iter_mut().enumerate() {
        let w = &params[off.w1 + j * n_in..off.w1 + (j + 1) * n_in];
        *z = params[off.b1 + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
    let mut logits = vec![0.0; n_out];
    for (o, z) in logits.iter_mut().enumerate() {
        let w = &params[off.w2 + o * n_h..off.w2 + (o + 1) * n_h];
        *z = params[off.b2 + o] + w.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
    }
    Trace { pre, act, logits }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn row_indices(batch: &Batch, rows: Option<&[usize]>) -> Vec<usize> {
    match rows {
        Some(r) => r.to_vec(),
        None => (0..batch.len()).collect(),
    }
}

/// Mean cross-entropy over `rows` of `batch` (all rows when `None`).
pub fn loss_rows(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
    rows: Option<&[usize]>,
) -> Result<f64> {
    spec.check(params)?;
    batch.check(spec, rows)?;
    let off = spec.offsets();
    let rows = row_indices(batch, rows);
    let total: f64 = rows
        .iter()
        .map(|&r| {
            let t = forward_sample(params, spec, off, batch.row(r));
            log_sum_exp(&t.logits) - t.logits[batch.labels[r]]
        })
        .sum();
    Ok(total / rows.len() as f64)
}

/// Loss and exact gradient over `rows` of `batch` in a single pass.
pub fn loss_and_gradient_rows(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
    rows: Option<&[usize]>,
) -> Result<(f64, ParamVector)> {
    spec.check(params)?;
    batch.check(spec, rows)?;
    let off = spec.offsets();
    let (n_in, n_h, n_out) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
    let rows = row_indices(batch, rows);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    let mut d_act = vec![0.0; n_h];
    for &r in &rows {
        let x = batch.row(r);
        let t = forward_sample(params, spec, off, x);
        let lse = log_sum_exp(&t.logits);
        let label = batch.labels[r];
        total += lse - t.logits[label];

        d_act.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..n_out {
            let mut dz = (t.logits[o] - lse).exp();
            if o == label {
                dz -= 1.0;
            }
            grad[off.b2 + o] += dz;
            let w_row = off.w2 + o * n_h;
            for j in 0..n_h {
                grad[w_row + j] += dz * t.act[j];
                d_act[j] += dz * params[w_row + j];
            }
        }
        for j in 0..n_h {
            if t.pre[j] <= 0.0 {
                continue;
            }
            let dz = d_act[j];
            grad[off.b1 + j] += dz;
            let w_row = off.w1 + j * n_in;
            for k in 0..n_in {
                grad[w_row + k] += dz * x[k];
            }
        }
    }
    let n = rows.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, ParamVector(grad)))
}

pub fn forward_loss(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<f64> {
    loss_rows(params, spec, batch, None)
}

pub fn gradient(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<ParamVector> {
    loss_and_gradient_rows(params, spec, batch, None).map(|(_, g)| g)
}

/// Output logits for a single input row.
pub fn logits(params: &ParamVector, spec: &ModelSpec, input: &[f64]) -> Result<Vec<f64>> {
    spec.check(params)?;
    if input.len() != spec.input_dim {
        return Err(SafariError::Config(format!(
            "input has {} features, model expects {}",
            input.len(),
            spec.input_dim
        )));
    }
    Ok(forward_sample(params, spec, spec.offsets(), input).logits)
}

/// `params - step_size * grad`
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, step_size: f64) -> Result<ParamVector> {
    if params.len() != grad.len() {
        return Err(SafariError::Config(format!(
            "sgd_step length mismatch: params {} vs grad {}",
            params.len(),
            grad.len()
        )));
    }
    if step_size.is_nan() || step_size < 0.0 {
        return Err(SafariError::Precondition(format!(
            "step size must be nonnegative, got {step_size}"
        )));
    }
    Ok(ParamVector(
        params
            .iter()
            .zip(grad.iter())
            .map(|(p, g)| p - step_size * g)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, spec: &ModelSpec, n: usize) -> (ParamVector, Batch) {
        let params: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let inputs: Vec<f64> = (0..n * spec.input_dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.output_dim)).collect();
        (
            ParamVector::new(params),
            Batch::new(inputs, spec.input_dim, labels).unwrap(),
        )
    }

    /// Straight-line re-derivation of the loss with explicit indexing.
    fn scalar_loss(p: &[f64], spec: &ModelSpec, batch: &Batch) -> f64 {
        let (ni, nh, no) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
        let mut total = 0.0;
        for s in 0..batch.len() {
            let mut hidden = Vec::new();
            for j in 0..nh {
                let mut z = p[ni * nh + j];
                for k in 0..ni {
                    z += p[j * ni + k] * batch.inputs[s * ni + k];
                }
                hidden.push(if z > 0.0 { z } else { 0.0 });
            }
            let base = ni * nh + nh;
            let mut out = Vec::new();
            for o in 0..no {
                let mut z = p[base + nh * no + o];
                for j in 0..nh {
                    z += p[base + o * nh + j] * hidden[j];
                }
                out.push(z);
            }
            let denom: f64 = out.iter().map(|z| z.exp()).sum();
            total += -(out[batch.labels[s]].exp() / denom).ln();
        }
        total / batch.len() as f64
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = ModelSpec::new(4, 3, 2);
        assert_eq!(spec.param_count(), 4 * 3 + 3 + 3 * 2 + 2);
        let layers: usize = spec.layers().iter().map(|l| l.param_count()).sum();
        assert_eq!(layers, spec.param_count());
    }

    #[test]
    fn zero_weights_give_log_class_count() {
        let spec = ModelSpec::new(2, 4, 3);
        let params = ParamVector::zeros(spec.param_count());
        let batch = Batch::new(vec![1.0, -2.0, 0.5, 3.0], 2, vec![0, 2]).unwrap();
        let loss = forward_loss(&params, &spec, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit_has_tiny_loss() {
        let spec = ModelSpec::new(1, 1, 3);
        let mut params = ParamVector::zeros(spec.param_count());
        // b2 for class 1
        let b2 = spec.param_count() - 3;
        params[b2 + 1] = 20.0;
        let batch = Batch::new(vec![0.3], 1, vec![1]).unwrap();
        assert!(forward_loss(&params, &spec, &batch).unwrap() < 1e-8);
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModelSpec::new(3, 5, 4);
        for _ in 0..20 {
            let (p, b) = random_case(&mut rng, &spec, 7);
            let fast = forward_loss(&p, &spec, &b).unwrap();
            let slow = scalar_loss(&p, &spec, &b);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn balanced_zero_model_output_bias_grad_sums_to_zero() {
        let spec = ModelSpec::new(2, 3, 3);
        let params = ParamVector::zeros(spec.param_count());
        let batch = Batch::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, vec![0, 1, 2]).unwrap();
        let g = gradient(&params, &spec, &batch).unwrap();
        let b2: f64 = g[spec.param_count() - 3..].iter().sum();
        assert!(b2.abs() < 1e-15);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ModelSpec::new(3, 4, 3);
        let (p, b) = random_case(&mut rng, &spec, 6);
        let full = gradient(&p, &spec, &b).unwrap();
        let mut mean = ParamVector::zeros(p.len());
        for s in 0..b.len() {
            mean.add_scaled(1.0 / b.len() as f64, &gradient(&p, &spec, &b.select(&[s])).unwrap());
        }
        assert!(full.dist(&mean) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = ModelSpec::new(2, 2, 2);
        let params = ParamVector::zeros(3);
        let batch = Batch::new(vec![0.0, 0.0], 2, vec![0]).unwrap();
        assert!(matches!(
            forward_loss(&params, &spec, &batch),
            Err(SafariError::Config(_))
        ));
        let params = ParamVector::zeros(spec.param_count());
        let bad_label = Batch::new(vec![0.0, 0.0], 2, vec![5]).unwrap();
        assert!(gradient(&params, &spec, &bad_label).is_err());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParamVector::new(vec![1.0, 2.0]);
        let g = ParamVector::new(vec![1.0, -1.0]);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap().as_slice(), &[0.5, 2.5]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert!(sgd_step(&p, &ParamVector::zeros(3), 0.1).is_err());
    }

    #[test]
    fn telescoping_constant_gradient() {
        let p = ParamVector::new(vec![0.25, -1.5, 3.0]);
        let g = ParamVector::new(vec![0.5, 0.25, -1.0]);
        let (eta, tau) = (0.5, 4);
        let mut x = p.clone();
        for _ in 0..tau {
            x = sgd_step(&x, &g, eta / tau as f64).unwrap();
        }
        let once = sgd_step(&p, &g, eta).unwrap();
        assert!(x.dist(&once) < 1e-15);
    }

    #[test]
    fn loss_is_permutation_invariant_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModelSpec::new(2, 3, 2);
        let (p, b) = random_case(&mut rng, &spec, 5);
        let shuffled = b.select(&[4, 2, 0, 3, 1]);
        let a = forward_loss(&p, &spec, &b).unwrap();
        let c = forward_loss(&p, &spec, &shuffled).unwrap();
        assert!((a - c).abs() < 1e-14);
        assert_eq!(a.to_bits(), forward_loss(&p, &spec, &b).unwrap().to_bits());
        assert_eq!(gradient(&p, &spec, &b).unwrap(), gradient(&p, &spec, &b).unwrap());
    }
}
