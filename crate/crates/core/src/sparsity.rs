//! Pruning masks and the mask-induced error.
//!
//! Every mask zeroes exactly `round(alpha * d)` coordinates. Whenever two
//! coordinates tie on a ranking score, the lower index is kept.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafariError};
use crate::model::{self, Batch, DenseLayer, ModelSpec, ParamVector};
use crate::objective::Objective;

/// Binary mask aligned index-for-index with a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(d: usize) -> Self {
        Self { bits: vec![true; d] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn keeps(&self, n: usize) -> bool {
        self.bits[n]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn zero_count(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.zero_count() as f64 / self.len() as f64
        }
    }

    /// 0/1 view, handy for assertions.
    pub fn as_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| u8::from(b)).collect()
    }
}

/// How a client derives its mask.
///
/// GraSP is deliberately absent: it needs Hessian-vector products that the
/// model core does not provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAlgorithm {
    #[serde(rename = "rand")]
    Random,
    #[serde(rename = "mag")]
    Magnitude,
    /// `|g * x|` connection sensitivity on the client's local data.
    #[serde(rename = "snip")]
    Snip,
    /// `|g|` only.
    #[serde(rename = "snip_grad")]
    SnipGradientOnly,
    #[serde(rename = "synflow")]
    Synflow,
}

impl MaskAlgorithm {
    pub const ALL: [MaskAlgorithm; 5] = [
        MaskAlgorithm::Random,
        MaskAlgorithm::Magnitude,
        MaskAlgorithm::Snip,
        MaskAlgorithm::SnipGradientOnly,
        MaskAlgorithm::Synflow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskAlgorithm::Random => "rand",
            MaskAlgorithm::Magnitude => "mag",
            MaskAlgorithm::Snip => "snip",
            MaskAlgorithm::SnipGradientOnly => "snip_grad",
            MaskAlgorithm::Synflow => "synflow",
        }
    }
}

impl fmt::Display for MaskAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskAlgorithm {
    type Err = SafariError;

    fn from_str(s: &str) -> Result<Self> {
        MaskAlgorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SafariError::Config(format!("unknown mask algorithm `{s}`")))
    }
}

/// Which SNIP sensitivity to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnipKind {
    WeightTimesGradient,
    GradientOnly,
}

fn check_level(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(SafariError::Precondition(format!(
            "sparsity level must lie in [0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Number of coordinates a mask of level `alpha` zeroes.
pub fn zero_count_for(d: usize, alpha: f64) -> usize {
    ((alpha * d as f64).round() as usize).min(d)
}

pub fn random_mask<R: Rng + ?Sized>(d: usize, alpha: f64, rng: &mut R) -> Result<Mask> {
    check_level(alpha)?;
    let mut bits = vec![true; d];
    for n in rand::seq::index::sample(rng, d, zero_count_for(d, alpha)) {
        bits[n] = false;
    }
    Ok(Mask { bits })
}

/// Keep the top `(1 - alpha)` fraction by score, lower index on ties.
pub fn scores_to_mask(scores: &ParamVector, alpha: f64) -> Result<Mask> {
    check_level(alpha)?;
    if scores.iter().any(|s| s.is_nan() || *s < 0.0) {
        return Err(SafariError::Precondition(
            "scores must be nonnegative and not NaN".into(),
        ));
    }
    let d = scores.len();
    let keep = d - zero_count_for(d, alpha);
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort on descending score keeps lower indices first among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut bits = vec![false; d];
    for &n in &order[..keep] {
        bits[n] = true;
    }
    Ok(Mask { bits })
}

pub fn magnitude_mask(params: &ParamVector, alpha: f64) -> Result<Mask> {
    let mags = ParamVector::new(params.iter().map(|v| v.abs()).collect());
    scores_to_mask(&mags, alpha)
}

fn normalize(raw: Vec<f64>) -> Result<ParamVector> {
    let total: f64 = raw.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(SafariError::DegenerateSaliency);
    }
    Ok(ParamVector::new(raw.into_iter().map(|s| s / total).collect()))
}

/// Normalized SNIP saliencies from an already computed gradient.
pub fn saliency_from_gradient(
    params: &ParamVector,
    grad: &ParamVector,
    kind: SnipKind,
) -> Result<ParamVector> {
    if params.len() != grad.len() {
        return Err(SafariError::Config("saliency length mismatch".into()));
    }
    let raw = match kind {
        SnipKind::WeightTimesGradient => params
            .iter()
            .zip(grad.iter())
            .map(|(x, g)| (x * g).abs())
            .collect(),
        SnipKind::GradientOnly => grad.iter().map(|g| g.abs()).collect(),
    };
    normalize(raw)
}

pub fn snip_scores(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
    kind: SnipKind,
) -> Result<ParamVector> {
    let grad = model::gradient(params, spec, batch)?;
    saliency_from_gradient(params, &grad, kind)
}

/// SynFlow saliency for a stack of dense layers with linear activations:
/// `score = dR/dw * |w|` where `R` is the summed output for an all-ones
/// input through the network with every parameter replaced by its magnitude.
pub fn synflow_scores_dense(params: &ParamVector, layers: &[DenseLayer]) -> Result<ParamVector> {
    let expected: usize = layers.iter().map(DenseLayer::param_count).sum();
    if expected != params.len() {
        return Err(SafariError::Config(format!(
            "layer stack expects {expected} parameters, got {}",
            params.len()
        )));
    }
    if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
        return Err(SafariError::Config("layer widths do not chain".into()));
    }
    let abs: Vec<f64> = params.iter().map(|v| v.abs()).collect();
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offsets.push(off);
        off += l.param_count();
    }

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    acts.push(vec![1.0; layers.first().map_or(0, |l| l.inputs)]);
    for (l, &o) in layers.iter().zip(&offsets) {
        let input = acts.last().unwrap();
        let out: Vec<f64> = (0..l.outputs)
            .map(|r| {
                let w = &abs[o + r * l.inputs..o + (r + 1) * l.inputs];
                let b = if l.bias { abs[o + l.inputs * l.outputs + r] } else { 0.0 };
                b + w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect();
        acts.push(out);
    }

    let mut grad = vec![0.0; params.len()];
    let mut upstream = vec![1.0; layers.last().map_or(0, |l| l.outputs)];
    for (idx, (l, &o)) in layers.iter().zip(&offsets).enumerate().rev() {
        let input = &acts[idx];
        let mut down = vec![0.0; l.inputs];
        for r in 0..l.outputs {
            for i in 0..l.inputs {
                grad[o + r * l.inputs + i] = upstream[r] * input[i];
                down[i] += abs[o + r * l.inputs + i] * upstream[r];
            }
            if l.bias {
                grad[o + l.inputs * l.outputs + r] = upstream[r];
            }
        }
        upstream = down;
    }
    normalize(grad.iter().zip(&abs).map(|(g, a)| g * a).collect())
}

pub fn synflow_scores(params: &ParamVector, spec: &ModelSpec) -> Result<ParamVector> {
    synflow_scores_dense(params, &spec.layers())
}

pub fn apply_mask(params: &ParamVector, mask: &Mask) -> Result<ParamVector> {
    if params.len() != mask.len() {
        return Err(SafariError::Config(format!(
            "mask length {} does not match parameter length {}",
            mask.len(),
            params.len()
        )));
    }
    Ok(ParamVector::new(
        params
            .iter()
            .zip(&mask.bits)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect(),
    ))
}

/// `||x * M - x|| / ||x||`
pub fn measure_delta(params: &ParamVector, mask: &Mask) -> Result<f64> {
    let total = params.norm_sq();
    if total == 0.0 {
        return Err(SafariError::UndefinedDelta);
    }
    if params.len() != mask.len() {
        return Err(SafariError::Config("mask length mismatch".into()));
    }
    let removed: f64 = params
        .iter()
        .zip(&mask.bits)
        .filter(|(_, &keep)| !keep)
        .map(|(v, _)| v * v)
        .sum();
    Ok((removed / total).sqrt())
}

/// Compute a client's mask for the model it just received. A degenerate
/// SNIP or SynFlow saliency falls back to the magnitude mask.
pub fn compute_mask<R: Rng + ?Sized>(
    algorithm: MaskAlgorithm,
    alpha: f64,
    params: &ParamVector,
    objective: &dyn Objective,
    rng: &mut R,
) -> Result<Mask> {
    check_level(alpha)?;
    if alpha == 0.0 {
        return Ok(Mask::ones(params.len()));
    }
    let scores = match algorithm {
        MaskAlgorithm::Random => return random_mask(params.len(), alpha, rng),
        MaskAlgorithm::Magnitude => return magnitude_mask(params, alpha),
        MaskAlgorithm::Snip | MaskAlgorithm::SnipGradientOnly => {
            let kind = if algorithm == MaskAlgorithm::Snip {
                SnipKind::WeightTimesGradient
            } else {
                SnipKind::GradientOnly
            };
            objective
                .full_gradient(params)
                .and_then(|g| saliency_from_gradient(params, &g, kind))
        }
        MaskAlgorithm::Synflow => objective.synflow_scores(params),
    };
    match scores {
        Ok(s) => scores_to_mask(&s, alpha),
        Err(SafariError::DegenerateSaliency) => magnitude_mask(params, alpha),
        Err(e) => Err(e),
    }
}
