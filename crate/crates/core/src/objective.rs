//! Local objectives: a client's loss over its own samples.
//!
//! Sample indices passed to an objective are local, `0..sample_count()`.

use crate::error::{Result, SafariError};
use crate::model::{self, Batch, ModelSpec, ParamVector};
use crate::sparsity;

pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_count(&self) -> usize;

    /// Mean loss and its gradient over the given local samples.
    fn loss_and_gradient(&self, params: &ParamVector, samples: &[usize])
        -> Result<(f64, ParamVector)>;

    fn loss(&self, params: &ParamVector, samples: &[usize]) -> Result<f64> {
        self.loss_and_gradient(params, samples).map(|(l, _)| l)
    }

    fn gradient(&self, params: &ParamVector, samples: &[usize]) -> Result<ParamVector> {
        self.loss_and_gradient(params, samples).map(|(_, g)| g)
    }

    fn all_samples(&self) -> Vec<usize> {
        (0..self.sample_count()).collect()
    }

    fn full_loss(&self, params: &ParamVector) -> Result<f64> {
        self.loss(params, &self.all_samples())
    }

    fn full_gradient(&self, params: &ParamVector) -> Result<ParamVector> {
        self.gradient(params, &self.all_samples())
    }

    /// Data-free SynFlow saliencies. Only network objectives have them.
    fn synflow_scores(&self, _params: &ParamVector) -> Result<ParamVector> {
        Err(SafariError::Config(
            "synflow saliency needs a layered network objective".into(),
        ))
    }
}

/// Cross-entropy of the MLP over a client's local samples.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    spec: ModelSpec,
    data: Batch,
}

impl MlpObjective {
    pub fn new(spec: ModelSpec, data: Batch) -> Result<Self> {
        if data.input_dim != spec.input_dim {
            return Err(SafariError::Config(format!(
                "local data has input_dim {}, model expects {}",
                data.input_dim, spec.input_dim
            )));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Batch {
        &self.data
    }
}

impl Objective for MlpObjective {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn sample_count(&self) -> usize {
        self.data.len()
    }

    fn loss_and_gradient(
        &self,
        params: &ParamVector,
        samples: &[usize],
    ) -> Result<(f64, ParamVector)> {
        model::loss_and_gradient_rows(params, &self.spec, &self.data, Some(samples))
    }

    fn loss(&self, params: &ParamVector, samples: &[usize]) -> Result<f64> {
        model::loss_rows(params, &self.spec, &self.data, Some(samples))
    }

    fn synflow_scores(&self, params: &ParamVector) -> Result<ParamVector> {
        sparsity::synflow_scores(params, &self.spec)
    }
}

/// Per-sample quadratic `0.5 * sum_n a_n (x_n - c_{s,n})^2` with a shared
/// positive diagonal curvature `a`. Smoothness constant is `max a`, strong
/// convexity `min a`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    curvature: Vec<f64>,
    centers: Vec<ParamVector>,
}

impl QuadraticObjective {
    pub fn new(curvature: Vec<f64>, centers: Vec<ParamVector>) -> Result<Self> {
        if curvature.is_empty() || curvature.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(SafariError::Config(
                "quadratic curvature must be nonempty, finite and positive".into(),
            ));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != curvature.len()) {
            return Err(SafariError::Config(format!(
                "center of length {} for curvature of length {}",
                c.len(),
                curvature.len()
            )));
        }
        Ok(Self { curvature, centers })
    }

    /// Lipschitz constant of the gradient.
    pub fn smoothness(&self) -> f64 {
        self.curvature.iter().cloned().fold(0.0, f64::max)
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn sample_count(&self) -> usize {
        self.centers.len()
    }

    fn loss_and_gradient(
        &self,
        params: &ParamVector,
        samples: &[usize],
    ) -> Result<(f64, ParamVector)> {
        if params.len() != self.dim() {
            return Err(SafariError::Config(format!(
                "parameter vector has length {}, objective expects {}",
                params.len(),
                self.dim()
            )));
        }
        if samples.is_empty() {
            return Err(SafariError::Config("empty sample set".into()));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for &s in samples {
            let c = self.centers.get(s).ok_or_else(|| {
                SafariError::Config(format!("sample {s} out of range for {}", self.centers.len()))
            })?;
            for n in 0..self.dim() {
                let r = params[n] - c[n];
                loss += 0.5 * self.curvature[n] * r * r;
                grad[n] += self.curvature[n] * r;
            }
        }
        let k = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        Ok((loss / k, ParamVector::new(grad)))
    }
}
