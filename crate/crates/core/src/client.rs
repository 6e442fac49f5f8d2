//! Local sparse training on one client.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SafariError};
use crate::model::{self, ParamVector};
use crate::objective::Objective;
use crate::rng::{self, Purpose};
use crate::sparsity::{self, Mask, MaskAlgorithm};

/// A client's identity, local objective, and the key of its private random
/// stream. Streams are rebuilt per round from `(seed, stream_id, round)`.
#[derive(Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub objective: Arc<dyn Objective>,
    pub batch_size: usize,
    pub seed: u64,
    /// Usually equal to `client_id`. Clients that share a stream id draw
    /// identical batches and random masks.
    pub stream_id: u64,
}

impl ClientState {
    pub fn new(client_id: usize, objective: Arc<dyn Objective>, batch_size: usize, seed: u64) -> Self {
        Self {
            client_id,
            objective,
            batch_size,
            seed,
            stream_id: client_id as u64,
        }
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn sample_count(&self) -> usize {
        self.objective.sample_count()
    }

    pub fn batch_rng(&self, round: usize) -> ChaCha8Rng {
        rng::stream(self.seed, Purpose::Batch, self.stream_id, round as u64)
    }

    pub fn mask_rng(&self, round: usize) -> ChaCha8Rng {
        rng::stream(self.seed, Purpose::Mask, self.stream_id, round as u64)
    }
}

impl std::fmt::Debug for ClientState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientState")
            .field("client_id", &self.client_id)
            .field("samples", &self.sample_count())
            .field("batch_size", &self.batch_size)
            .field("stream_id", &self.stream_id)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub learning_rate: f64,
    pub local_steps: usize,
    pub mask_algorithm: MaskAlgorithm,
    pub sparsity: f64,
    /// Also average the full-data gradient over the iterates (`h_hat`).
    pub track_full_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub model: ParamVector,
    pub mask: Mask,
    pub per_step_losses: Vec<f64>,
    /// Mean masked full-data gradient at the iterates the steps were taken from.
    pub h_hat: Option<ParamVector>,
    /// Mean masked stochastic gradient actually applied.
    pub d_hat: ParamVector,
}

impl LocalResult {
    pub fn mean_loss(&self) -> f64 {
        self.per_step_losses.iter().sum::<f64>() / self.per_step_losses.len() as f64
    }
}

/// Mini-batches without replacement; reshuffles when a pass is exhausted.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, batch_size: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            size: batch_size.clamp(1, n),
            rng,
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.size;
        &self.order[start..self.cursor]
    }
}

fn mask_in_place(v: &mut ParamVector, mask: &Mask) {
    for (x, &keep) in v.iter_mut().zip(mask.bits()) {
        if !keep {
            *x = 0.0;
        }
    }
}

/// Prune the received model, then run `local_steps` masked SGD steps of size
/// `learning_rate / local_steps`. Gradients are taken at the current iterate
/// and masked so pruned coordinates stay at zero.
pub fn local_sparse_train(
    global: &ParamVector,
    client: &ClientState,
    cfg: &LocalTraining,
    round: usize,
) -> Result<LocalResult> {
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(SafariError::Precondition(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if cfg.local_steps == 0 {
        return Err(SafariError::Precondition("local_steps must be at least 1".into()));
    }
    let n = client.sample_count();
    if n == 0 {
        return Err(SafariError::EmptyClient(client.client_id));
    }
    let objective = client.objective.as_ref();
    let mask = sparsity::compute_mask(
        cfg.mask_algorithm,
        cfg.sparsity,
        global,
        objective,
        &mut client.mask_rng(round),
    )?;
    let mut x = sparsity::apply_mask(global, &mask)?;
    let step = cfg.learning_rate / cfg.local_steps as f64;
    let all = objective.all_samples();
    let mut sampler = BatchSampler::new(n, client.batch_size, client.batch_rng(round));

    let d = x.len();
    let mut d_hat = ParamVector::zeros(d);
    let mut h_hat = cfg.track_full_gradient.then(|| ParamVector::zeros(d));
    let mut losses = Vec::with_capacity(cfg.local_steps);
    for _ in 0..cfg.local_steps {
        let (loss, mut g) = objective.loss_and_gradient(&x, sampler.next())?;
        mask_in_place(&mut g, &mask);
        if let Some(h) = h_hat.as_mut() {
            let mut full = objective.gradient(&x, &all)?;
            mask_in_place(&mut full, &mask);
            h.add_scaled(1.0, &full);
        }
        d_hat.add_scaled(1.0, &g);
        losses.push(loss);
        x = model::sgd_step(&x, &g, step)?;
    }
    let inv = 1.0 / cfg.local_steps as f64;
    d_hat.scale(inv);
    if let Some(h) = h_hat.as_mut() {
        h.scale(inv);
    }
    Ok(LocalResult {
        model: x,
        mask,
        per_step_losses: losses,
        h_hat,
        d_hat,
    })
}
