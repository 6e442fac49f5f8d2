//! Measurable counterparts of the convergence analysis: gradient variance,
//! dissimilarity constants, smoothness, mask error, the drop-bias term and
//! rate checks.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::client::{ClientState, LocalTraining};
use crate::error::{Result, SafariError};
use crate::model::{self, ParamVector};
use crate::objective::{Objective, QuadraticObjective};
use crate::server::AggregationMode;
use crate::sim::Simulation;
use crate::sparsity::{self, Mask};

/// Mean of `||g(batch) - grad L_i||^2` over `n_draws` random batches.
/// Full-batch sampling has no variance and returns exactly 0.
pub fn estimate_sigma_sq<R: Rng + ?Sized>(
    objective: &dyn Objective,
    params: &ParamVector,
    batch_size: usize,
    n_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_draws < 2 {
        return Err(SafariError::Precondition("n_draws must be at least 2".into()));
    }
    let n = objective.sample_count();
    if n == 0 {
        return Err(SafariError::Precondition("objective has no samples".into()));
    }
    if batch_size >= n {
        return Ok(0.0);
    }
    let full = objective.full_gradient(params)?;
    let mut total = 0.0;
    for _ in 0..n_draws {
        let batch = rand::seq::index::sample(rng, n, batch_size).into_vec();
        total += objective.gradient(params, &batch)?.dist_sq(&full);
    }
    Ok(total / n_draws as f64)
}

/// Where client gradients are evaluated when fitting dissimilarity.
#[derive(Debug, Clone, Copy)]
pub enum GradientSite<'a> {
    /// `grad L_i(x)`
    Dense,
    /// `grad L_i(x * M_i)`, one mask per client.
    Masked(&'a [Mask]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityFit {
    pub beta_sq: f64,
    pub zeta_sq: f64,
    /// `(beta^2, minimal zeta^2)` for every grid value.
    pub frontier: Vec<(f64, f64)>,
}

/// Evenly spaced `beta^2` values from 1 to `beta_max`.
pub fn beta_grid(beta_max: f64, points: usize) -> Vec<f64> {
    if points < 2 || beta_max <= 1.0 {
        return vec![1.0];
    }
    (0..points)
        .map(|k| 1.0 + (beta_max - 1.0) * k as f64 / (points - 1) as f64)
        .collect()
}

/// For every `beta^2` on the grid, the smallest `zeta^2` such that
/// `mean_i ||grad L_i(x)||^2 <= beta^2 ||mean_i grad L_i(x)||^2 + zeta^2`
/// holds at every sampled `x`. Reports the `beta^2 = 1` pair plus the frontier.
pub fn estimate_dissimilarity(
    objectives: &[&dyn Objective],
    points: &[ParamVector],
    grid: &[f64],
    site: GradientSite<'_>,
) -> Result<DissimilarityFit> {
    if objectives.is_empty() || points.is_empty() {
        return Err(SafariError::Precondition(
            "need at least one client and one evaluation point".into(),
        ));
    }
    if let GradientSite::Masked(masks) = site {
        if masks.len() != objectives.len() {
            return Err(SafariError::Config("one mask per client required".into()));
        }
    }
    let m = objectives.len() as f64;
    let mut pairs = Vec::with_capacity(points.len());
    for x in points {
        let mut sum = ParamVector::zeros(x.len());
        let mut sq = 0.0;
        for (i, obj) in objectives.iter().enumerate() {
            let g = match site {
                GradientSite::Dense => obj.full_gradient(x)?,
                GradientSite::Masked(masks) => obj.full_gradient(&sparsity::apply_mask(x, &masks[i])?)?,
            };
            sq += g.norm_sq();
            sum.add_scaled(1.0, &g);
        }
        sum.scale(1.0 / m);
        pairs.push((sq / m, sum.norm_sq()));
    }
    let mut grid: Vec<f64> = grid.iter().copied().filter(|b| *b >= 1.0).collect();
    if !grid.contains(&1.0) {
        grid.insert(0, 1.0);
    }
    let frontier: Vec<(f64, f64)> = grid
        .iter()
        .map(|&b| {
            let z = pairs
                .iter()
                .map(|(avg, mean)| avg - b * mean)
                .fold(0.0, f64::max);
            (b, z)
        })
        .collect();
    let zeta_sq = frontier
        .iter()
        .find(|(b, _)| *b == 1.0)
        .map(|(_, z)| *z)
        .unwrap_or(0.0);
    Ok(DissimilarityFit {
        beta_sq: 1.0,
        zeta_sq,
        frontier,
    })
}

/// `sum_i (1 - p_i)^2 ||h_{i'} - h_i||^2` with `i' = surrogate[i]`.
pub fn compute_phi(probabilities: &[f64], h: &[ParamVector], surrogate: &[usize]) -> f64 {
    probabilities
        .iter()
        .zip(h)
        .zip(surrogate)
        .map(|((p, hi), &j)| (1.0 - p).powi(2) * h[j].dist_sq(hi))
        .sum()
}

/// `4 eta^2 L^2 tau (tau - 1)`
pub fn gamma(learning_rate: f64, smoothness: f64, local_steps: usize) -> f64 {
    let tau = local_steps as f64;
    4.0 * learning_rate.powi(2) * smoothness.powi(2) * tau * (tau - 1.0)
}

/// Largest observed `||grad L(x) - grad L(y)|| / ||x - y||`. A lower bound on
/// the true smoothness constant.
pub fn estimate_smoothness(
    objective: &dyn Objective,
    pairs: &[(ParamVector, ParamVector)],
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (x, y) in pairs {
        let gap = x.dist(y);
        if gap == 0.0 {
            continue;
        }
        let diff = objective.full_gradient(x)?.dist(&objective.full_gradient(y)?);
        best = best.max(diff / gap);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub smoothness: f64,
    pub delta: f64,
    pub sigma_sq: f64,
    /// bound minus realized loss after each step
    pub per_step_slack: Vec<f64>,
    /// the guaranteed decrease `(eta / 3 tau) ||grad L(x_{k-1})||^2` per step
    pub required_decrease: Vec<f64>,
    pub min_slack: f64,
}

/// Run `local_steps` masked full-batch steps of size `eta / tau` on a
/// quadratic and evaluate the per-step descent bound
/// `L(x_{k-1}) - (eta/3tau)||grad||^2 + eta^2 L sigma^2/(2tau^2) + (2 eta L^2 delta^2 / 3tau)||x_{k-1}||^2`
/// against the realized `L(x_k)`.
pub fn check_local_descent(
    objective: &QuadraticObjective,
    start: &ParamVector,
    learning_rate: f64,
    local_steps: usize,
    mask: &Mask,
    sigma_sq: f64,
) -> Result<DescentReport> {
    let l = objective.smoothness();
    let tau = local_steps as f64;
    if local_steps == 0 || learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(SafariError::Precondition("need eta > 0 and tau >= 1".into()));
    }
    // relative tolerance so the boundary eta = tau/(6L) is admitted
    if learning_rate > tau / (6.0 * l) * (1.0 + 1e-12) {
        return Err(SafariError::Precondition(format!(
            "learning rate {learning_rate} exceeds tau/(6L) = {}",
            tau / (6.0 * l)
        )));
    }
    let delta = match sparsity::measure_delta(start, mask) {
        Ok(d) => d,
        Err(SafariError::UndefinedDelta) => 0.0,
        Err(e) => return Err(e),
    };
    let all = objective.all_samples();
    let step = learning_rate / tau;
    let mut x = sparsity::apply_mask(start, mask)?;
    let mut slack = Vec::with_capacity(local_steps);
    let mut required = Vec::with_capacity(local_steps);
    for _ in 0..local_steps {
        let (before, grad) = objective.loss_and_gradient(&x, &all)?;
        let decrease = learning_rate / (3.0 * tau) * grad.norm_sq();
        let noise = learning_rate.powi(2) * l * sigma_sq / (2.0 * tau * tau);
        let pruning = 2.0 * learning_rate * l * l * delta * delta / (3.0 * tau) * x.norm_sq();
        let mut g = grad;
        for (v, &keep) in g.iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
        x = model::sgd_step(&x, &g, step)?;
        let after = objective.loss(&x, &all)?;
        slack.push(before - decrease + noise + pruning - after);
        required.push(decrease);
    }
    let min_slack = slack.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DescentReport {
        smoothness: l,
        delta,
        sigma_sq,
        per_step_slack: slack,
        required_decrease: required,
        min_slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEntry {
    pub rounds: usize,
    pub learning_rate: f64,
    pub min_grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub entries: Vec<RateEntry>,
    pub strictly_decreasing: bool,
    /// `min(T_k) / min(T_0)` for each horizon.
    pub observed_ratios: Vec<f64>,
    /// `sqrt(T_0 / T_k)`, informational.
    pub predicted_ratios: Vec<f64>,
}

/// Summarize per-horizon minima (entries sorted by increasing rounds).
pub fn rate_check(mut entries: Vec<RateEntry>) -> RateReport {
    entries.sort_by_key(|e| e.rounds);
    let strictly_decreasing = entries
        .windows(2)
        .all(|w| w[1].min_grad_norm_sq < w[0].min_grad_norm_sq);
    let (base_min, base_t) = entries
        .first()
        .map_or((1.0, 1), |e| (e.min_grad_norm_sq, e.rounds));
    let observed_ratios = entries
        .iter()
        .map(|e| {
            if base_min == 0.0 {
                if e.min_grad_norm_sq == 0.0 { 1.0 } else { f64::INFINITY }
            } else {
                e.min_grad_norm_sq / base_min
            }
        })
        .collect();
    let predicted_ratios = entries
        .iter()
        .map(|e| (base_t as f64 / e.rounds as f64).sqrt())
        .collect();
    RateReport {
        entries,
        strictly_decreasing,
        observed_ratios,
        predicted_ratios,
    }
}

/// A federated run on arbitrary objectives whose only varying input is the
/// horizon `T`; each run uses `eta = sqrt(m / (tau T))`.
#[derive(Clone)]
pub struct RateSetup {
    pub objectives: Vec<Arc<dyn Objective>>,
    pub stream_ids: Vec<u64>,
    pub initial: ParamVector,
    pub channel: Channel,
    pub mode: AggregationMode,
    pub training: LocalTraining,
    pub batch_size: usize,
    pub seed: u64,
}

impl RateSetup {
    pub fn learning_rate(&self, rounds: usize) -> f64 {
        let m = self.objectives.len() as f64;
        (m / (self.training.local_steps as f64 * rounds as f64)).sqrt()
    }

    /// Global gradient `(1/m) sum_i grad L_i(x)`.
    pub fn global_gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        let mut g = ParamVector::zeros(x.len());
        for obj in &self.objectives {
            g.add_scaled(1.0, &obj.full_gradient(x)?);
        }
        g.scale(1.0 / self.objectives.len() as f64);
        Ok(g)
    }

    pub fn run(&self, rounds: usize) -> Result<RateEntry> {
        let eta = self.learning_rate(rounds);
        let clients = self
            .objectives
            .iter()
            .enumerate()
            .map(|(i, obj)| {
                ClientState::new(i, obj.clone(), self.batch_size, self.seed)
                    .with_stream(self.stream_ids.get(i).copied().unwrap_or(i as u64))
            })
            .collect();
        let training = LocalTraining {
            learning_rate: eta,
            ..self.training
        };
        let mut sim = Simulation::new(
            self.mode,
            clients,
            self.channel.clone(),
            training,
            self.initial.clone(),
            false,
        )?;
        let mut best = f64::INFINITY;
        for _ in 0..rounds {
            best = best.min(self.global_gradient(sim.global())?.norm_sq());
            sim.step()?;
        }
        Ok(RateEntry {
            rounds,
            learning_rate: eta,
            min_grad_norm_sq: best,
        })
    }
}

pub fn rate_experiment(setup: &RateSetup, horizons: &[usize]) -> Result<RateReport> {
    let entries = horizons
        .iter()
        .map(|&t| setup.run(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(rate_check(entries))
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MonteCarlo {
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std_error,
            samples: n,
        })
    }
}

/// Measured theoretical quantities for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub sigma_sq: f64,
    pub beta_sq: f64,
    pub zeta_sq: f64,
    pub dissimilarity_frontier: Vec<(f64, f64)>,
    /// Empirical lower bound for the MLP, exact for quadratics.
    pub smoothness_l: f64,
    pub delta_max: f64,
    pub learning_rate: f64,
    pub local_steps: usize,
    pub gamma: f64,
    /// Per-round bias term, averaged over rounds; absent outside oracle mode.
    pub phi: Option<MonteCarlo>,
    pub rate_a: f64,
    pub rate_b: f64,
    pub rate_c: f64,
}

impl AnalysisReport {
    /// Constants `A = tau`, `B = tau - 1`, `C = tau (tau - 1)`.
    pub fn rate_constants(local_steps: usize) -> (f64, f64, f64) {
        let tau = local_steps as f64;
        (tau, tau - 1.0, tau * (tau - 1.0))
    }

    /// Check the report's own invariants.
    pub fn check(&self) -> std::result::Result<(), String> {
        let scalars = [
            ("sigma_sq", self.sigma_sq),
            ("beta_sq", self.beta_sq),
            ("zeta_sq", self.zeta_sq),
            ("smoothness_l", self.smoothness_l),
            ("delta_max", self.delta_max),
            ("gamma", self.gamma),
            ("rate_a", self.rate_a),
            ("rate_b", self.rate_b),
            ("rate_c", self.rate_c),
        ];
        for (name, v) in scalars {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v} is not finite and nonnegative"));
            }
        }
        if let Some(phi) = &self.phi {
            if !phi.mean.is_finite() || phi.mean < 0.0 {
                return Err(format!("phi = {} is not finite and nonnegative", phi.mean));
            }
        }
        if self.beta_sq < 1.0 {
            return Err("beta_sq below 1".into());
        }
        if self.delta_max > 1.0 {
            return Err("delta_max above 1".into());
        }
        let g = gamma(self.learning_rate, self.smoothness_l, self.local_steps);
        if (g - self.gamma).abs() > 1e-12 * g.max(1.0) {
            return Err(format!("gamma {} inconsistent with formula {g}", self.gamma));
        }
        Ok(())
    }
}
