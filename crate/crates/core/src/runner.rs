//! Experiment orchestration: build everything from a config, run each
//! aggregation mode for `T` rounds, evaluate, and write the output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::analysis::{self, AnalysisReport, GradientSite, MonteCarlo};
use crate::channel::Channel;
use crate::client::{ClientState, LocalTraining};
use crate::config::{ExperimentConfig, PartitionMode};
use crate::data::{self, Dataset, PartitionPlan};
use crate::error::{Result, SafariError};
use crate::model::{self, ModelSpec, ParamVector};
use crate::objective::{MlpObjective, Objective};
use crate::rng::{self, Purpose};
use crate::server::{AggregationMode, SimilarityMatrix};
use crate::sim::Simulation;

pub const METRICS_HEADER: &str = "round,active_count,train_loss,eval_loss,eval_acc,eval_top5,phi,delta_max";
pub const SURROGATES_HEADER: &str = "round,missing_client,surrogate_client";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub top1: f64,
    /// Only for models with at least five classes.
    pub top5: Option<f64>,
}

/// Mean cross-entropy and top-k accuracy on a held-out set. Classes are
/// ranked by score with ties going to the lower class index, so a constant
/// model always predicts class 0.
pub fn evaluate(params: &ParamVector, spec: &ModelSpec, holdout: &Dataset) -> Result<Evaluation> {
    if holdout.is_empty() {
        return Err(SafariError::Precondition("holdout set is empty".into()));
    }
    let loss = model::forward_loss(params, spec, &holdout.as_batch())?;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for i in 0..holdout.len() {
        let z = model::logits(params, spec, holdout.row(i))?;
        let label = holdout.labels[i];
        let truth = z[label];
        let above = z
            .iter()
            .enumerate()
            .filter(|&(c, &v)| v > truth || (v == truth && c < label))
            .count();
        top1 += usize::from(above < 1);
        top5 += usize::from(above < 5);
    }
    let n = holdout.len() as f64;
    Ok(Evaluation {
        loss,
        top1: top1 as f64 / n,
        top5: (spec.output_dim >= 5).then_some(top5 as f64 / n),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub active: Vec<usize>,
    pub surrogates: BTreeMap<usize, usize>,
    pub train_loss: Option<f64>,
    pub eval: Option<Evaluation>,
    pub client_losses: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
    pub delta_max: Option<f64>,
    pub phi: Option<f64>,
    pub wall_time: Duration,
}

/// Everything built from a config before any mode runs.
pub struct Prepared {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub holdout: Dataset,
    pub plan: PartitionPlan,
    pub clients: Vec<ClientState>,
    pub channel: Channel,
    pub initial: ParamVector,
    pub training: LocalTraining,
}

impl Prepared {
    pub fn objectives(&self) -> Vec<&dyn Objective> {
        self.clients.iter().map(|c| c.objective.as_ref()).collect()
    }

    /// `(1/m) sum_i L_i(x)` over each client's full local data.
    pub fn train_loss(&self, params: &ParamVector) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.clients {
            total += c.objective.full_loss(params)?;
        }
        Ok(total / self.clients.len() as f64)
    }
}

/// He-normal weights, zero biases.
pub fn initial_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed, Purpose::Init, 0, 0);
    let mut values = Vec::with_capacity(spec.param_count());
    for layer in spec.layers() {
        let normal = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).expect("positive std");
        values.extend((0..layer.inputs * layer.outputs).map(|_| normal.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, layer.outputs));
    }
    ParamVector::new(values)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let full = match &cfg.data.csv {
        Some(path) => Dataset::load_csv(path)?,
        None => data::generate_blobs(
            cfg.data.class_count,
            cfg.data.samples_per_class,
            cfg.data.input_dim,
            cfg.data.spread,
            seed,
        )?,
    };
    let (train, holdout) = full.split_holdout(cfg.data.holdout_fraction, seed)?;
    let p = &cfg.partition;
    let plan = match p.mode {
        PartitionMode::Noniid => data::partition_noniid(
            &train,
            p.clients,
            p.groups,
            p.labels_per_client.unwrap_or(train.class_count),
            seed,
        )?,
        PartitionMode::Clone => data::clusterable_clone_partition(&train, p.clients, p.groups)?,
    };
    let spec = ModelSpec::new(train.input_dim, cfg.model.hidden_dim, train.class_count);
    let clients = (0..p.clients)
        .map(|i| {
            let obj: Arc<dyn Objective> =
                Arc::new(MlpObjective::new(spec, train.batch(&plan.client_samples[i]))?);
            let client = ClientState::new(i, obj, cfg.training.batch_size, seed);
            Ok(if p.group_streams {
                client.with_stream(plan.group_of(i) as u64)
            } else {
                client
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let channel = Channel::new(
        cfg.channel.uplink.to_schedule(p.clients)?,
        cfg.channel.downlink.to_schedule(p.clients)?,
        cfg.channel_seed(),
    );
    Ok(Prepared {
        initial: initial_params(&spec, seed),
        spec,
        train,
        holdout,
        plan,
        clients,
        channel,
        training: LocalTraining {
            learning_rate: cfg.training.learning_rate,
            local_steps: cfg.training.local_steps,
            mask_algorithm: cfg.sparsity.algorithm,
            sparsity: cfg.sparsity.level,
            track_full_gradient: cfg.experiment.oracle_mode,
        },
    })
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: AggregationMode,
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVector,
    pub similarity: SimilarityMatrix,
    /// Similarity snapshots `(round, matrix)` if periodic dumps were requested.
    pub similarity_history: Vec<(usize, SimilarityMatrix)>,
    pub analysis: AnalysisReport,
}

pub fn run_mode(prepared: &Prepared, cfg: &ExperimentConfig, mode: AggregationMode) -> Result<ModeRun> {
    let rounds = cfg.experiment.rounds;
    let mut sim = Simulation::new(
        mode,
        prepared.clients.clone(),
        prepared.channel.clone(),
        prepared.training,
        prepared.initial.clone(),
        cfg.experiment.oracle_mode,
    )?;
    let sample_every = match cfg.analysis.sample_every {
        0 => (rounds / 10).max(1),
        k => k,
    };
    let mut snapshots = vec![prepared.initial.clone()];
    let mut history = Vec::new();
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let started = Instant::now();
        let obs = sim.step()?;
        let t = obs.round;
        let evaluate_now = (t + 1) % cfg.experiment.eval_every == 0 || t + 1 == rounds;
        let (train_loss, eval) = if evaluate_now {
            (
                Some(prepared.train_loss(sim.global())?),
                Some(evaluate(sim.global(), &prepared.spec, &prepared.holdout)?),
            )
        } else {
            (None, None)
        };
        if (t + 1) % sample_every == 0 && t + 1 != rounds {
            snapshots.push(sim.global().clone());
        }
        if cfg.experiment.similarity_every > 0 && (t + 1) % cfg.experiment.similarity_every == 0 {
            history.push((t, sim.server().similarity.clone()));
        }
        records.push(RoundRecord {
            round: t,
            active: obs.active.members.clone(),
            surrogates: obs.surrogates.clone(),
            train_loss,
            eval,
            client_losses: obs.client_losses(),
            delta_max: obs.delta_max(),
            deltas: obs.deltas,
            phi: obs.phi,
            wall_time: started.elapsed(),
        });
    }
    let final_model = sim.global().clone();
    if rounds > 0 {
        snapshots.push(final_model.clone());
    }
    let analysis = analyze(prepared, cfg, &records, &snapshots, &final_model)?;
    Ok(ModeRun {
        mode,
        records,
        final_model,
        similarity: sim.server().similarity.clone(),
        similarity_history: history,
        analysis,
    })
}

fn analyze(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
    records: &[RoundRecord],
    snapshots: &[ParamVector],
    final_model: &ParamVector,
) -> Result<AnalysisReport> {
    let objectives = prepared.objectives();
    let mut sigma_sq: f64 = 0.0;
    for (i, obj) in objectives.iter().enumerate() {
        let mut rng = rng::stream(cfg.experiment.seed, Purpose::Analysis, i as u64, 0);
        sigma_sq = sigma_sq.max(analysis::estimate_sigma_sq(
            *obj,
            final_model,
            cfg.training.batch_size,
            cfg.analysis.sigma_draws,
            &mut rng,
        )?);
    }
    let grid = analysis::beta_grid(cfg.analysis.beta_max, cfg.analysis.beta_points);
    let fit = analysis::estimate_dissimilarity(&objectives, snapshots, &grid, GradientSite::Dense)?;
    let pairs: Vec<(ParamVector, ParamVector)> = snapshots
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect();
    let mut smoothness: f64 = 0.0;
    for obj in &objectives {
        smoothness = smoothness.max(analysis::estimate_smoothness(*obj, &pairs)?);
    }
    let delta_max = records
        .iter()
        .filter_map(|r| r.delta_max)
        .fold(0.0, f64::max);
    let phis: Vec<f64> = records.iter().filter_map(|r| r.phi).collect();
    let (a, b, c) = AnalysisReport::rate_constants(cfg.training.local_steps);
    Ok(AnalysisReport {
        sigma_sq,
        beta_sq: fit.beta_sq,
        zeta_sq: fit.zeta_sq,
        dissimilarity_frontier: fit.frontier,
        smoothness_l: smoothness,
        delta_max,
        learning_rate: cfg.training.learning_rate,
        local_steps: cfg.training.local_steps,
        gamma: analysis::gamma(cfg.training.learning_rate, smoothness, cfg.training.local_steps),
        phi: MonteCarlo::from_samples(&phis),
        rate_a: a,
        rate_b: b,
        rate_c: c,
    })
}

pub struct RunOutput {
    pub prepared: Prepared,
    pub modes: Vec<ModeRun>,
}

impl RunOutput {
    pub fn mode(&self, mode: AggregationMode) -> Option<&ModeRun> {
        self.modes.iter().find(|r| r.mode == mode)
    }

    /// The matrix written as `similarity_final.csv`: safari's if it ran,
    /// otherwise the first mode's.
    pub fn final_similarity(&self) -> Option<&SimilarityMatrix> {
        self.mode(AggregationMode::Safari)
            .or(self.modes.first())
            .map(|r| &r.similarity)
    }
}

/// Run every configured mode. Modes share channel draws and client streams.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    let modes = cfg
        .experiment
        .modes
        .iter()
        .map(|&mode| run_mode(&prepared, cfg, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput { prepared, modes })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.active.len(),
            cell(r.train_loss),
            cell(r.eval.map(|e| e.loss)),
            cell(r.eval.map(|e| e.top1)),
            cell(r.eval.and_then(|e| e.top5)),
            cell(r.phi),
            cell(r.delta_max),
        );
    }
    out
}

pub fn surrogates_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(SURROGATES_HEADER);
    out.push('\n');
    for r in records {
        for (missing, surrogate) in &r.surrogates {
            let _ = writeln!(out, "{},{},{}", r.round, missing, surrogate);
        }
    }
    out
}

/// Write `metrics_<mode>.csv`, `surrogates_<mode>.csv`,
/// `similarity_final.csv` and `analysis.json` into `dir`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut reports = BTreeMap::new();
    for run in &output.modes {
        std::fs::write(dir.join(format!("metrics_{}.csv", run.mode)), metrics_csv(&run.records))?;
        std::fs::write(
            dir.join(format!("surrogates_{}.csv", run.mode)),
            surrogates_csv(&run.records),
        )?;
        if !run.similarity_history.is_empty() {
            let sub = dir.join("similarity");
            std::fs::create_dir_all(&sub)?;
            for (t, matrix) in &run.similarity_history {
                matrix.write_csv(sub.join(format!("{}_round_{t}.csv", run.mode)))?;
            }
        }
        reports.insert(run.mode.name().to_string(), run.analysis.clone());
    }
    if let Some(matrix) = output.final_similarity() {
        matrix.write_csv(dir.join("similarity_final.csv"))?;
    }
    let mut json = serde_json::to_string_pretty(&reports)?;
    json.push('\n');
    std::fs::write(dir.join("analysis.json"), json)?;
    Ok(())
}
