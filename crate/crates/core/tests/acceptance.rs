//! Exit criteria for the simulator. Each test writes one `PASS`/`FAIL` line
//! straight to stderr so the verdicts show up without `--nocapture`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safari_core::analysis::{self, GradientSite, RateSetup};
use safari_core::channel::LinkSchedule;
use safari_core::client::LocalTraining;
use safari_core::model::{Batch, ModelSpec};
use safari_core::runner;
use safari_core::server::{aggregate, AggregateOutcome};
use safari_core::sparsity::{self, Mask, MaskAlgorithm};
use safari_core::{
    AggregationMode, Channel, ExperimentConfig, MlpObjective, Objective, ParamVector,
    QuadraticObjective, SimilarityMatrix, Simulation,
};

const UNRELIABLE: [f64; 10] = [1.0, 0.3, 0.3, 0.3, 0.3, 1.0, 0.3, 0.3, 0.3, 0.3];

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "[{}] criterion {id:>2}: {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(path).expect("bundled config loads")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pv(v: Vec<f64>) -> ParamVector {
    ParamVector::new(v)
}

// Substituted-list average built from scratch: pick each missing client's
// stand-in by scanning the active clients, then average the full list.
fn brute_force_safari(
    received: &BTreeMap<usize, ParamVector>,
    distances: &[Vec<Option<f64>>],
    m: usize,
) -> Vec<f64> {
    let active: Vec<usize> = received.keys().copied().collect();
    let d = received[&active[0]].len();
    let mut list: Vec<&ParamVector> = Vec::new();
    for j in 0..m {
        if let Some(x) = received.get(&j) {
            list.push(x);
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &a in &active {
            if let Some(dist) = distances[a][j] {
                if best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, a));
                }
            }
        }
        let pick = best.map_or(active[0], |(_, a)| a);
        list.push(&received[&pick]);
    }
    (0..d)
        .map(|n| list.iter().map(|x| x[n]).sum::<f64>() / m as f64)
        .collect()
}

#[test]
fn criterion_01_aggregation_oracle() {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut collapse_exact = true;
    for _ in 0..1000 {
        let m = r.random_range(1..=8);
        let d = r.random_range(1..=5);
        let mut distances = vec![vec![None; m]; m];
        let mut matrix = SimilarityMatrix::unknown(m);
        for u in 0..m {
            for v in u + 1..m {
                if r.random_bool(0.6) {
                    // coarse values so ties happen
                    let dist = f64::from(r.random_range(0..4u8)) * 0.5;
                    distances[u][v] = Some(dist);
                    distances[v][u] = Some(dist);
                    matrix.set(u, v, dist);
                }
            }
        }
        let models: Vec<ParamVector> = (0..m)
            .map(|_| pv((0..d).map(|_| r.random_range(-5.0..5.0)).collect()))
            .collect();
        let mut received: BTreeMap<usize, ParamVector> = (0..m)
            .filter(|_| r.random_bool(0.5))
            .map(|i| (i, models[i].clone()))
            .collect();
        if received.is_empty() {
            let i = r.random_range(0..m);
            received.insert(i, models[i].clone());
        }
        let expected = brute_force_safari(&received, &distances, m);
        match aggregate(AggregationMode::Safari, &received, &matrix, m).unwrap() {
            AggregateOutcome::Updated { model, .. } => {
                for (a, b) in model.iter().zip(&expected) {
                    worst = worst.max((a - b).abs());
                }
            }
            AggregateOutcome::Skipped => panic!("nonempty round skipped"),
        }

        let all: BTreeMap<usize, ParamVector> = models.iter().cloned().enumerate().collect();
        let safari = aggregate(AggregationMode::Safari, &all, &matrix, m).unwrap();
        let fedavg = aggregate(AggregationMode::FedavgReliable, &all, &matrix, m).unwrap();
        let plain: Vec<f64> = (0..d)
            .map(|n| models.iter().map(|x| x[n]).sum::<f64>() / m as f64)
            .collect();
        match (safari, fedavg) {
            (
                AggregateOutcome::Updated { model: s, .. },
                AggregateOutcome::Updated { model: f, .. },
            ) => collapse_exact &= s == f && s.as_slice() == plain.as_slice(),
            _ => collapse_exact = false,
        }
    }
    verdict(
        1,
        "aggregation matches brute-force substitution",
        worst <= 1e-12 && collapse_exact,
        &format!("max abs error {worst:e} over 1000 instances, full participation exact = {collapse_exact}"),
    );
}

#[test]
fn criterion_02_clone_partition_has_zero_bias() {
    let mut cfg = config("clone.toml");
    cfg.experiment.oracle_mode = true;
    let prepared = runner::prepare(&cfg).unwrap();
    let sim = |mode| {
        Simulation::new(
            mode,
            prepared.clients.clone(),
            prepared.channel.clone(),
            prepared.training,
            prepared.initial.clone(),
            true,
        )
        .unwrap()
    };
    let mut safari = sim(AggregationMode::Safari);
    let mut fedavg = sim(AggregationMode::FedavgReliable);
    let mut nonzero_phi = Vec::new();
    let mut first_divergence = None;
    for _ in 0..cfg.experiment.rounds {
        let obs = safari.step().unwrap();
        fedavg.step().unwrap();
        // rounds are counted from 1 here; round 2 is t = 1
        if obs.round >= 1 && obs.phi != Some(0.0) {
            nonzero_phi.push(obs.round);
        }
        if first_divergence.is_none() && safari.global() != fedavg.global() {
            first_divergence = Some(obs.round);
        }
    }
    let pass = nonzero_phi.is_empty() && first_divergence.is_none();
    verdict(
        2,
        "clone groups: zero bias and fedavg-identical trajectory",
        pass,
        &format!(
            "{} of {} rounds (t >= 1) with phi != 0{}, trajectories {}",
            nonzero_phi.len(),
            cfg.experiment.rounds.saturating_sub(1),
            nonzero_phi
                .last()
                .map_or(String::new(), |t| format!(" (last at t = {t})")),
            first_divergence.map_or("bit-identical".to_string(), |t| format!("diverge at t = {t}")),
        ),
    );
}

struct Tail {
    mean_loss: f64,
    std_loss: f64,
    mean_acc: f64,
}

fn tail(records: &[runner::RoundRecord]) -> Tail {
    let evals: Vec<_> = records.iter().filter_map(|r| r.eval).collect();
    let last = &evals[evals.len() - 50..];
    let n = last.len() as f64;
    let mean_loss = last.iter().map(|e| e.loss).sum::<f64>() / n;
    let var = last.iter().map(|e| (e.loss - mean_loss).powi(2)).sum::<f64>() / n;
    Tail {
        mean_loss,
        std_loss: var.sqrt(),
        mean_acc: last.iter().map(|e| e.top1).sum::<f64>() / n,
    }
}

struct PairedRun {
    algorithm: MaskAlgorithm,
    safari: Tail,
    drop: Tail,
    fedavg: Tail,
    /// (within-group, total) surrogate picks after round 20
    within_group: (usize, usize),
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn paired_runs() -> &'static [PairedRun] {
    static RUNS: OnceLock<Vec<PairedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut out = Vec::new();
        for algorithm in [MaskAlgorithm::Magnitude, MaskAlgorithm::Synflow] {
            for seed in SEEDS {
                let mut cfg = config("reference.toml");
                cfg.experiment.seed = seed;
                cfg.sparsity.algorithm = algorithm;
                cfg.experiment.modes = AggregationMode::ALL.to_vec();
                let run = runner::run(&cfg).unwrap();
                let get = |mode| tail(&run.mode(mode).unwrap().records);

                let csv = runner::surrogates_csv(&run.mode(AggregationMode::Safari).unwrap().records);
                let mut within = (0, 0);
                for row in csv.lines().skip(1) {
                    let cells: Vec<usize> = row.split(',').map(|c| c.parse().unwrap()).collect();
                    if cells[0] >= 20 {
                        let plan = &run.prepared.plan;
                        within.0 += usize::from(plan.group_of(cells[1]) == plan.group_of(cells[2]));
                        within.1 += 1;
                    }
                }
                out.push(PairedRun {
                    algorithm,
                    safari: get(AggregationMode::Safari),
                    drop: get(AggregationMode::DropNoCompensation),
                    fedavg: get(AggregationMode::FedavgReliable),
                    within_group: within,
                });
            }
        }
        out
    })
}

fn seed_mean(runs: &[&PairedRun], f: impl Fn(&PairedRun) -> f64) -> f64 {
    runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64
}

fn by_algorithm(algorithm: MaskAlgorithm) -> Vec<&'static PairedRun> {
    paired_runs().iter().filter(|r| r.algorithm == algorithm).collect()
}

#[test]
fn criterion_03_compensation_beats_dropping() {
    let mut pass = true;
    let mut detail = Vec::new();
    for algorithm in [MaskAlgorithm::Magnitude, MaskAlgorithm::Synflow] {
        let runs = by_algorithm(algorithm);
        let (sl, dl) = (seed_mean(&runs, |r| r.safari.mean_loss), seed_mean(&runs, |r| r.drop.mean_loss));
        let (ss, ds) = (seed_mean(&runs, |r| r.safari.std_loss), seed_mean(&runs, |r| r.drop.std_loss));
        pass &= sl <= dl && ss < 0.5 * ds;
        detail.push(format!(
            "{algorithm}: loss {sl:.4} vs {dl:.4}, std {ss:.4} vs {ds:.4} (ratio {:.2})",
            ss / ds
        ));
    }
    verdict(3, "compensation lowers and steadies eval loss", pass, &detail.join("; "));
}

#[test]
fn criterion_04_near_reliable_accuracy() {
    let mut pass = true;
    let mut detail = Vec::new();
    for algorithm in [MaskAlgorithm::Magnitude, MaskAlgorithm::Synflow] {
        let runs = by_algorithm(algorithm);
        let (sa, fa) = (seed_mean(&runs, |r| r.safari.mean_acc), seed_mean(&runs, |r| r.fedavg.mean_acc));
        let gap = (sa - fa).abs() * 100.0;
        pass &= gap <= 2.0;
        detail.push(format!("{algorithm}: acc {sa:.4} vs reliable {fa:.4} ({gap:.2} pp)"));
    }
    verdict(4, "accuracy within 2 points of reliable links", pass, &detail.join("; "));
}

#[test]
fn criterion_05_surrogates_stay_in_group() {
    let (within, total) = paired_runs()
        .iter()
        .fold((0, 0), |acc, r| (acc.0 + r.within_group.0, acc.1 + r.within_group.1));
    let share = within as f64 / total as f64;
    verdict(
        5,
        "surrogates chosen within the missing client's group",
        total > 0 && share >= 0.9,
        &format!("{within}/{total} = {:.3} after round 20", share),
    );
}

#[test]
fn criterion_06_mask_contracts() {
    let spec = ModelSpec::new(4, 6, 3);
    let d = spec.param_count();
    let mut r = rng(606);
    let inputs: Vec<f64> = (0..8 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let objective = MlpObjective::new(spec, Batch::new(inputs, 4, labels).unwrap()).unwrap();

    let mut bad_count = 0;
    let mut max_delta: f64 = 0.0;
    let mut magnitude_beaten = 0;
    for alpha in [0.2, 0.5, 0.8] {
        let zeros = (alpha * d as f64).round() as usize;
        for _ in 0..1000 {
            let params = pv((0..d).map(|_| r.random_range(-2.0..2.0)).collect());
            for algorithm in MaskAlgorithm::ALL {
                let mask = sparsity::compute_mask(algorithm, alpha, &params, &objective, &mut r).unwrap();
                bad_count += usize::from(mask.zero_count() != zeros);
                max_delta = max_delta.max(sparsity::measure_delta(&params, &mask).unwrap());
            }
            let best = sparsity::measure_delta(&params, &sparsity::magnitude_mask(&params, alpha).unwrap()).unwrap();
            for _ in 0..100 {
                let other = sparsity::random_mask(d, alpha, &mut r).unwrap();
                if sparsity::measure_delta(&params, &other).unwrap() < best {
                    magnitude_beaten += 1;
                }
            }
        }
    }
    verdict(
        6,
        "mask sparsity, delta bound and magnitude optimality",
        bad_count == 0 && max_delta < 1.0 && magnitude_beaten == 0,
        &format!(
            "{bad_count} wrong zero counts, max delta {max_delta:.4}, magnitude beaten {magnitude_beaten} times"
        ),
    );
}

#[test]
fn criterion_07_local_descent_on_quadratic() {
    let mut r = rng(707);
    let mut worst = f64::INFINITY;
    let mut runs = 0;
    for _ in 0..100 {
        let dim = r.random_range(1..=6);
        let curvature: Vec<f64> = (0..dim).map(|_| r.random_range(0.1..5.0)).collect();
        let centers: Vec<ParamVector> = (0..r.random_range(1..=4))
            .map(|_| pv((0..dim).map(|_| r.random_range(-3.0..3.0)).collect()))
            .collect();
        let q = QuadraticObjective::new(curvature, centers).unwrap();
        let start = pv((0..dim).map(|_| r.random_range(-5.0..5.0)).collect());
        for tau in [1usize, 5] {
            let eta = tau as f64 / (6.0 * q.smoothness());
            let report = analysis::check_local_descent(&q, &start, eta, tau, &Mask::ones(dim), 0.0).unwrap();
            worst = worst.min(report.min_slack);
            runs += 1;
        }
    }
    verdict(
        7,
        "per-step descent on quadratics",
        worst >= -1e-9,
        &format!("min slack {worst:e} over {runs} runs"),
    );
}

// Plain-loop forward pass, used only to difference the loss.
fn reference_loss(params: &[f64], spec: &ModelSpec, inputs: &[f64], labels: &[usize]) -> f64 {
    let (i_dim, h_dim, o_dim) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
    let w1 = &params[..h_dim * i_dim];
    let b1 = &params[h_dim * i_dim..h_dim * i_dim + h_dim];
    let off = h_dim * i_dim + h_dim;
    let w2 = &params[off..off + o_dim * h_dim];
    let b2 = &params[off + o_dim * h_dim..];
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let x = &inputs[s * i_dim..(s + 1) * i_dim];
        let h: Vec<f64> = (0..h_dim)
            .map(|j| (b1[j] + (0..i_dim).map(|k| w1[j * i_dim + k] * x[k]).sum::<f64>()).max(0.0))
            .collect();
        let z: Vec<f64> = (0..o_dim)
            .map(|o| b2[o] + (0..h_dim).map(|j| w2[o * h_dim + j] * h[j]).sum::<f64>())
            .collect();
        let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + z.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        total += lse - z[label];
    }
    total / labels.len() as f64
}

#[test]
fn criterion_08_gradient_matches_finite_differences() {
    let mut r = rng(808);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let spec = ModelSpec::new(r.random_range(1..=4), r.random_range(1..=5), r.random_range(2..=4));
        let n = r.random_range(1..=6);
        let inputs: Vec<f64> = (0..n * spec.input_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..spec.output_dim)).collect();
        let batch = Batch::new(inputs.clone(), spec.input_dim, labels.clone()).unwrap();
        let params: Vec<f64> = (0..spec.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
        let analytic = safari_core::model::gradient(&pv(params.clone()), &spec, &batch).unwrap();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..params.len())
            .map(|k| {
                let mut up = params.clone();
                let mut down = params.clone();
                up[k] += h;
                down[k] -= h;
                (reference_loss(&up, &spec, &inputs, &labels) - reference_loss(&down, &spec, &inputs, &labels))
                    / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1e-8);
        worst = worst.max(diff / scale);
    }
    verdict(
        8,
        "backprop agrees with central differences",
        worst < 1e-5,
        &format!("max relative error {worst:e} over 100 draws"),
    );
}

#[test]
fn criterion_09_channel_statistics() {
    const ROUNDS: usize = 100_000;
    let m = UNRELIABLE.len();
    let uplink_only = Channel::new(LinkSchedule::Constant(UNRELIABLE.to_vec()), LinkSchedule::reliable(m), 909);
    let mut counts = vec![0usize; m];
    let mut joint = vec![vec![0usize; m]; m];
    for t in 0..ROUNDS {
        let down = uplink_only.downlink_set(t, m);
        let active = uplink_only.uplink_set(t, m, &down);
        for &i in &active.members {
            counts[i] += 1;
            for &j in &active.members {
                joint[i][j] += 1;
            }
        }
    }
    let n = ROUNDS as f64;
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let rate_err = rates.iter().zip(&UNRELIABLE).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
    let mut max_cov: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            max_cov = max_cov.max((joint[i][j] as f64 / n - rates[i] * rates[j]).abs());
        }
    }

    let downlink = 0.8;
    let both = Channel::new(LinkSchedule::Constant(UNRELIABLE.to_vec()), LinkSchedule::uniform(m, downlink), 910);
    let mut end_to_end = vec![0usize; m];
    let mut dropped_but_uploaded = 0;
    for t in 0..ROUNDS {
        let down = both.downlink_set(t, m);
        let active = both.uplink_set(t, m, &down);
        dropped_but_uploaded += active.members.iter().filter(|&&i| !down.contains(i)).count();
        for &i in &active.members {
            end_to_end[i] += 1;
        }
    }
    let product_err = end_to_end
        .iter()
        .zip(&UNRELIABLE)
        .map(|(&c, p)| (c as f64 / n - downlink * p).abs())
        .fold(0.0, f64::max);

    verdict(
        9,
        "link draws match rates and are independent",
        rate_err <= 0.01 && max_cov < 0.005 && product_err <= 0.01 && dropped_but_uploaded == 0,
        &format!(
            "max rate error {rate_err:.4}, max |cov| {max_cov:.4}, max two-hop error {product_err:.4}, {dropped_but_uploaded} uploads without broadcast"
        ),
    );
}

#[test]
fn criterion_10_more_rounds_reach_smaller_gradients() {
    let mut r = rng(1010);
    let dim = 4;
    let m = UNRELIABLE.len();
    let groups: Vec<Arc<dyn Objective>> = (0..2)
        .map(|_| {
            let curvature: Vec<f64> = (0..dim).map(|_| r.random_range(0.5..2.0)).collect();
            let centers: Vec<ParamVector> = (0..3)
                .map(|_| pv((0..dim).map(|_| r.random_range(-2.0..2.0)).collect()))
                .collect();
            Arc::new(QuadraticObjective::new(curvature, centers).unwrap()) as Arc<dyn Objective>
        })
        .collect();
    let group_of = |i: usize| i * 2 / m;
    let setup = RateSetup {
        objectives: (0..m).map(|i| groups[group_of(i)].clone()).collect(),
        stream_ids: (0..m).map(|i| group_of(i) as u64).collect(),
        initial: pv(vec![5.0; dim]),
        channel: Channel::new(LinkSchedule::Constant(UNRELIABLE.to_vec()), LinkSchedule::reliable(m), 1011),
        mode: AggregationMode::Safari,
        training: LocalTraining {
            learning_rate: 1.0,
            local_steps: 5,
            mask_algorithm: MaskAlgorithm::Magnitude,
            sparsity: 0.0,
            track_full_gradient: false,
        },
        batch_size: 3,
        seed: 1012,
    };
    let report = analysis::rate_experiment(&setup, &[100, 400, 1600]).unwrap();
    let mins: Vec<String> = report
        .entries
        .iter()
        .map(|e| format!("T={} min {:.3e}", e.rounds, e.min_grad_norm_sq))
        .collect();
    let ratios: Vec<String> = report
        .observed_ratios
        .iter()
        .zip(&report.predicted_ratios)
        .map(|(o, p)| format!("{o:.3e}/{p:.3}"))
        .collect();
    verdict(
        10,
        "minimum gradient norm falls with the horizon",
        report.strictly_decreasing,
        &format!("{}; observed/sqrt ratio {}", mins.join(", "), ratios.join(", ")),
    );
}

#[test]
fn criterion_11_dissimilarity_sanity() {
    let mut r = rng(1111);
    let spec = ModelSpec::new(3, 4, 3);
    let inputs: Vec<f64> = (0..12 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let one = MlpObjective::new(spec, Batch::new(inputs, 3, labels).unwrap()).unwrap();
    let same: Vec<&dyn Objective> = vec![&one; 4];
    let points: Vec<ParamVector> = (0..5)
        .map(|_| pv((0..spec.param_count()).map(|_| r.random_range(-1.0..1.0)).collect()))
        .collect();
    let grid = analysis::beta_grid(10.0, 19);
    let fit = analysis::estimate_dissimilarity(&same, &points, &grid, GradientSite::Dense).unwrap();
    let identical_ok = (fit.beta_sq - 1.0).abs() <= 1e-9 && fit.zeta_sq.abs() <= 1e-9;

    let cfg = config("clone.toml");
    let prepared = runner::prepare(&cfg).unwrap();
    let probes = [prepared.initial.clone(), runner::initial_params(&prepared.spec, 99)];
    let mut spread: f64 = 0.0;
    let mut group_zeta: f64 = 0.0;
    for g in 0..cfg.partition.groups {
        let members = prepared.plan.group_members(g);
        let objectives: Vec<&dyn Objective> =
            members.iter().map(|&i| prepared.clients[i].objective.as_ref()).collect();
        for x in &probes {
            let first = objectives[0].full_gradient(x).unwrap();
            for obj in &objectives[1..] {
                spread = spread.max(obj.full_gradient(x).unwrap().dist_sq(&first));
            }
        }
        let fit = analysis::estimate_dissimilarity(&objectives, &probes, &grid, GradientSite::Dense).unwrap();
        group_zeta = group_zeta.max(fit.zeta_sq);
    }
    verdict(
        11,
        "dissimilarity fit on identical and cloned clients",
        identical_ok && spread == 0.0 && group_zeta <= 1e-9,
        &format!(
            "identical fit ({:.3e}, {:.3e}), within-group gradient spread {spread:e}, within-group zeta^2 {group_zeta:e}",
            fit.beta_sq, fit.zeta_sq
        ),
    );
}

#[test]
fn criterion_12_reruns_are_byte_identical() {
    let cfg = config("reference.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        runner::write_outputs(&runner::run(&cfg).unwrap(), dir.path()).unwrap();
    }
    let mut files: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|name| name.ends_with(".csv"))
        .collect();
    files.sort();
    let differing: Vec<&String> = files
        .iter()
        .filter(|name| {
            std::fs::read(dirs[0].path().join(name)).unwrap() != std::fs::read(dirs[1].path().join(name)).unwrap()
        })
        .collect();
    let metrics = files.iter().filter(|f| f.starts_with("metrics_")).count();
    verdict(
        12,
        "same seed reproduces every CSV byte for byte",
        differing.is_empty() && metrics == cfg.experiment.modes.len(),
        &format!("{} CSV files compared ({metrics} metrics), differing: {differing:?}", files.len()),
    );
}
