//! Round-synchronous federated loop over arbitrary client objectives.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::analysis;
use crate::channel::{ActiveSet, Channel};
use crate::client::{self, ClientState, LocalResult, LocalTraining};
use crate::error::{Result, SafariError};
use crate::model::ParamVector;
use crate::server::{AggregateOutcome, AggregationMode, Server};
use crate::sparsity;

/// Everything observed in one round.
#[derive(Debug, Clone)]
pub struct RoundObservation {
    pub round: usize,
    pub received_broadcast: ActiveSet,
    pub active: ActiveSet,
    /// missing client -> surrogate
    pub surrogates: BTreeMap<usize, usize>,
    pub skipped: bool,
    /// Indexed by client; `None` for clients that did not train.
    pub local: Vec<Option<LocalResult>>,
    /// Mask-induced error of each trained client's mask on the broadcast model.
    pub deltas: Vec<Option<f64>>,
    pub phi: Option<f64>,
}

impl RoundObservation {
    pub fn delta_max(&self) -> Option<f64> {
        self.deltas.iter().flatten().cloned().reduce(f64::max)
    }

    pub fn client_losses(&self) -> Vec<Option<f64>> {
        self.local.iter().map(|r| r.as_ref().map(LocalResult::mean_loss)).collect()
    }
}

pub struct Simulation {
    clients: Vec<ClientState>,
    channel: Channel,
    training: LocalTraining,
    server: Server,
    oracle: bool,
    round: usize,
}

impl Simulation {
    /// In oracle mode every client trains each round, whether or not its
    /// broadcast or upload gets through, so the bias term can be measured.
    /// The server still only sees what the channel delivers.
    pub fn new(
        mode: AggregationMode,
        clients: Vec<ClientState>,
        channel: Channel,
        mut training: LocalTraining,
        initial: ParamVector,
        oracle: bool,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(SafariError::Config("no clients".into()));
        }
        if let Some(c) = clients.iter().find(|c| c.objective.dim() != initial.len()) {
            return Err(SafariError::Config(format!(
                "client {} has dimension {}, model has {}",
                c.client_id,
                c.objective.dim(),
                initial.len()
            )));
        }
        if clients.iter().enumerate().any(|(i, c)| c.client_id != i) {
            return Err(SafariError::Config("client ids must be 0..m in order".into()));
        }
        training.track_full_gradient = oracle;
        let m = clients.len();
        Ok(Self {
            clients,
            channel,
            training,
            server: Server::new(mode, initial, m),
            oracle,
            round: 0,
        })
    }

    pub fn global(&self) -> &ParamVector {
        &self.server.global
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn mode(&self) -> AggregationMode {
        self.server.mode
    }

    pub fn step(&mut self) -> Result<RoundObservation> {
        let t = self.round;
        let m = self.clients.len();
        let mode = self.server.mode;
        let (down, active) = if mode == AggregationMode::FedavgReliable {
            (ActiveSet::all(t, m), ActiveSet::all(t, m))
        } else {
            let down = self.channel.downlink_set(t, m);
            let up = self.channel.uplink_set(t, m, &down);
            (down, up)
        };

        let trainees: Vec<usize> = if self.oracle {
            (0..m).collect()
        } else {
            active.members.clone()
        };
        let broadcast = self.server.global.clone();
        let results: Vec<(usize, LocalResult)> = trainees
            .par_iter()
            .map(|&i| {
                client::local_sparse_train(&broadcast, &self.clients[i], &self.training, t)
                    .map(|r| (i, r))
            })
            .collect::<Result<_>>()?;

        let mut local: Vec<Option<LocalResult>> = vec![None; m];
        for (i, r) in results {
            local[i] = Some(r);
        }
        let received: BTreeMap<usize, ParamVector> = active
            .members
            .iter()
            .map(|&i| (i, local[i].as_ref().expect("active client trained").model.clone()))
            .collect();
        let outcome = self.server.receive(&received)?;
        if !self.server.global.is_finite() {
            return Err(SafariError::NonFinite { round: t });
        }

        let deltas = local
            .iter()
            .map(|r| {
                r.as_ref()
                    .and_then(|r| sparsity::measure_delta(&broadcast, &r.mask).ok())
            })
            .collect();

        let (skipped, surrogates) = match outcome {
            AggregateOutcome::Updated { surrogates, .. } => (false, surrogates),
            AggregateOutcome::Skipped => (true, BTreeMap::new()),
        };

        let phi = if !self.oracle {
            None
        } else {
            match mode {
                AggregationMode::FedavgReliable => Some(0.0),
                AggregationMode::DropNoCompensation => None,
                AggregationMode::Safari if skipped => None,
                AggregationMode::Safari => {
                    let h: Vec<ParamVector> = local
                        .iter()
                        .map(|r| r.as_ref().and_then(|r| r.h_hat.clone()).expect("oracle h_hat"))
                        .collect();
                    let probs: Vec<f64> = (0..m)
                        .map(|i| self.channel.participation_probability(i, t))
                        .collect();
                    let chosen: Vec<usize> = (0..m)
                        .map(|i| self.would_substitute(i, &active, &surrogates))
                        .collect();
                    Some(analysis::compute_phi(&probs, &h, &chosen))
                }
            }
        };

        self.round += 1;
        Ok(RoundObservation {
            round: t,
            received_broadcast: down,
            active,
            surrogates,
            skipped,
            local,
            deltas,
            phi,
        })
    }

    /// The surrogate client `i` gets (or would get, were it lost) this round.
    fn would_substitute(
        &self,
        i: usize,
        active: &ActiveSet,
        surrogates: &BTreeMap<usize, usize>,
    ) -> usize {
        if let Some(&j) = surrogates.get(&i) {
            return j;
        }
        let others: Vec<usize> = active.members.iter().copied().filter(|&c| c != i).collect();
        self.server.similarity.select_surrogate(i, &others).unwrap_or(i)
    }
}
