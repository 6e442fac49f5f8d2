//! Lossy links between the server and its clients.
//!
//! Each client's transmission in round `t` succeeds independently with
//! probability `p_i^t`. There is no retransmission and no acknowledgement.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafariError};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from_round: usize,
    pub probabilities: Vec<f64>,
}

/// Per-client, per-round delivery probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkSchedule {
    Constant(Vec<f64>),
    /// Each segment applies from its `from_round` until the next one starts.
    Piecewise(Vec<Segment>),
    /// One row per round; rounds past the end reuse the last row.
    Table(Vec<Vec<f64>>),
}

impl LinkSchedule {
    pub fn reliable(m: usize) -> Self {
        LinkSchedule::Constant(vec![1.0; m])
    }

    pub fn uniform(m: usize, p: f64) -> Self {
        LinkSchedule::Constant(vec![p; m])
    }

    fn row(&self, t: usize) -> &[f64] {
        match self {
            LinkSchedule::Constant(p) => p,
            LinkSchedule::Piecewise(segments) => segments
                .iter()
                .rev()
                .find(|s| s.from_round <= t)
                .or(segments.first())
                .map_or(&[][..], |s| &s.probabilities),
            LinkSchedule::Table(rows) => rows
                .get(t)
                .or(rows.last())
                .map_or(&[][..], |r| r.as_slice()),
        }
    }

    pub fn probability(&self, client: usize, t: usize) -> f64 {
        self.row(t).get(client).copied().unwrap_or(0.0)
    }

    pub fn probabilities(&self, t: usize) -> Vec<f64> {
        self.row(t).to_vec()
    }

    /// Check shape and ranges for `m` clients and `rounds` rounds.
    pub fn validate(&self, m: usize, rounds: usize) -> Result<()> {
        let rows: Vec<&Vec<f64>> = match self {
            LinkSchedule::Constant(p) => vec![p],
            LinkSchedule::Piecewise(segments) => {
                if segments.is_empty() {
                    return Err(SafariError::Config("piecewise schedule has no segments".into()));
                }
                if segments[0].from_round != 0 {
                    return Err(SafariError::Config(
                        "first piecewise segment must start at round 0".into(),
                    ));
                }
                if segments.windows(2).any(|w| w[0].from_round >= w[1].from_round) {
                    return Err(SafariError::Config(
                        "piecewise segments must have increasing from_round".into(),
                    ));
                }
                segments.iter().map(|s| &s.probabilities).collect()
            }
            LinkSchedule::Table(table) => {
                if table.len() < rounds {
                    return Err(SafariError::Config(format!(
                        "reliability table has {} rows, run needs {rounds}",
                        table.len()
                    )));
                }
                table.iter().collect()
            }
        };
        for row in rows {
            if row.len() != m {
                return Err(SafariError::Config(format!(
                    "reliability row has {} entries for {m} clients",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(SafariError::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Read a per-round table: one row per round, one column per client.
    /// A non-numeric first row is treated as a header.
    pub fn load_table(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path.as_ref())?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(_) => {
                    return Err(SafariError::Config(format!(
                        "reliability table row {} is not numeric",
                        i + 1
                    )))
                }
            }
        }
        Ok(LinkSchedule::Table(rows))
    }
}

/// Clients whose transmission got through in a round. Members are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub round: usize,
    pub members: Vec<usize>,
}

impl ActiveSet {
    pub fn all(round: usize, m: usize) -> Self {
        Self {
            round,
            members: (0..m).collect(),
        }
    }

    pub fn contains(&self, client: usize) -> bool {
        self.members.binary_search(&client).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn intersect(&self, other: &ActiveSet) -> ActiveSet {
        ActiveSet {
            round: self.round,
            members: self
                .members
                .iter()
                .copied()
                .filter(|&c| other.contains(c))
                .collect(),
        }
    }
}

/// One independent Bernoulli draw per client, in client order.
pub fn sample_active<R: Rng + ?Sized>(
    schedule: &LinkSchedule,
    t: usize,
    m: usize,
    rng: &mut R,
) -> ActiveSet {
    let members = (0..m)
        .filter(|&i| {
            let u: f64 = rng.random();
            u < schedule.probability(i, t)
        })
        .collect();
    ActiveSet { round: t, members }
}

/// Downlink counterpart of [`sample_active`]; clients missing here skip the round.
pub fn broadcast_drop<R: Rng + ?Sized>(
    schedule: &LinkSchedule,
    t: usize,
    m: usize,
    rng: &mut R,
) -> ActiveSet {
    sample_active(schedule, t, m, rng)
}

/// Both link directions with their own seeded streams. The draws for round
/// `t` depend only on `(seed, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub uplink: LinkSchedule,
    pub downlink: LinkSchedule,
    pub seed: u64,
}

impl Channel {
    pub fn new(uplink: LinkSchedule, downlink: LinkSchedule, seed: u64) -> Self {
        Self {
            uplink,
            downlink,
            seed,
        }
    }

    pub fn reliable(m: usize) -> Self {
        Self::new(LinkSchedule::reliable(m), LinkSchedule::reliable(m), 0)
    }

    pub fn downlink_set(&self, t: usize, m: usize) -> ActiveSet {
        let mut rng = rng::stream(self.seed, Purpose::Downlink, t as u64, 0);
        broadcast_drop(&self.downlink, t, m, &mut rng)
    }

    /// Uplink successes among the clients that received the broadcast. The
    /// uplink is drawn for every client so downlink losses never shift it.
    pub fn uplink_set(&self, t: usize, m: usize, received_broadcast: &ActiveSet) -> ActiveSet {
        let mut rng = rng::stream(self.seed, Purpose::Uplink, t as u64, 0);
        sample_active(&self.uplink, t, m, &mut rng).intersect(received_broadcast)
    }

    /// End-to-end delivery probability of client `i` in round `t`.
    pub fn participation_probability(&self, client: usize, t: usize) -> f64 {
        self.downlink.probability(client, t) * self.uplink.probability(client, t)
    }
}
