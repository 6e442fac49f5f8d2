//! Server-side aggregation with similarity-based compensation.
//!
//! The server keeps a table of pairwise l2 distances between the models
//! clients returned while they were active together. A client whose update is
//! lost is replaced in the average by the active client closest to it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SafariError};
use crate::model::ParamVector;

/// Pairwise model distances. `None` means the pair was never active together.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    m: usize,
    entries: Vec<Option<f64>>,
}

impl SimilarityMatrix {
    pub fn unknown(m: usize) -> Self {
        Self {
            m,
            entries: vec![None; m * m],
        }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.entries[u * self.m + v]
    }

    pub fn set(&mut self, u: usize, v: usize, distance: f64) {
        self.entries[u * self.m + v] = Some(distance);
        self.entries[v * self.m + u] = Some(distance);
    }

    /// Overwrite the distance of every pair of received models. Entries for
    /// other pairs keep their last value.
    pub fn update(&mut self, received: &BTreeMap<usize, ParamVector>) {
        let models: Vec<(&usize, &ParamVector)> = received.iter().collect();
        for (a, (u, xu)) in models.iter().enumerate() {
            for (v, xv) in &models[a + 1..] {
                self.set(**u, **v, xu.dist(xv));
            }
        }
    }

    /// The active client closest to `missing`. Known distances rank before
    /// unknown ones; ties and the all-unknown case go to the lowest index.
    pub fn select_surrogate(&self, missing: usize, active: &[usize]) -> Result<usize> {
        active
            .iter()
            .copied()
            .filter(|&i| i != missing)
            .min_by(|&a, &b| {
                let key = |i: usize| self.get(i, missing);
                match (key(a), key(b)) {
                    (Some(x), Some(y)) => x.total_cmp(&y).then(a.cmp(&b)),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => a.cmp(&b),
                }
            })
            .ok_or(SafariError::NoSurrogate)
    }

    /// `m` rows of `m` comma-separated cells; unknown entries are empty and
    /// the diagonal is 0.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for u in 0..self.m {
            let row: Vec<String> = (0..self.m)
                .map(|v| {
                    if u == v {
                        "0".to_string()
                    } else {
                        self.get(u, v).map(|d| d.to_string()).unwrap_or_default()
                    }
                })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggregationMode {
    /// Missing clients are replaced by their most similar active client.
    #[serde(rename = "safari")]
    Safari,
    /// Every client always delivers; plain average over all `m`.
    #[serde(rename = "fedavg")]
    FedavgReliable,
    /// Average over whatever arrived.
    #[serde(rename = "drop")]
    DropNoCompensation,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 3] = [
        AggregationMode::Safari,
        AggregationMode::DropNoCompensation,
        AggregationMode::FedavgReliable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::Safari => "safari",
            AggregationMode::FedavgReliable => "fedavg",
            AggregationMode::DropNoCompensation => "drop",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMode {
    type Err = SafariError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "safari" => Ok(AggregationMode::Safari),
            "fedavg" | "fedavg_reliable" => Ok(AggregationMode::FedavgReliable),
            "drop" | "drop_no_compensation" => Ok(AggregationMode::DropNoCompensation),
            other => Err(SafariError::Config(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregateOutcome {
    Updated {
        model: ParamVector,
        /// missing client -> surrogate (safari only)
        surrogates: BTreeMap<usize, usize>,
    },
    /// Nothing arrived; the global model stays as it is.
    Skipped,
}

fn mean_of<'a>(terms: impl Iterator<Item = &'a ParamVector>, d: usize, count: usize) -> ParamVector {
    let mut sum = ParamVector::zeros(d);
    for t in terms {
        for (s, v) in sum.iter_mut().zip(t.iter()) {
            *s += v;
        }
    }
    let n = count as f64;
    for s in sum.iter_mut() {
        *s /= n;
    }
    sum
}

/// Combine the received models. Terms are summed in client order, with each
/// missing client's slot filled by its surrogate in `safari` mode.
pub fn aggregate(
    mode: AggregationMode,
    received: &BTreeMap<usize, ParamVector>,
    similarity: &SimilarityMatrix,
    m: usize,
) -> Result<AggregateOutcome> {
    if let Some(&bad) = received.keys().find(|&&k| k >= m) {
        return Err(SafariError::Config(format!("client {bad} outside 0..{m}")));
    }
    let d = match received.values().next() {
        Some(x) => x.len(),
        None if mode == AggregationMode::FedavgReliable => {
            return Err(SafariError::Config("fedavg_reliable received no models".into()))
        }
        None => return Ok(AggregateOutcome::Skipped),
    };
    if received.values().any(|x| x.len() != d) {
        return Err(SafariError::Config("received models differ in length".into()));
    }
    let active: Vec<usize> = received.keys().copied().collect();
    match mode {
        AggregationMode::FedavgReliable => {
            if received.len() != m {
                return Err(SafariError::Config(format!(
                    "fedavg_reliable needs all {m} models, received {}",
                    received.len()
                )));
            }
            Ok(AggregateOutcome::Updated {
                model: mean_of(received.values(), d, m),
                surrogates: BTreeMap::new(),
            })
        }
        AggregationMode::DropNoCompensation => Ok(AggregateOutcome::Updated {
            model: mean_of(received.values(), d, received.len()),
            surrogates: BTreeMap::new(),
        }),
        AggregationMode::Safari => {
            let mut surrogates = BTreeMap::new();
            let mut slots = Vec::with_capacity(m);
            for i in 0..m {
                match received.get(&i) {
                    Some(x) => slots.push(x),
                    None => {
                        let j = similarity.select_surrogate(i, &active)?;
                        surrogates.insert(i, j);
                        slots.push(&received[&j]);
                    }
                }
            }
            Ok(AggregateOutcome::Updated {
                model: mean_of(slots.into_iter(), d, m),
                surrogates,
            })
        }
    }
}

/// Global model plus similarity state for one aggregation mode.
#[derive(Debug, Clone)]
pub struct Server {
    pub mode: AggregationMode,
    pub global: ParamVector,
    pub similarity: SimilarityMatrix,
    m: usize,
}

impl Server {
    pub fn new(mode: AggregationMode, initial: ParamVector, m: usize) -> Self {
        Self {
            mode,
            global: initial,
            similarity: SimilarityMatrix::unknown(m),
            m,
        }
    }

    pub fn client_count(&self) -> usize {
        self.m
    }

    /// Update similarities for the received models, then aggregate. On
    /// `Skipped` the global model is left untouched.
    pub fn receive(&mut self, received: &BTreeMap<usize, ParamVector>) -> Result<AggregateOutcome> {
        self.similarity.update(received);
        let outcome = aggregate(self.mode, received, &self.similarity, self.m)?;
        if let AggregateOutcome::Updated { model, .. } = &outcome {
            self.global = model.clone();
        }
        Ok(outcome)
    }
}
