//! Synthetic clusterable datasets and group-structured client partitions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SafariError};
use crate::model::Batch;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if input_dim == 0 || inputs.len() != input_dim * labels.len() {
            return Err(SafariError::Config(format!(
                "dataset has {} features for {} labels at input_dim {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(SafariError::Config("dataset contains non-finite features".into()));
        }
        let mut seen = vec![false; class_count];
        for &l in &labels {
            match seen.get_mut(l) {
                Some(s) => *s = true,
                None => {
                    return Err(SafariError::Config(format!(
                        "label {l} out of range for {class_count} classes"
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SafariError::Config(format!("class {missing} has no samples")));
        }
        Ok(Self {
            inputs,
            input_dim,
            labels,
            class_count,
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

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs,
            input_dim: self.input_dim,
            labels,
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            input_dim: self.input_dim,
            labels: self.labels.clone(),
        }
    }

    fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Stratified split: `fraction` of every class goes to the holdout set.
    /// Each class keeps at least one training sample.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
            return Err(SafariError::Precondition(format!(
                "holdout fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for (c, mut idx) in self.class_indices().into_iter().enumerate() {
            let mut rng = rng::stream(seed, Purpose::Holdout, c as u64, 0);
            idx.shuffle(&mut rng);
            let take = ((fraction * idx.len() as f64).round() as usize).min(idx.len() - 1);
            holdout.extend_from_slice(&idx[..take]);
            train.extend_from_slice(&idx[take..]);
        }
        if holdout.is_empty() {
            return Err(SafariError::Precondition(
                "holdout split is empty; raise the fraction or the sample count".into(),
            ));
        }
        train.sort_unstable();
        holdout.sort_unstable();
        Ok((self.subset(&train), self.subset(&holdout)))
    }

    /// Rows at `indices`, keeping the full class count.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset {
            inputs: b.inputs,
            input_dim: self.input_dim,
            labels: b.labels,
            class_count: self.class_count,
        }
    }

    /// Load a CSV with a header row: feature columns, then an integer label column.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(SafariError::Config(
                "dataset CSV needs at least one feature column and a label column".into(),
            ));
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let bad = |what: &str| {
                SafariError::Config(format!("dataset CSV row {}: bad {what}", line + 2))
            };
            for field in record.iter().take(width - 1) {
                inputs.push(field.trim().parse::<f64>().map_err(|_| bad("feature"))?);
            }
            labels.push(record[width - 1].trim().parse::<usize>().map_err(|_| bad("label"))?);
        }
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::new(inputs, width - 1, labels, class_count)
    }
}

/// Gaussian blobs: one standard-normal centroid per class, samples at
/// `centroid + spread * N(0, I)`. Rows are grouped by class.
pub fn generate_blobs(
    class_count: usize,
    samples_per_class: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || samples_per_class == 0 || input_dim == 0 {
        return Err(SafariError::Precondition("blob counts must be at least 1".into()));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(SafariError::Precondition(format!(
            "spread must be finite and nonnegative, got {spread}"
        )));
    }
    let mut centroid_rng = rng::stream(seed, Purpose::Data, 0, 0);
    let centroids: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            (0..input_dim)
                .map(|_| StandardNormal.sample(&mut centroid_rng))
                .collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(class_count * samples_per_class * input_dim);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for (c, centroid) in centroids.iter().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Data, 1, c as u64);
        for _ in 0..samples_per_class {
            for &mu in centroid {
                let noise: f64 = StandardNormal.sample(&mut rng);
                inputs.push(mu + spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, input_dim, labels, class_count)
}

/// Assignment of samples to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub client_count: usize,
    pub group_count: usize,
    pub labels_per_client: usize,
    pub client_group: Vec<usize>,
    pub client_labels: Vec<Vec<usize>>,
    pub client_samples: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn group_of(&self, client: usize) -> usize {
        self.client_group[client]
    }

    pub fn group_members(&self, group: usize) -> Vec<usize> {
        (0..self.client_count)
            .filter(|&i| self.client_group[i] == group)
            .collect()
    }

    pub fn sample_count(&self, client: usize) -> usize {
        self.client_samples[client].len()
    }
}

fn check_groups(m: usize, group_count: usize) -> Result<usize> {
    if m == 0 || group_count == 0 || !m.is_multiple_of(group_count) {
        return Err(SafariError::Precondition(format!(
            "group count {group_count} must divide client count {m}"
        )));
    }
    Ok(m / group_count)
}

/// Split `items` into `parts` contiguous chunks whose sizes differ by at most
/// one; the remainder goes to the lowest-index chunks.
fn balanced_chunks<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Group-structured non-IID split. Clients are assigned to groups in
/// contiguous blocks; group `g` holds labels `g*k .. g*k + k` (mod the class
/// count). Each label's samples are divided among the groups holding it, and
/// each group's pool is divided among its clients without overlap.
pub fn partition_noniid(
    dataset: &Dataset,
    m: usize,
    group_count: usize,
    labels_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let per_group = check_groups(m, group_count)?;
    let classes = dataset.class_count;
    if labels_per_client == 0 || labels_per_client > classes {
        return Err(SafariError::Precondition(format!(
            "labels_per_client {labels_per_client} must lie in 1..={classes}"
        )));
    }
    if labels_per_client * group_count < classes {
        return Err(SafariError::InfeasiblePartition(format!(
            "{group_count} groups of {labels_per_client} labels cannot cover {classes} classes"
        )));
    }
    let group_labels: Vec<Vec<usize>> = (0..group_count)
        .map(|g| {
            let mut labels: Vec<usize> = (0..labels_per_client)
                .map(|j| (g * labels_per_client + j) % classes)
                .collect();
            labels.sort_unstable();
            labels
        })
        .collect();

    let mut group_pool: Vec<Vec<usize>> = vec![Vec::new(); group_count];
    for (c, mut idx) in dataset.class_indices().into_iter().enumerate() {
        let holders: Vec<usize> = (0..group_count)
            .filter(|&g| group_labels[g].contains(&c))
            .collect();
        let mut rng = rng::stream(seed, Purpose::Partition, 0, c as u64);
        idx.shuffle(&mut rng);
        for (g, chunk) in holders.iter().zip(balanced_chunks(&idx, holders.len())) {
            group_pool[*g].extend(chunk);
        }
    }

    let mut client_samples = Vec::with_capacity(m);
    for (g, pool) in group_pool.iter_mut().enumerate() {
        let mut rng = rng::stream(seed, Purpose::Partition, 1, g as u64);
        pool.shuffle(&mut rng);
        for mut chunk in balanced_chunks(pool, per_group) {
            chunk.sort_unstable();
            client_samples.push(chunk);
        }
    }
    if let Some(empty) = client_samples.iter().position(|s| s.is_empty()) {
        return Err(SafariError::InfeasiblePartition(format!(
            "client {empty} would receive no samples"
        )));
    }
    let client_group: Vec<usize> = (0..m).map(|i| i / per_group).collect();
    Ok(PartitionPlan {
        client_count: m,
        group_count,
        labels_per_client,
        client_labels: client_group.iter().map(|&g| group_labels[g].clone()).collect(),
        client_group,
        client_samples,
    })
}

/// Every client in a group gets the identical sample list: the group's
/// contiguous share of the classes, with all of their samples.
pub fn clusterable_clone_partition(
    dataset: &Dataset,
    m: usize,
    group_count: usize,
) -> Result<PartitionPlan> {
    let per_group = check_groups(m, group_count)?;
    let classes = dataset.class_count;
    let group_labels: Vec<Vec<usize>> = if group_count <= classes {
        balanced_chunks(&(0..classes).collect::<Vec<_>>(), group_count)
    } else {
        (0..group_count).map(|g| vec![g % classes]).collect()
    };
    let mut group_samples: Vec<Vec<usize>> = vec![Vec::new(); group_count];
    for (c, idx) in dataset.class_indices().into_iter().enumerate() {
        let holders: Vec<usize> = (0..group_count)
            .filter(|&g| group_labels[g].contains(&c))
            .collect();
        for (g, chunk) in holders.iter().zip(balanced_chunks(&idx, holders.len())) {
            group_samples[*g].extend(chunk);
        }
    }
    for (g, s) in group_samples.iter_mut().enumerate() {
        if s.is_empty() {
            return Err(SafariError::InfeasiblePartition(format!(
                "group {g} would receive no samples"
            )));
        }
        s.sort_unstable();
    }
    let client_group: Vec<usize> = (0..m).map(|i| i / per_group).collect();
    Ok(PartitionPlan {
        client_count: m,
        group_count,
        labels_per_client: group_labels.iter().map(Vec::len).max().unwrap_or(0),
        client_labels: client_group.iter().map(|&g| group_labels[g].clone()).collect(),
        client_samples: client_group.iter().map(|&g| group_samples[g].clone()).collect(),
        client_group,
    })
}
