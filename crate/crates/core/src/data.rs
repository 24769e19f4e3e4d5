//! Synthetic classification tasks, non-IID client partitions and per-client
//! train/validation/test splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CsvError, Error, Result};
use crate::rng;

/// Row-major feature matrix with integer labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidArgument("n_features must be positive".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n_features,
                found: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features.chunks(self.n_features).zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn feature_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_features];
        for (row, _) in self.rows() {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.len().max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }
}

/// Class centres on the radius-`class_sep` sphere: scaled basis vectors when
/// `k <= d`, otherwise evenly spaced on a circle in the first two coordinates.
fn class_means(k: usize, d: usize, class_sep: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut m = vec![0.0; d];
            if k <= d {
                m[c] = class_sep;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                m[0] = class_sep * angle.cos();
                m[1] = class_sep * angle.sin();
            }
            m
        })
        .collect()
}

/// Balanced K-class Gaussian mixture with unit covariance.
pub fn gen_gaussian_task(k: usize, d: usize, n: usize, class_sep: f64, seed: u64) -> Result<LabeledDataset> {
    if k < 2 || d < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "gaussian task needs K >= 2, d >= 2, n >= K (got K={k}, d={d}, n={n})"
        )));
    }
    let mut rng = rng::seeded(seed);
    let means = class_means(k, d, class_sep);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * d);
    for &y in &labels {
        for mu in &means[y] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mu + z);
        }
    }
    LabeledDataset::new(features, labels, d, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    #[default]
    DirichletLabelSkew,
    FeatureShiftGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidArgument("split fractions must each be > 0".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub strategy: PartitionStrategy,
    pub dirichlet_alpha: f64,
    pub group_rotation_deg: f64,
    pub group_shift: f64,
    pub samples_per_client: usize,
    pub split_fractions: SplitFractions,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            n_clients: 8,
            strategy: PartitionStrategy::DirichletLabelSkew,
            dirichlet_alpha: 0.5,
            group_rotation_deg: 90.0,
            group_shift: 1.0,
            samples_per_client: 200,
            split_fractions: SplitFractions::default(),
        }
    }
}

const MAX_DIRICHLET_ATTEMPTS: usize = 100;

/// Largest-remainder apportionment of `total` items by `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_draw<R: Rng>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(format!("dirichlet alpha: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        Ok(draws.iter().map(|g| g / sum).collect())
    } else {
        // every component underflowed; fall back to a one-hot on a random class
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        Ok(p)
    }
}

/// Label-skew partition: client `i` draws class proportions from
/// `Dirichlet(alpha * 1_K)` and each class's samples are apportioned across
/// clients in proportion to those draws.
pub fn partition_dirichlet(data: &LabeledDataset, cfg: &PartitionConfig, seed: u64) -> Result<Vec<LabeledDataset>> {
    if cfg.strategy != PartitionStrategy::DirichletLabelSkew {
        return Err(Error::InvalidArgument("partition_dirichlet needs dirichlet_label_skew".into()));
    }
    if cfg.n_clients < 2 {
        return Err(Error::InvalidArgument("need at least 2 clients".into()));
    }
    if !(cfg.dirichlet_alpha > 0.0) {
        return Err(Error::InvalidArgument("dirichlet_alpha must be > 0".into()));
    }
    let k = data.n_classes();
    let min_size = k.max(10);
    let mut rng = rng::seeded(seed);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    for _ in 0..MAX_DIRICHLET_ATTEMPTS {
        let proportions: Vec<Vec<f64>> = (0..cfg.n_clients)
            .map(|_| dirichlet_draw(cfg.dirichlet_alpha, k, &mut rng))
            .collect::<Result<_>>()?;
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_clients];
        for (c, members) in by_class.iter().enumerate() {
            let weights: Vec<f64> = proportions.iter().map(|p| p[c]).collect();
            if weights.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let counts = apportion(members.len(), &weights);
            let mut start = 0;
            for (shard, n) in shards.iter_mut().zip(counts) {
                shard.extend_from_slice(&members[start..start + n]);
                start += n;
            }
        }
        // a class nobody wants leaves samples unassigned; resample
        let assigned: usize = shards.iter().map(Vec::len).sum();
        if assigned == data.len() && shards.iter().all(|s| s.len() >= min_size) {
            return Ok(shards
                .into_iter()
                .map(|mut s| {
                    s.sort_unstable();
                    data.subset(&s)
                })
                .collect());
        }
    }
    Err(Error::InfeasiblePartition(format!(
        "no Dirichlet draw gave every client >= {min_size} samples after {MAX_DIRICHLET_ATTEMPTS} attempts"
    )))
}

/// Clients `n - n/2 .. n` form the shifted group.
pub fn in_shifted_group(n_clients: usize, client: usize) -> bool {
    client >= n_clients - n_clients / 2
}

/// Rotates the first two coordinates by `deg` degrees and adds `shift` to every coordinate.
pub fn shift_features(data: &LabeledDataset, deg: f64, shift: f64) -> LabeledDataset {
    let (sin, cos) = deg.to_radians().sin_cos();
    let mut out = data.clone();
    for row in out.features.chunks_mut(data.n_features) {
        let (x, y) = (row[0], row[1]);
        row[0] = cos * x - sin * y;
        row[1] = sin * x + cos * y;
        row.iter_mut().for_each(|v| *v += shift);
    }
    out
}

/// IID shards whose second group (see [`in_shifted_group`]) has rotated and
/// mean-shifted features.
pub fn partition_feature_shift(data: &LabeledDataset, cfg: &PartitionConfig, seed: u64) -> Result<Vec<LabeledDataset>> {
    if cfg.strategy != PartitionStrategy::FeatureShiftGroups {
        return Err(Error::InvalidArgument("partition_feature_shift needs feature_shift_groups".into()));
    }
    if cfg.n_clients < 2 {
        return Err(Error::InvalidArgument("feature shift needs at least 2 clients".into()));
    }
    if data.n_features() < 2 {
        return Err(Error::InvalidArgument("feature shift needs d >= 2".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let sizes = apportion(data.len(), &vec![1.0; cfg.n_clients]);
    let mut start = 0;
    let mut shards = Vec::with_capacity(cfg.n_clients);
    for (client, n) in sizes.into_iter().enumerate() {
        let mut idx = order[start..start + n].to_vec();
        idx.sort_unstable();
        start += n;
        let shard = data.subset(&idx);
        shards.push(if in_shifted_group(cfg.n_clients, client) {
            shift_features(&shard, cfg.group_rotation_deg, cfg.group_shift)
        } else {
            shard
        });
    }
    Ok(shards)
}

pub fn partition(data: &LabeledDataset, cfg: &PartitionConfig, seed: u64) -> Result<Vec<LabeledDataset>> {
    match cfg.strategy {
        PartitionStrategy::DirichletLabelSkew => partition_dirichlet(data, cfg, seed),
        PartitionStrategy::FeatureShiftGroups => partition_feature_shift(data, cfg, seed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shards {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Seeded shuffle split; validation and test sizes are floored, the remainder goes to train.
pub fn split_three_way(data: &LabeledDataset, fractions: SplitFractions, seed: u64) -> Result<Shards> {
    fractions.validate()?;
    let n = data.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("split needs n >= 10, got {n}")));
    }
    let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let n_val = floor(fractions.val);
    let n_test = floor(fractions.test);
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok(Shards {
        train: data.subset(train),
        val: data.subset(val),
        test: data.subset(test),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
}

/// Reads a headed, comma-separated file. `K` is inferred as the largest label plus one.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(CsvError::MissingFile(path.to_path_buf()).into());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CsvError::Read(e.to_string()))?;
    let header = reader.headers().map_err(|e| CsvError::Read(e.to_string()))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CsvError::MissingColumn(name.to_string()))
    };
    let feature_idx: Vec<usize> = schema.feature_columns.iter().map(|c| column(c)).collect::<Result<_, _>>()?;
    let label_idx = column(&schema.label_column)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CsvError::Read(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CsvError::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            }
            .into());
        }
        for (&i, name) in feature_idx.iter().zip(&schema.feature_columns) {
            let raw = record[i].trim();
            let v: f64 = raw.parse().map_err(|_| CsvError::NonNumeric {
                line,
                column: name.clone(),
                value: raw.to_string(),
            })?;
            features.push(v);
        }
        let raw = record[label_idx].trim();
        let y: i64 = raw.parse().map_err(|_| CsvError::InvalidLabel {
            line,
            value: raw.to_string(),
        })?;
        if y < 0 {
            return Err(CsvError::NegativeLabel { line, value: y }.into());
        }
        labels.push(y as usize);
    }
    if labels.is_empty() {
        return Err(CsvError::Empty.into());
    }
    let k = labels.iter().max().unwrap() + 1;
    LabeledDataset::new(features, labels, schema.feature_columns.len(), k)
}
