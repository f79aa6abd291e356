//! Synthetic datasets, a CSV loader, and client partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{dist, ClientId};
use crate::rng::Rng;

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::InvalidArgument("num_features must be >= 1".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature values", labels.len() * num_features),
                actual: format!("{}", features.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Same features, replaced labels. Labels must stay in range.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Dataset::new(
            self.features.clone(),
            labels,
            self.num_features,
            self.num_classes,
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian-mixture classification data.
///
/// Class means start as standard-normal draws and are then rescaled together
/// so the closest pair sits exactly `4 * cluster_spread` apart. Rows are
/// grouped by class: `samples_per_class` rows of class 0, then class 1, ...
pub fn generate_synthetic(
    num_classes: usize,
    num_features: usize,
    samples_per_class: usize,
    cluster_spread: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
    }
    if num_features == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument(
            "num_features and samples_per_class must be >= 1".into(),
        ));
    }
    if !(cluster_spread.is_finite() && cluster_spread > 0.0) {
        return Err(Error::InvalidArgument(
            "cluster_spread must be a positive real".into(),
        ));
    }

    let means = class_means(num_classes, num_features, cluster_spread, rng);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * num_features);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(rng);
                features.push(m + cluster_spread * z);
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, num_features, num_classes)
}

fn class_means(
    num_classes: usize,
    num_features: usize,
    spread: f64,
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    loop {
        let mut means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                (0..num_features)
                    .map(|_| StandardNormal.sample(&mut *rng))
                    .collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..num_classes {
            for j in i + 1..num_classes {
                min_dist = min_dist.min(dist(&means[i], &means[j]));
            }
        }
        // coincident draws have probability zero but would make scaling undefined
        if min_dist.is_nan() || min_dist <= 1e-12 {
            continue;
        }
        let factor = 4.0 * spread / min_dist;
        for mean in &mut means {
            for v in mean.iter_mut() {
                *v *= factor;
            }
        }
        return means;
    }
}

/// Loads `f0,...,f{d-1},label` CSV data. The class count is `max(label) + 1`
/// unless `num_classes` is given.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => csv_err(format!("{other:?}")),
        })?;

    let header = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .clone();
    let arity = header.len();
    if arity < 2 {
        return Err(csv_err(
            "header needs at least one feature and a label".into(),
        ));
    }
    for (i, name) in header.iter().take(arity - 1).enumerate() {
        if name != format!("f{i}") {
            return Err(csv_err(format!(
                "header column {i} must be `f{i}`, got `{name}`"
            )));
        }
    }
    if &header[arity - 1] != "label" {
        return Err(csv_err("last header column must be `label`".into()));
    }

    let num_features = arity - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| csv_err(format!("line {line}: {e}")))?;
        if record.len() != arity {
            return Err(csv_err(format!(
                "line {line}: expected {arity} fields, got {}",
                record.len()
            )));
        }
        for field in record.iter().take(num_features) {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(format!("line {line}: `{field}` is not a real number")))?;
            if !v.is_finite() {
                return Err(csv_err(format!("line {line}: non-finite feature")));
            }
            features.push(v);
        }
        let label: usize = record[num_features]
            .parse()
            .map_err(|_| csv_err(format!("line {line}: label must be a non-negative integer")))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(csv_err("no data rows".into()));
    }
    let observed = labels.iter().max().map_or(0, |m| m + 1);
    let classes = num_classes.unwrap_or(observed.max(2));
    if observed > classes {
        return Err(csv_err(format!(
            "label {} out of range for {classes} classes",
            observed - 1
        )));
    }
    Dataset::new(features, labels, num_features, classes).map_err(|e| csv_err(e.to_string()))
}

/// Per-class hold-out split. Returns `(train, eval)`; each class contributes
/// `round(eval_fraction * count)` rows to the eval side.
pub fn stratified_split(
    data: &Dataset,
    eval_fraction: f64,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "eval_fraction must be in (0, 1)".into(),
        ));
    }
    let mut train_idx = Vec::new();
    let mut eval_idx = Vec::new();
    for k in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == k).collect();
        idx.shuffle(rng);
        let n_eval = ((eval_fraction * idx.len() as f64).round() as usize).min(idx.len());
        eval_idx.extend_from_slice(&idx[..n_eval]);
        train_idx.extend_from_slice(&idx[n_eval..]);
    }
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "eval split left the train or eval side empty".into(),
        ));
    }
    train_idx.sort_unstable();
    eval_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&eval_idx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterogeneitySpec {
    pub mode: HeterogeneityMode,
    pub dirichlet_alpha: f64,
}

impl Default for HeterogeneitySpec {
    fn default() -> Self {
        Self {
            mode: HeterogeneityMode::Iid,
            dirichlet_alpha: 1.0,
        }
    }
}

impl HeterogeneitySpec {
    pub fn iid() -> Self {
        Self::default()
    }

    pub fn dirichlet(alpha: f64) -> Self {
        Self {
            mode: HeterogeneityMode::Dirichlet,
            dirichlet_alpha: alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client: ClientId,
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
    pub train: Dataset,
}

const DIRICHLET_RETRIES: usize = 100;

/// Splits `data` across `num_clients` clients; every client gets at least one row.
pub fn partition(
    data: &Dataset,
    num_clients: usize,
    spec: &HeterogeneitySpec,
    rng: &mut Rng,
) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("num_clients must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if num_clients > data.len() {
        return Err(Error::InvalidArgument(format!(
            "{num_clients} clients but only {} samples",
            data.len()
        )));
    }

    let assignment = match spec.mode {
        HeterogeneityMode::Iid => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(rng);
            let mut shards = vec![Vec::new(); num_clients];
            for (pos, i) in idx.into_iter().enumerate() {
                shards[pos % num_clients].push(i);
            }
            shards
        }
        HeterogeneityMode::Dirichlet => {
            if !(spec.dirichlet_alpha.is_finite() && spec.dirichlet_alpha > 0.0) {
                return Err(Error::InvalidArgument("dirichlet_alpha must be > 0".into()));
            }
            dirichlet_assignment(data, num_clients, spec.dirichlet_alpha, rng)?
        }
    };

    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(c, indices)| ClientShard {
            client: ClientId(c),
            train: data.subset(&indices),
            indices,
        })
        .collect())
}

fn dirichlet_assignment(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let by_class: Vec<Vec<usize>> = (0..data.num_classes())
        .map(|k| (0..data.len()).filter(|&i| data.label(i) == k).collect())
        .collect();

    let mut shards = Vec::new();
    for _ in 0..DIRICHLET_RETRIES {
        shards = vec![Vec::new(); num_clients];
        for class_idx in &by_class {
            let mut idx = class_idx.clone();
            idx.shuffle(rng);
            let props = sample_dirichlet(alpha, num_clients, rng)?;
            let counts = largest_remainder(&props, idx.len());
            let mut start = 0;
            for (c, &count) in counts.iter().enumerate() {
                shards[c].extend_from_slice(&idx[start..start + count]);
                start += count;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards);
        }
    }

    // fall back to topping up empty shards from the largest one
    while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
        let largest = (0..num_clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("num_clients >= 1");
        let moved = shards[largest].pop().expect("largest shard is nonempty");
        shards[empty].push(moved);
    }
    Ok(shards)
}

/// One draw from a symmetric Dirichlet via normalized Gamma variates.
pub fn sample_dirichlet(alpha: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet alpha {alpha}: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut *rng)).collect();
        let total: f64 = draws.iter().sum();
        // tiny alpha can underflow every variate to zero; redraw
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
        if n == 1 {
            return Ok(vec![1.0]);
        }
    }
}

/// Apportions `total` items by proportions using the largest-remainder
/// method; remainder ties go to the lower index.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use std::io::Write;

    fn blobs(seed: u64) -> Dataset {
        generate_synthetic(4, 3, 25, 0.5, &mut Rng::new(seed, 0)).unwrap()
    }

    fn assert_set_partition(shards: &[ClientShard], n: usize) {
        let mut seen = vec![false; n];
        for shard in shards {
            for &i in &shard.indices {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "coverage");
    }

    #[test]
    fn balanced_labels() {
        let data = generate_synthetic(2, 5, 50, 1.0, &mut Rng::new(3, 0)).unwrap();
        assert_eq!(data.len(), 100);
        assert_eq!(data.class_counts(), vec![50, 50]);
    }

    #[test]
    fn deterministic_generation() {
        assert_eq!(blobs(9), blobs(9));
        assert_ne!(blobs(9), blobs(10));
    }

    #[test]
    fn means_are_separated() {
        let mut rng = Rng::new(11, 0);
        let means = class_means(5, 6, 0.3, &mut rng);
        let mut min = f64::INFINITY;
        for i in 0..5 {
            for j in i + 1..5 {
                min = min.min(dist(&means[i], &means[j]));
            }
        }
        assert!((min - 1.2).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_sizes() {
        let mut rng = Rng::new(0, 0);
        assert!(generate_synthetic(1, 3, 10, 1.0, &mut rng).is_err());
        assert!(generate_synthetic(2, 0, 10, 1.0, &mut rng).is_err());
        assert!(generate_synthetic(2, 3, 0, 1.0, &mut rng).is_err());
        assert!(generate_synthetic(2, 3, 10, 0.0, &mut rng).is_err());
    }

    #[test]
    fn iid_even_split() {
        let data = blobs(1);
        let shards = partition(&data, 20, &HeterogeneitySpec::iid(), &mut Rng::new(1, 1)).unwrap();
        assert_eq!(shards.len(), 20);
        assert!(shards.iter().all(|s| s.indices.len() == 5));
        assert_set_partition(&shards, 100);
    }

    #[test]
    fn too_many_clients() {
        let data = blobs(1);
        assert!(partition(&data, 101, &HeterogeneitySpec::iid(), &mut Rng::new(1, 1)).is_err());
    }

    #[test]
    fn dirichlet_every_client_nonempty() {
        let data = blobs(2);
        for seed in 0..10 {
            let shards = partition(
                &data,
                30,
                &HeterogeneitySpec::dirichlet(0.05),
                &mut Rng::new(seed, 3),
            )
            .unwrap();
            assert!(shards.iter().all(|s| !s.indices.is_empty()));
            assert_set_partition(&shards, data.len());
        }
    }

    fn mean_label_entropy(shards: &[ClientShard]) -> f64 {
        let total: f64 = shards
            .iter()
            .map(|s| {
                let n = s.train.len() as f64;
                s.train
                    .class_counts()
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / n;
                        -p * p.ln()
                    })
                    .sum::<f64>()
            })
            .sum();
        total / shards.len() as f64
    }

    #[test]
    fn dirichlet_alpha_controls_skew() {
        let data = generate_synthetic(4, 2, 100, 0.5, &mut Rng::new(5, 0)).unwrap();
        let mut low = 0.0;
        let mut high = 0.0;
        for seed in 0..10 {
            let a = partition(
                &data,
                10,
                &HeterogeneitySpec::dirichlet(0.1),
                &mut Rng::new(seed, 1),
            )
            .unwrap();
            let b = partition(
                &data,
                10,
                &HeterogeneitySpec::dirichlet(100.0),
                &mut Rng::new(seed, 1),
            )
            .unwrap();
            low += mean_label_entropy(&a);
            high += mean_label_entropy(&b);
        }
        assert!(
            low < high,
            "alpha=0.1 entropy {low} vs alpha=100 entropy {high}"
        );
    }

    #[test]
    fn largest_remainder_breaks_ties_by_index() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.25; 4], 6), vec![2, 2, 1, 1]);
        assert_eq!(largest_remainder(&[0.1, 0.6, 0.3], 10), vec![1, 6, 3]);
    }

    #[test]
    fn stratified_split_keeps_balance() {
        let data = blobs(4);
        let (train, eval) = stratified_split(&data, 0.2, &mut Rng::new(4, 2)).unwrap();
        assert_eq!(train.len() + eval.len(), 100);
        assert_eq!(eval.class_counts(), vec![5, 5, 5, 5]);
    }

    #[test]
    fn csv_roundtrip_and_arity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f0,f1,label\n0.5,1.0,0\n-2.25,3,1\n1e-3,0,2").unwrap();
        let data = load_csv(&path, None).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.num_classes(), 3);
        assert_eq!(data.row(1), &[-2.25, 3.0]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "f0,f1,label\n0.5,1.0,0\n1.0,1\n").unwrap();
        let err = load_csv(&bad, None).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let bad_header = dir.path().join("h.csv");
        std::fs::write(&bad_header, "x,y,label\n0,0,0\n").unwrap();
        assert!(load_csv(&bad_header, None).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_set_partition(seed in 0u64..500, clients in 1usize..40, iid in any::<bool>(), alpha in 0.05f64..10.0) {
            let data = blobs(seed % 7);
            let spec = if iid { HeterogeneitySpec::iid() } else { HeterogeneitySpec::dirichlet(alpha) };
            let a = partition(&data, clients, &spec, &mut Rng::new(seed, 9)).unwrap();
            let b = partition(&data, clients, &spec, &mut Rng::new(seed, 9)).unwrap();
            prop_assert_eq!(&a, &b);
            assert_set_partition(&a, data.len());
            prop_assert!(a.iter().all(|s| !s.indices.is_empty()));
        }

        #[test]
        fn dirichlet_proportions_sum_to_one(seed in 0u64..1000, n in 1usize..50, alpha in 0.01f64..50.0) {
            let p = sample_dirichlet(alpha, n, &mut Rng::new(seed, 0)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn largest_remainder_sums_exactly(props in prop::collection::vec(0.0f64..1.0, 1..20), total in 0usize..500) {
            let s: f64 = props.iter().sum();
            prop_assume!(s > 0.0);
            let norm: Vec<f64> = props.iter().map(|p| p / s).collect();
            prop_assert_eq!(largest_remainder(&norm, total).iter().sum::<usize>(), total);
        }
    }
}
