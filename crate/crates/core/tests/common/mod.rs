//! Independent reference implementations and fixtures shared by the
//! integration tests. Everything here is written for clarity, not speed.

#![allow(dead_code)]

use std::path::PathBuf;

use metafl_core::datagen::Dataset;
use metafl_core::engine::SimConfig;
use metafl_core::{ClientId, ClientUpdate, ModelParams, Shape};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const SCENARIO_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn default_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

pub fn default_config() -> SimConfig {
    let text =
        std::fs::read_to_string(default_config_path()).expect("configs/default.json is readable");
    SimConfig::from_json_str(&text).expect("default config is valid")
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Updates with coordinates uniform in `[-1, 1]` and sample counts in `1..=100`.
pub fn random_updates(rng: &mut StdRng, n: usize, shape: Shape) -> Vec<ClientUpdate> {
    (0..n)
        .map(|i| {
            let values = (0..shape.len())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let delta = ModelParams::new(shape, values).unwrap();
            ClientUpdate::new(ClientId(i), delta, rng.random_range(1..=100), 0.5).unwrap()
        })
        .collect()
}

pub fn random_dataset(rng: &mut StdRng, n: usize, classes: usize, features: usize) -> Dataset {
    let x = (0..n * features)
        .map(|_| rng.random_range(-2.0..=2.0))
        .collect();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(x, y, features, classes).unwrap()
}

pub fn rows(updates: &[ClientUpdate]) -> Vec<Vec<f64>> {
    updates.iter().map(|u| u.delta.values().to_vec()).collect()
}

// ----- softmax regression -----

/// Mean cross-entropy plus `(l2 / 2) * sum of squared weights`, computed from
/// the definition with explicit loops.
pub fn naive_loss(values: &[f64], classes: usize, features: usize, data: &Dataset, l2: f64) -> f64 {
    let w = |k: usize, j: usize| values[k * features + j];
    let b = |k: usize| values[classes * features + k];
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        let logits: Vec<f64> = (0..classes)
            .map(|k| b(k) + (0..features).map(|j| w(k, j) * x[j]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += log_z - logits[data.label(i)];
    }
    let reg: f64 = values[..classes * features].iter().map(|v| v * v).sum();
    total / data.len() as f64 + 0.5 * l2 * reg
}

/// Central differences of [`naive_loss`] with step `h`.
pub fn fd_gradient(
    values: &[f64],
    classes: usize,
    features: usize,
    data: &Dataset,
    l2: f64,
    h: f64,
) -> Vec<f64> {
    let mut v = values.to_vec();
    (0..values.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = naive_loss(&v, classes, features, data, l2);
            v[i] = orig - h;
            let down = naive_loss(&v, classes, features, data, l2);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

// ----- aggregators -----

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn median_of(v: &[f64]) -> f64 {
    let s = sorted(v.to_vec());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Sort each coordinate, drop `beta` from both ends, average what is left.
pub fn oracle_trimmed_mean(rows: &[Vec<f64>], beta: usize) -> Vec<f64> {
    let n = rows.len();
    (0..rows[0].len())
        .map(|j| {
            let col = sorted(rows.iter().map(|r| r[j]).collect());
            let kept = &col[beta..n - beta];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s
}

/// For every row, the sum of the `n - f - 2` smallest squared distances to the other rows.
pub fn oracle_krum_scores(rows: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut d = Vec::new();
            for j in 0..n {
                if j != i {
                    d.push(squared_distance(&rows[i], &rows[j]));
                }
            }
            let d = sorted(d);
            d[..n - f - 2].iter().sum()
        })
        .collect()
}

/// Bulyan written out step by step: Krum-select `n - 2f` rows one at a time,
/// then per coordinate average the `n - 4f` selected values nearest the median.
pub fn oracle_bulyan(rows: &[Vec<f64>], f: usize) -> (Vec<usize>, Vec<f64>) {
    let n = rows.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::new();
    while selected.len() < n - 2 * f {
        let sub: Vec<Vec<f64>> = remaining.iter().map(|&i| rows[i].clone()).collect();
        let scores = if sub.len() > f + 2 {
            oracle_krum_scores(&sub, f)
        } else {
            vec![0.0; sub.len()]
        };
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] < scores[best] {
                best = k;
            }
        }
        selected.push(remaining.remove(best));
    }
    selected.sort();
    let beta = n - 4 * f;
    let delta = (0..rows[0].len())
        .map(|j| {
            let col: Vec<f64> = selected.iter().map(|&i| rows[i][j]).collect();
            let med = median_of(&col);
            let mut by_distance = col.clone();
            by_distance.sort_by(|a, b| (a - med).abs().partial_cmp(&(b - med).abs()).unwrap());
            by_distance[..beta].iter().sum::<f64>() / beta as f64
        })
        .collect();
    (selected, delta)
}

fn weighted_distance_sum(points: &[[f64; 2]], weights: &[f64], y: [f64; 2]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * ((p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2)).sqrt())
        .sum()
}

/// Weighted geometric median in 2-D by exhaustive grid search over the
/// bounding box, refined by repeatedly zooming in around the best cell.
pub fn oracle_geomedian_2d(points: &[[f64; 2]], weights: &[f64]) -> [f64; 2] {
    let lo = [0, 1].map(|k| points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1].map(|k| {
        points
            .iter()
            .map(|p| p[k])
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let mut center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut half = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / 2.0).max(1e-3);
    let steps = 40i32;
    for _ in 0..12 {
        let mut best = (f64::INFINITY, center);
        for a in -steps..=steps {
            for b in -steps..=steps {
                let y = [
                    center[0] + half * a as f64 / steps as f64,
                    center[1] + half * b as f64 / steps as f64,
                ];
                let obj = weighted_distance_sum(points, weights, y);
                if obj < best.0 {
                    best = (obj, y);
                }
            }
        }
        center = best.1;
        half *= 4.0 / steps as f64;
    }
    center
}
