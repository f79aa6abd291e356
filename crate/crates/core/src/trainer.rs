//! Multinomial logistic regression trained with mini-batch SGD.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::params::{ClientUpdate, ModelParams, Shape};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub l2_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            local_epochs: 2,
            batch_size: 16,
            l2_reg: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Checks bounds; `prefix` is the dotted path of this block in the config.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                format!("{prefix}.learning_rate"),
                "must be > 0",
            ));
        }
        if self.local_epochs == 0 {
            return Err(Error::config(
                format!("{prefix}.local_epochs"),
                "must be >= 1",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config(
                format!("{prefix}.batch_size"),
                "must be >= 1",
            ));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::config(format!("{prefix}.l2_reg"), "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

fn check_dims(params: &ModelParams, data: &Dataset) -> Result<()> {
    let shape = params.shape();
    if shape.num_features != data.num_features() || shape.num_classes != data.num_classes() {
        return Err(Error::ShapeMismatch {
            expected: shape.to_string(),
            actual: format!(
                "data with ({}, {})",
                data.num_classes(),
                data.num_features()
            ),
        });
    }
    Ok(())
}

/// Writes `W x + b` into `out`.
fn logits_into(params: &ModelParams, x: &[f64], out: &mut [f64]) {
    for (k, z) in out.iter_mut().enumerate() {
        let row = params.weight_row(k);
        *z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.bias(k);
    }
}

/// In-place softmax with max subtraction. Returns `log(sum exp(z - max))`
/// so callers can form log-probabilities as `z_k - max - lse`.
fn softmax_in_place(z: &mut [f64]) -> (f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    (max, sum.ln())
}

pub fn predict_proba(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.shape().num_features {
        return Err(Error::ShapeMismatch {
            expected: format!("{} features", params.shape().num_features),
            actual: format!("{}", x.len()),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector"));
    }
    let mut p = vec![0.0; params.shape().num_classes];
    logits_into(params, x, &mut p);
    softmax_in_place(&mut p);
    Ok(p)
}

/// Adds the mean cross-entropy gradient over `rows` into `grad` and returns the
/// mean data loss. No regularization.
fn accumulate_batch(
    params: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    grad: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    let shape = params.shape();
    let d = shape.num_features;
    let wl = shape.weight_len();
    let inv_n = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &i in rows {
        let x = data.row(i);
        let y = data.label(i);
        logits_into(params, x, scratch);
        let zy = scratch[y];
        let (max, lse) = softmax_in_place(scratch);
        loss -= zy - max - lse;
        scratch[y] -= 1.0;
        for (k, &err) in scratch.iter().enumerate() {
            let e = err * inv_n;
            for (g, &v) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g += e * v;
            }
            grad[wl + k] += e;
        }
    }
    loss * inv_n
}

fn add_weight_decay(params: &ModelParams, l2_reg: f64, grad: &mut [f64]) -> f64 {
    if l2_reg == 0.0 {
        return 0.0;
    }
    let wl = params.shape().weight_len();
    let w = &params.values()[..wl];
    for (g, &v) in grad[..wl].iter_mut().zip(w) {
        *g += l2_reg * v;
    }
    0.5 * l2_reg * w.iter().map(|v| v * v).sum::<f64>()
}

/// Mean cross-entropy plus `(l2_reg / 2) * ||W||^2`, and its exact gradient.
/// Biases are not regularized.
pub fn loss_and_gradient(
    params: &ModelParams,
    data: &Dataset,
    l2_reg: f64,
) -> Result<(f64, ModelParams)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(params, data)?;
    let shape = params.shape();
    let mut grad = vec![0.0; shape.len()];
    let mut scratch = vec![0.0; shape.num_classes];
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut loss = accumulate_batch(params, data, &rows, &mut grad, &mut scratch);
    loss += add_weight_decay(params, l2_reg, &mut grad);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, ModelParams::new(shape, grad)?))
}

/// Runs `cfg.local_epochs` shuffled mini-batch passes from `start` and returns
/// the resulting delta. The last partial batch of each epoch is kept.
pub fn local_train(
    start: &ModelParams,
    shard: &ClientShard,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    let data = &shard.train;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(start, data)?;
    let shape: Shape = start.shape();
    let diverged = || Error::TrainingDiverged {
        client: shard.client,
    };

    let mut params = start.clone();
    let mut values = start.values().to_vec();
    let mut grad = vec![0.0; shape.len()];
    let mut scratch = vec![0.0; shape.num_classes];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);

    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for rows in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_batch(&params, data, rows, &mut grad, &mut scratch);
            add_weight_decay(&params, cfg.l2_reg, &mut grad);
            for (v, g) in values.iter_mut().zip(&grad) {
                *v -= cfg.learning_rate * g;
            }
            params = ModelParams::new(shape, values.clone()).map_err(|_| diverged())?;
        }
    }

    let (local_loss, _) = loss_and_gradient(&params, data, cfg.l2_reg).map_err(|_| diverged())?;
    let delta = params.sub(start).map_err(|_| diverged())?;
    ClientUpdate::new(shard.client, delta, data.len(), local_loss)
}

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(params, data)?;
    let mut scratch = vec![0.0; params.shape().num_classes];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        logits_into(params, data.row(i), &mut scratch);
        let y = data.label(i);
        let mut best = 0;
        for k in 1..scratch.len() {
            if scratch[k] > scratch[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
        let zy = scratch[y];
        let (max, lse) = softmax_in_place(&mut scratch);
        loss -= zy - max - lse;
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_synthetic;
    use crate::params::ClientId;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn params(c: usize, d: usize, values: Vec<f64>) -> ModelParams {
        ModelParams::new(Shape::new(c, d).unwrap(), values).unwrap()
    }

    fn shard(data: Dataset) -> ClientShard {
        ClientShard {
            client: ClientId(0),
            indices: (0..data.len()).collect(),
            train: data,
        }
    }

    #[test]
    fn uniform_at_zero() {
        let p = predict_proba(
            &ModelParams::zeros(Shape::new(2, 3).unwrap()),
            &[1.0, -4.0, 2.0],
        )
        .unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = predict_proba(&ModelParams::zeros(Shape::new(4, 1).unwrap()), &[7.0]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn softmax_of_ln3() {
        let m = params(2, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = predict_proba(&m, &[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_bad_input() {
        let m = ModelParams::zeros(Shape::new(2, 2).unwrap());
        assert!(predict_proba(&m, &[f64::NAN, 0.0]).is_err());
        assert!(predict_proba(&m, &[0.0]).is_err());
    }

    #[test]
    fn predict_is_overflow_safe() {
        let m = params(2, 1, vec![1000.0, -1000.0, 0.0, 0.0]);
        let p = predict_proba(&m, &[5.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_params_loss_is_ln2() {
        let data = Dataset::new(vec![1.0, 2.0, -1.0, 0.5], vec![0, 1], 2, 2).unwrap();
        let (loss, _) =
            loss_and_gradient(&ModelParams::zeros(Shape::new(2, 2).unwrap()), &data, 0.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_sample_gradient_row() {
        let data = Dataset::new(vec![1.0, 0.0], vec![0], 2, 2).unwrap();
        let (_, g) =
            loss_and_gradient(&ModelParams::zeros(Shape::new(2, 2).unwrap()), &data, 0.0).unwrap();
        assert_eq!(g.weight_row(0), &[-0.5, 0.0]);
        assert_eq!(g.weight_row(1), &[0.5, 0.0]);
        assert_eq!(g.bias(0), -0.5);
    }

    #[test]
    fn empty_data_errors() {
        let empty = Dataset::new(vec![], vec![], 2, 2).unwrap();
        let m = ModelParams::zeros(Shape::new(2, 2).unwrap());
        assert!(matches!(
            loss_and_gradient(&m, &empty, 0.0),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(evaluate(&m, &empty), Err(Error::EmptyDataset)));
        assert!(local_train(
            &m,
            &shard(empty),
            &TrainConfig::default(),
            &mut Rng::new(0, 0)
        )
        .is_err());
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let data = generate_synthetic(3, 4, 10, 0.5, &mut Rng::new(1, 0)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let start = ModelParams::zeros(Shape::new(3, 4).unwrap());
        let u = local_train(&start, &shard(data), &cfg, &mut Rng::new(1, 1)).unwrap();
        assert!(u.delta.values().iter().all(|&v| v == 0.0));
        assert_eq!(u.num_samples, 30);
    }

    #[test]
    fn local_train_is_deterministic_and_reduces_loss() {
        let data = generate_synthetic(2, 3, 40, 0.5, &mut Rng::new(2, 0)).unwrap();
        let s = shard(data);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            local_epochs: 5,
            ..TrainConfig::default()
        };
        let start = ModelParams::zeros(Shape::new(2, 3).unwrap());
        let a = local_train(&start, &s, &cfg, &mut Rng::new(5, 5)).unwrap();
        let b = local_train(&start, &s, &cfg, &mut Rng::new(5, 5)).unwrap();
        assert_eq!(a, b);
        assert!(a.local_loss < 2f64.ln());
    }

    #[test]
    fn diverging_training_is_reported() {
        let data = Dataset::new(vec![1e200, -1e200], vec![0, 1], 1, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            local_epochs: 3,
            batch_size: 1,
            l2_reg: 0.0,
        };
        let start = ModelParams::zeros(Shape::new(2, 1).unwrap());
        let err = local_train(&start, &shard(data), &cfg, &mut Rng::new(0, 0)).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }

    #[test]
    fn zero_params_eval_on_balanced_data() {
        let data = generate_synthetic(4, 3, 10, 0.5, &mut Rng::new(3, 0)).unwrap();
        let e = evaluate(&ModelParams::zeros(Shape::new(4, 3).unwrap()), &data).unwrap();
        assert_eq!(e.accuracy, 0.25);
        assert!((e.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        // one-hot features, identity weights scaled up
        let features = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let data = Dataset::new(features, vec![0, 1, 2], 3, 3).unwrap();
        let mut v = vec![0.0; 12];
        for k in 0..3 {
            v[k * 3 + k] = 10.0;
        }
        let e = evaluate(&params(3, 3, v), &data).unwrap();
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let data = Dataset::new(vec![0.0; 4], vec![0, 1], 2, 2).unwrap();
        assert!(evaluate(&ModelParams::zeros(Shape::new(2, 3).unwrap()), &data).is_err());
    }

    fn random_case(seed: u64) -> (ModelParams, Dataset) {
        let mut rng = Rng::new(seed, 77);
        let c = rng.random_range(2..5);
        let d = rng.random_range(1..5);
        let shape = Shape::new(c, d).unwrap();
        let values = (0..shape.len())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let n = rng.random_range(1..6);
        let x = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = (0..n).map(|_| rng.random_range(0..c)).collect();
        (
            ModelParams::new(shape, values).unwrap(),
            Dataset::new(x, y, d, c).unwrap(),
        )
    }

    // independent per-sample summation of -log p_y using predict_proba
    fn naive_loss(params: &ModelParams, data: &Dataset) -> f64 {
        let mut total = 0.0;
        for i in 0..data.len() {
            let p = predict_proba(params, data.row(i)).unwrap();
            total += -p[data.label(i)].ln();
        }
        total / data.len() as f64
    }

    #[test]
    fn evaluate_matches_naive_summation() {
        for seed in 0..50 {
            let (m, data) = random_case(seed);
            let e = evaluate(&m, &data).unwrap();
            assert!(
                (e.loss - naive_loss(&m, &data)).abs() <= 1e-9,
                "seed {seed}"
            );
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_shift_invariant(seed in 0u64..10_000, shift in -50.0f64..50.0) {
            let (m, data) = random_case(seed);
            let x = data.row(0);
            let p = predict_proba(&m, x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shape = m.shape();
            let mut v = m.values().to_vec();
            for k in 0..shape.num_classes {
                v[shape.weight_len() + k] += shift;
            }
            let q = predict_proba(&ModelParams::new(shape, v).unwrap(), x).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
