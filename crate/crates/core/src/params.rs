//! Flat model parameters and the per-client update that travels to the server.
//!
//! Parameters are a single `f64` vector laid out as `num_classes x num_features`
//! weights (row-major, one row per class) followed by `num_classes` biases.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub num_classes: usize,
    pub num_features: usize,
}

impl Shape {
    pub fn new(num_classes: usize, num_features: usize) -> Result<Self> {
        if num_classes == 0 || num_features == 0 {
            return Err(Error::InvalidArgument(format!(
                "shape dimensions must be positive, got ({num_classes}, {num_features})"
            )));
        }
        Ok(Self {
            num_classes,
            num_features,
        })
    }

    /// Total parameter count: weights plus biases.
    pub fn len(&self) -> usize {
        self.num_classes * self.num_features + self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_len(&self) -> usize {
        self.num_classes * self.num_features
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.num_classes, self.num_features)
    }
}

/// Index of weight `(class, feature)` in the flat layout.
pub fn flatten_index(class: usize, feature: usize, shape: Shape) -> Result<usize> {
    if class >= shape.num_classes || feature >= shape.num_features {
        return Err(Error::IndexOutOfRange(format!(
            "(class={class}, feature={feature}) for shape {shape}"
        )));
    }
    Ok(class * shape.num_features + feature)
}

/// Index of the bias of `class` in the flat layout.
pub fn bias_index(class: usize, shape: Shape) -> Result<usize> {
    if class >= shape.num_classes {
        return Err(Error::IndexOutOfRange(format!(
            "bias class={class} for shape {shape}"
        )));
    }
    Ok(shape.weight_len() + class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Model parameters (or a parameter delta). Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    shape: Shape,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    shape: Shape,
    values: Vec<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.shape, raw.values)
    }
}

impl ModelParams {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for shape {shape}", shape.len()),
                actual: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.values[class * self.shape.num_features + feature]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[self.shape.weight_len() + class]
    }

    /// Weight row of `class`.
    pub fn weight_row(&self, class: usize) -> &[f64] {
        let d = self.shape.num_features;
        &self.values[class * d..(class + 1) * d]
    }

    fn check_shape(&self, other: &ModelParams) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.to_string(),
                actual: other.shape.to_string(),
            });
        }
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ModelParams) -> Result<ModelParams> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        ModelParams::new(self.shape, values)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ModelParams) -> Result<ModelParams> {
        self.check_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        ModelParams::new(self.shape, values)
    }

    pub fn scale(&self, factor: f64) -> Result<ModelParams> {
        ModelParams::new(self.shape, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

/// Euclidean distance between two parameter vectors of the same shape.
pub fn l2_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    a.check_shape(b)?;
    Ok(dist(&a.values, &b.values))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// One client's contribution for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client: ClientId,
    /// Local parameters minus the broadcast parameters.
    pub delta: ModelParams,
    pub num_samples: usize,
    pub local_loss: f64,
}

impl ClientUpdate {
    pub fn new(
        client: ClientId,
        delta: ModelParams,
        num_samples: usize,
        local_loss: f64,
    ) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::InvalidArgument(format!(
                "client {client}: num_samples must be >= 1"
            )));
        }
        if !(local_loss.is_finite() && local_loss >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "client {client}: local_loss must be finite and non-negative"
            )));
        }
        Ok(Self {
            client,
            delta,
            num_samples,
            local_loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_params(values: Vec<f64>) -> ModelParams {
        // (1 class, n-1 features) has exactly n slots
        let shape = Shape::new(1, values.len() - 1).unwrap();
        ModelParams::new(shape, values).unwrap()
    }

    #[test]
    fn flatten_index_layout() {
        assert_eq!(flatten_index(0, 0, Shape::new(3, 4).unwrap()).unwrap(), 0);
        assert_eq!(flatten_index(2, 3, Shape::new(3, 4).unwrap()).unwrap(), 11);
        assert_eq!(flatten_index(1, 0, Shape::new(2, 5).unwrap()).unwrap(), 5);
        assert_eq!(bias_index(1, Shape::new(3, 4).unwrap()).unwrap(), 13);
    }

    #[test]
    fn flatten_index_rejects_out_of_range() {
        let shape = Shape::new(3, 4).unwrap();
        assert!(flatten_index(3, 0, shape).is_err());
        assert!(flatten_index(0, 4, shape).is_err());
        assert!(bias_index(3, shape).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(
            l2_distance(&vec_params(vec![0.0, 0.0]), &vec_params(vec![3.0, 4.0])).unwrap(),
            5.0
        );
        let a = vec_params(vec![1.0, -2.0, 0.5]);
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        let d = l2_distance(
            &vec_params(vec![1.0, 1.0, 1.0]),
            &vec_params(vec![2.0, 2.0, 2.0]),
        )
        .unwrap();
        assert!((d - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_shape_mismatch() {
        let a = vec_params(vec![0.0, 0.0]);
        let b = vec_params(vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            l2_distance(&a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_params() {
        let shape = Shape::new(2, 2).unwrap();
        assert!(ModelParams::new(shape, vec![0.0; 5]).is_err());
        let mut v = vec![0.0; 6];
        v[3] = f64::NAN;
        assert!(ModelParams::new(shape, v).is_err());
        assert!(Shape::new(0, 3).is_err());
    }

    #[test]
    fn snapshot_json_validates() {
        let p = ModelParams::new(Shape::new(1, 1).unwrap(), vec![1.5, -2.0]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"shape":{"num_classes":1,"num_features":1},"values":[1.5,-2.0]}"#
        );
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"shape":{"num_classes":1,"num_features":1},"values":[1.5]}"#;
        assert!(serde_json::from_str::<ModelParams>(bad).is_err());
    }

    fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            let v = || prop::collection::vec(-100.0f64..100.0, n + 1);
            (v(), v(), v())
        })
    }

    proptest! {
        #[test]
        fn l2_is_a_metric((a, b, c) in triple()) {
            let (a, b, c) = (vec_params(a), vec_params(b), vec_params(c));
            let ab = l2_distance(&a, &b).unwrap();
            let ba = l2_distance(&b, &a).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-9);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }
    }
}
