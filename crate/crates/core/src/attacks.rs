//! Data- and model-poisoning attacks.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::params::{ClientId, ClientUpdate, ModelParams};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LabelFlip,
    SignFlip,
    GaussianNoise,
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of local labels flipped (label_flip only).
    pub fraction: f64,
    /// Sign-flip factor, noise standard deviation, or scale factor.
    pub magnitude: f64,
    pub targets: Vec<ClientId>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::LabelFlip,
            fraction: 1.0,
            magnitude: 1.0,
            targets: Vec::new(),
        }
    }
}

impl AttackSpec {
    pub fn label_flip(fraction: f64, targets: Vec<ClientId>) -> Self {
        Self {
            kind: AttackKind::LabelFlip,
            fraction,
            targets,
            ..Self::default()
        }
    }

    pub fn is_target(&self, client: ClientId) -> bool {
        self.targets.contains(&client)
    }

    pub fn validate(&self, num_clients: usize, prefix: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config(
                format!("{prefix}.fraction"),
                "must be in [0, 1]",
            ));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::config(
                format!("{prefix}.magnitude"),
                "must be finite",
            ));
        }
        if self.kind == AttackKind::GaussianNoise && self.magnitude < 0.0 {
            return Err(Error::config(
                format!("{prefix}.magnitude"),
                "noise standard deviation must be >= 0",
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in self.targets.iter().enumerate() {
            if t.0 >= num_clients {
                return Err(Error::config(
                    format!("{prefix}.targets[{i}]"),
                    format!("client {t} is not in 0..{num_clients}"),
                ));
            }
            if !seen.insert(*t) {
                return Err(Error::config(
                    format!("{prefix}.targets[{i}]"),
                    format!("duplicate client {t}"),
                ));
            }
        }
        Ok(())
    }
}

/// Shifts `ceil(fraction * n)` uniformly chosen labels to `(y + 1) mod num_classes`.
pub fn flip_labels(
    data: &Dataset,
    fraction: f64,
    num_classes: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "label flipping needs >= 2 classes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(
            "flip fraction must be in [0, 1]".into(),
        ));
    }
    if num_classes != data.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, flip requested with {num_classes}",
            data.num_classes()
        )));
    }
    let n = data.len();
    let count = ((fraction * n as f64).ceil() as usize).min(n);
    let mut labels = data.labels().to_vec();
    for i in rand::seq::index::sample(rng, n, count) {
        labels[i] = (labels[i] + 1) % num_classes;
    }
    data.with_labels(labels)
}

/// Model poisoning applied to a trained update.
pub fn poison_update(
    update: &ClientUpdate,
    spec: &AttackSpec,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    let delta = update.delta.values();
    let poisoned: Vec<f64> = match spec.kind {
        AttackKind::LabelFlip => {
            return Err(Error::InvalidArgument(
                "label_flip poisons data, not updates".into(),
            ))
        }
        AttackKind::SignFlip => delta.iter().map(|v| -spec.magnitude * v).collect(),
        AttackKind::Scale => delta.iter().map(|v| spec.magnitude * v).collect(),
        AttackKind::GaussianNoise => {
            let noise = Normal::new(0.0, spec.magnitude)
                .map_err(|e| Error::InvalidArgument(format!("noise stddev: {e}")))?;
            delta.iter().map(|v| v + noise.sample(&mut *rng)).collect()
        }
    };
    Ok(ClientUpdate {
        delta: ModelParams::new(update.delta.shape(), poisoned)?,
        ..update.clone()
    })
}
