use crate::error::Result;
use crate::params::{ClientUpdate, ModelParams};

use super::{prepare, weighted_mean, AggregationDecision};

/// Sample-weighted mean of all deltas.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<AggregationDecision> {
    let prep = prepare(updates, 1, "fedavg")?;
    let delta = weighted_mean(&prep.updates, prep.dim());
    let ops = prep.len() as u64 + 1;
    Ok(AggregationDecision::new(
        prep.ids(),
        Vec::new(),
        ModelParams::new(prep.shape, delta)?,
        ops,
    ))
}
