use crate::error::{Error, Result};
use crate::params::{ClientUpdate, ModelParams};
use crate::stats::median;

use super::krum::{scores_of, scoring_ops};
use super::{argmin_with_ties, ceil_log2, prepare, AggregationDecision};

/// Bulyan: repeated Krum selection of `n - 2f` updates, then a per-coordinate
/// average of the `n - 4f` selected values closest to the coordinate median.
pub fn bulyan(updates: &[ClientUpdate], byzantine_f: usize) -> Result<AggregationDecision> {
    let prep = prepare(updates, 1, "bulyan")?;
    let n = prep.len();
    let f = byzantine_f;
    if n < 4 * f + 3 {
        return Err(Error::Aggregation(format!(
            "bulyan needs n >= 4f+3 (n={n}, f={f})"
        )));
    }
    let rows = prep.rows();
    let target = n - 2 * f;
    let beta = n - 4 * f;

    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(target);
    let mut ops = 0u64;
    while selected.len() < target {
        let sub: Vec<&[f64]> = remaining.iter().map(|&i| rows[i]).collect();
        let scores = scores_of(&sub, f);
        ops += scoring_ops(sub.len());
        let local: Vec<usize> = (0..sub.len()).collect();
        let pos = argmin_with_ties(&scores, &local);
        selected.push(remaining.remove(pos));
    }
    selected.sort_unstable();

    let dim = prep.dim();
    let mut delta = Vec::with_capacity(dim);
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(target);
    for j in 0..dim {
        column.clear();
        column.extend(selected.iter().map(|&i| (rows[i][j], i)));
        let values: Vec<f64> = column.iter().map(|c| c.0).collect();
        let med = median(&values).expect("selection is nonempty");
        column.sort_by(|a, b| {
            (a.0 - med)
                .abs()
                .total_cmp(&(b.0 - med).abs())
                .then(a.0.total_cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let sum: f64 = column[..beta].iter().map(|c| c.0).sum();
        delta.push(sum / beta as f64);
    }
    ops += target as u64 * ceil_log2(target) + beta as u64 + 1;

    let ids = prep.ids();
    let included = selected.iter().map(|&i| ids[i]).collect();
    let excluded = remaining.iter().map(|&i| ids[i]).collect();
    Ok(AggregationDecision::new(
        included,
        excluded,
        ModelParams::new(prep.shape, delta)?,
        ops,
    ))
}
