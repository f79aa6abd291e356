use crate::error::{Error, Result};
use crate::params::{ClientUpdate, ModelParams};

use super::{ceil_log2, prepare, AggregationDecision};

/// Coordinate-wise trimmed mean: per coordinate, drop the `trim_beta`
/// smallest and largest values and average the rest, unweighted.
///
/// No client is excluded outright. A client is *flagged* for the exclusion
/// metrics when more than half of its coordinates were trimmed.
pub fn trimmed_mean(updates: &[ClientUpdate], trim_beta: usize) -> Result<AggregationDecision> {
    let prep = prepare(updates, 1, "trimmed_mean")?;
    let n = prep.len();
    if n <= 2 * trim_beta {
        return Err(Error::Aggregation(format!(
            "trimmed_mean needs n > 2*beta (n={n}, beta={trim_beta})"
        )));
    }
    let dim = prep.dim();
    let rows = prep.rows();
    let kept = n - 2 * trim_beta;
    let mut trimmed_count = vec![0usize; n];
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(rows.iter().enumerate().map(|(i, r)| (r[j], i)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in column[..trim_beta].iter().chain(&column[n - trim_beta..]) {
            trimmed_count[i] += 1;
        }
        let sum: f64 = column[trim_beta..n - trim_beta]
            .iter()
            .map(|(v, _)| v)
            .sum();
        delta.push(sum / kept as f64);
    }

    let ids = prep.ids();
    let flagged = ids
        .iter()
        .zip(&trimmed_count)
        .filter(|(_, &c)| 2 * c > dim)
        .map(|(&id, _)| id)
        .collect();
    let ops = n as u64 * ceil_log2(n) + kept as u64 + 1;
    let mut decision =
        AggregationDecision::new(ids, Vec::new(), ModelParams::new(prep.shape, delta)?, ops);
    decision.flagged = flagged;
    Ok(decision)
}
