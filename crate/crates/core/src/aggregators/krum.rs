use crate::error::{Error, Result};
use crate::params::{sq_dist, ClientId, ClientUpdate, ModelParams};

use super::{argmin_with_ties, prepare, weighted_mean, AggregationDecision, Prepared};

/// Krum score of every update, in ascending client id order: the sum of
/// squared distances to its `n - f - 2` nearest other updates.
pub fn krum_scores(updates: &[ClientUpdate], byzantine_f: usize) -> Result<Vec<(ClientId, f64)>> {
    let prep = prepare(updates, 1, "krum")?;
    let scores = scores_of(&prep.rows(), byzantine_f);
    Ok(prep.ids().into_iter().zip(scores).collect())
}

/// Scores over `rows` with neighbour count `len - f - 2` (saturating at 0).
pub(crate) fn scores_of(rows: &[&[f64]], f: usize) -> Vec<f64> {
    let n = rows.len();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(rows[i], rows[j]);
            pair[i * n + j] = d;
            pair[j * n + i] = d;
        }
    }
    let neighbours = n.saturating_sub(f + 2);
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| pair[i * n + j])
                .collect();
            d.sort_by(f64::total_cmp);
            d[..neighbours].iter().sum()
        })
        .collect()
}

/// Vector ops for one scoring pass: each pairwise distance costs a difference and a norm.
pub(crate) fn scoring_ops(n: usize) -> u64 {
    (n * n.saturating_sub(1)) as u64
}

fn check(prep: &Prepared<'_>, f: usize, what: &str) -> Result<()> {
    let n = prep.len();
    if n < 2 * f + 3 {
        return Err(Error::Aggregation(format!(
            "{what} needs n >= 2f+3 (n={n}, f={f})"
        )));
    }
    Ok(())
}

/// Ranks clients by Krum score, lowest first, with near-ties going to the lower id.
fn ranking(scores: &[f64], count: usize) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut order = Vec::with_capacity(count);
    while order.len() < count {
        let pos = argmin_with_ties(scores, &remaining);
        order.push(remaining.remove(pos));
    }
    order
}

/// Selects the single update with the lowest Krum score.
pub fn krum(updates: &[ClientUpdate], byzantine_f: usize) -> Result<AggregationDecision> {
    multi_krum_inner(updates, byzantine_f, 1, "krum")
}

/// Sample-weighted mean of the `m` lowest-score updates.
pub fn multi_krum(
    updates: &[ClientUpdate],
    byzantine_f: usize,
    m: usize,
) -> Result<AggregationDecision> {
    multi_krum_inner(updates, byzantine_f, m, "multi_krum")
}

fn multi_krum_inner(
    updates: &[ClientUpdate],
    f: usize,
    m: usize,
    what: &str,
) -> Result<AggregationDecision> {
    let prep = prepare(updates, 1, what)?;
    check(&prep, f, what)?;
    let n = prep.len();
    if m == 0 || m > n - f {
        return Err(Error::Aggregation(format!(
            "{what} needs 1 <= m <= n - f (n={n}, f={f}, m={m})"
        )));
    }
    let scores = scores_of(&prep.rows(), f);
    let chosen = ranking(&scores, m);
    let mut chosen_sorted = chosen.clone();
    chosen_sorted.sort_unstable();
    let picked: Vec<&ClientUpdate> = chosen_sorted.iter().map(|&i| prep.updates[i]).collect();
    let delta = if m == 1 {
        picked[0].delta.values().to_vec()
    } else {
        weighted_mean(&picked, prep.dim())
    };
    let ids = prep.ids();
    let included = chosen_sorted.iter().map(|&i| ids[i]).collect();
    let excluded = (0..n)
        .filter(|i| !chosen_sorted.contains(i))
        .map(|i| ids[i])
        .collect();
    let ops = scoring_ops(n) + m as u64 + 1;
    Ok(AggregationDecision::new(
        included,
        excluded,
        ModelParams::new(prep.shape, delta)?,
        ops,
    ))
}
