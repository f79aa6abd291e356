use crate::error::Result;
use crate::params::{dist, ClientUpdate, ModelParams};

use super::{prepare, weighted_mean, AggregationDecision};

const DISTANCE_FLOOR: f64 = 1e-9;

/// Sample-weighted geometric median by smoothed Weiszfeld iteration, started
/// from the weighted mean. Hitting `max_iters` is not an error: the iterate
/// with the lowest objective is returned with `converged = false`.
pub fn geomedian(
    updates: &[ClientUpdate],
    tol: f64,
    max_iters: usize,
) -> Result<AggregationDecision> {
    let prep = prepare(updates, 1, "geomedian")?;
    let n = prep.len();
    let dim = prep.dim();
    let rows = prep.rows();
    let weights: Vec<f64> = prep.updates.iter().map(|u| u.num_samples as f64).collect();
    let objective =
        |y: &[f64]| -> f64 { rows.iter().zip(&weights).map(|(r, w)| w * dist(r, y)).sum() };

    let mut y = weighted_mean(&prep.updates, dim);
    let mut best = y.clone();
    let mut best_obj = objective(&y);
    let mut ops = n as u64 + 1;
    let mut converged = false;
    let mut next = vec![0.0; dim];

    for _ in 0..max_iters {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut denom = 0.0;
        for (r, w) in rows.iter().zip(&weights) {
            let c = w / dist(r, &y).max(DISTANCE_FLOOR);
            denom += c;
            for (o, v) in next.iter_mut().zip(r.iter()) {
                *o += c * v;
            }
        }
        for o in next.iter_mut() {
            *o /= denom;
        }
        let step = dist(&next, &y);
        std::mem::swap(&mut y, &mut next);
        // n distances (2 ops each), n accumulations, normalization, step norm
        ops += 3 * n as u64 + 3;
        let obj = objective(&y);
        if obj <= best_obj {
            best_obj = obj;
            best.copy_from_slice(&y);
        }
        if step < tol {
            converged = true;
            break;
        }
    }
    // Near the optimum the objective is flat to rounding, so "best" is only
    // meaningful as a fallback after hitting the cap.
    if converged {
        best.copy_from_slice(&y);
    }

    // The floor keeps the iteration finite but stalls it near a data point
    // that is itself the median; detect that case and return the point exactly.
    let nearest = (0..n)
        .min_by(|&a, &b| dist(rows[a], &best).total_cmp(&dist(rows[b], &best)))
        .expect("prepare guarantees one update");
    ops += n as u64 * 3 + 1;
    if is_median_vertex(&rows, &weights, nearest) {
        best.copy_from_slice(rows[nearest]);
        converged = true;
    }

    let mut decision = AggregationDecision::new(
        prep.ids(),
        Vec::new(),
        ModelParams::new(prep.shape, best)?,
        ops,
    );
    decision.converged = converged;
    Ok(decision)
}

/// Optimality test for a data point: it is the weighted geometric median when
/// the resultant unit pull of all other points does not exceed its own weight.
fn is_median_vertex(rows: &[&[f64]], weights: &[f64], k: usize) -> bool {
    let p = rows[k];
    let mut own = 0.0;
    let mut pull = vec![0.0; p.len()];
    for (r, &w) in rows.iter().zip(weights) {
        let d = dist(r, p);
        if d == 0.0 {
            own += w;
            continue;
        }
        for (acc, (&x, &y)) in pull.iter_mut().zip(r.iter().zip(p)) {
            *acc += w * (x - y) / d;
        }
    }
    pull.iter().map(|v| v * v).sum::<f64>().sqrt() <= own
}
