//! Distance-threshold filtering with PID smoothing of the global step.
//!
//! Each round, updates farther than `median(d) + k * 1.4826 * MAD(d)` from the
//! coordinate-wise median are excluded and the survivors are averaged by sample
//! count. That average is the error signal `e_t` of a PID controller:
//!
//! ```text
//! I_t   = clip(I_{t-1} + e_t, 10 * ||e_t||)
//! D_t   = e_t - e_{t-1}            (zero in the first round)
//! delta = kp * e_t + ki * I_t + kd * D_t
//! ```
//!
//! With the defaults `kp = 1, ki = kd = 0` the output is the filtered mean.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{dist, norm, ClientId, ClientUpdate, ModelParams};
use crate::stats::{coordinate_median, median, robust_scale};

use super::{ceil_log2, prepare, weighted_mean, AggregationDecision};

const INTEGRAL_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.0,
            kd: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    /// Previous round's error signal; `None` before the first round.
    pub prev_error: Option<Vec<f64>>,
    /// Clipped running sum of error signals; empty before the first round.
    pub integral: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFilter {
    pub reference: Vec<f64>,
    /// Distances to the reference in ascending id order.
    pub distances: Vec<(ClientId, f64)>,
    pub threshold: f64,
    pub included: Vec<ClientId>,
    pub excluded: Vec<ClientId>,
}

/// Exclusion step alone.
pub fn sigma_filter(updates: &[ClientUpdate], sigma_k: f64) -> Result<SigmaFilter> {
    let prep = prepare(updates, 3, "sigma_pid")?;
    let rows = prep.rows();
    let reference = coordinate_median(&rows);
    let d: Vec<f64> = rows.iter().map(|r| dist(r, &reference)).collect();
    let med = median(&d).expect("nonempty");
    let scale = robust_scale(&d).expect("nonempty");
    let threshold = med + sigma_k * scale;
    let ids = prep.ids();
    let mut included: Vec<ClientId> = Vec::new();
    let mut excluded: Vec<ClientId> = Vec::new();
    for (&id, &di) in ids.iter().zip(&d) {
        if di > threshold {
            excluded.push(id);
        } else {
            included.push(id);
        }
    }
    if included.is_empty() {
        let best = (0..d.len())
            .min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)))
            .expect("nonempty");
        included.push(ids[best]);
        excluded.retain(|&id| id != ids[best]);
    }
    Ok(SigmaFilter {
        reference,
        distances: ids.into_iter().zip(d).collect(),
        threshold,
        included,
        excluded,
    })
}

pub fn sigma_pid(
    updates: &[ClientUpdate],
    state: &PidState,
    sigma_k: f64,
    gains: PidGains,
) -> Result<(AggregationDecision, PidState)> {
    let filter = sigma_filter(updates, sigma_k)?;
    let prep = prepare(updates, 3, "sigma_pid")?;
    let n = prep.len();
    let dim = prep.dim();
    let kept: Vec<&ClientUpdate> = prep
        .updates
        .iter()
        .copied()
        .filter(|u| filter.included.contains(&u.client))
        .collect();
    let error = weighted_mean(&kept, dim);

    let mut integral = if state.integral.len() == dim {
        state.integral.clone()
    } else {
        vec![0.0; dim]
    };
    for (i, e) in integral.iter_mut().zip(&error) {
        *i += e;
    }
    let cap = INTEGRAL_CAP * norm(&error);
    let i_norm = norm(&integral);
    if i_norm > cap {
        let s = if i_norm > 0.0 { cap / i_norm } else { 0.0 };
        integral.iter_mut().for_each(|v| *v *= s);
    }
    let derivative: Vec<f64> = match &state.prev_error {
        Some(prev) if prev.len() == dim => error.iter().zip(prev).map(|(e, p)| e - p).collect(),
        _ => vec![0.0; dim],
    };
    let delta: Vec<f64> = (0..dim)
        .map(|j| gains.kp * error[j] + gains.ki * integral[j] + gains.kd * derivative[j])
        .collect();

    // median, n distances, weighted mean, then integral update/clip, derivative, combination
    let ops = n as u64 * ceil_log2(n) + 2 * n as u64 + kept.len() as u64 + 1 + 5;
    let decision = AggregationDecision::new(
        filter.included,
        filter.excluded,
        ModelParams::new(prep.shape, delta)?,
        ops,
    );
    let next = PidState {
        prev_error: Some(error),
        integral,
    };
    Ok((decision, next))
}
