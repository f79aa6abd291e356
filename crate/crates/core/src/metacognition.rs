//! Monitoring around the aggregators: trust indicators, inclusion-driven
//! reputation, participation gating, and the resource ledger.
//!
//! The ledger records, per round,
//!
//! ```text
//! objective = mean_loss + alpha * cost + beta * overhead
//! ```
//!
//! where `cost` is local epochs times samples trained and `overhead` is the
//! aggregator's elementary vector-operation count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregationDecision;
use crate::error::{Error, Result};
use crate::params::{dist, ClientId, ClientUpdate, ModelParams};
use crate::stats::{coordinate_median, median, robust_scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientIndicator {
    pub client: ClientId,
    pub distance_to_reference: f64,
    /// `(d - median(d)) / max(1.4826 * MAD(d), 1e-9)`.
    pub z_score: f64,
    pub reputation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustIndicators {
    pub reference: Vec<f64>,
    pub clients: Vec<ClientIndicator>,
}

impl TrustIndicators {
    pub fn get(&self, client: ClientId) -> Option<&ClientIndicator> {
        self.clients.iter().find(|c| c.client == client)
    }
}

/// Distance of each update from the coordinate-wise median update, its robust
/// z-score, and the client's current reputation. Output is in ascending id order.
pub fn compute_indicators(
    updates: &[ClientUpdate],
    global: &ModelParams,
    reputation: &ReputationState,
) -> Result<TrustIndicators> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no updates to monitor".into()));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client);
    for u in &sorted {
        if u.delta.shape() != global.shape() {
            return Err(Error::ShapeMismatch {
                expected: global.shape().to_string(),
                actual: u.delta.shape().to_string(),
            });
        }
    }
    let rows: Vec<&[f64]> = sorted.iter().map(|u| u.delta.values()).collect();
    let reference = coordinate_median(&rows);
    let d: Vec<f64> = rows.iter().map(|r| dist(r, &reference)).collect();
    let med = median(&d).expect("nonempty");
    let scale = robust_scale(&d).expect("nonempty");
    let clients = sorted
        .iter()
        .zip(&d)
        .map(|(u, &di)| ClientIndicator {
            client: u.client,
            distance_to_reference: di,
            z_score: (di - med) / scale,
            reputation: reputation.get(u.client).unwrap_or(1.0),
        })
        .collect();
    Ok(TrustIndicators { reference, clients })
}

/// Exponentially weighted inclusion history per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationState {
    pub reputation: BTreeMap<ClientId, f64>,
    pub decay_lambda: f64,
    pub participation_threshold: f64,
}

/// Minimum number of participants the gate lets through.
pub const MIN_PARTICIPANTS: usize = 3;

impl ReputationState {
    pub fn new(
        num_clients: usize,
        decay_lambda: f64,
        participation_threshold: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&decay_lambda) {
            return Err(Error::InvalidArgument(
                "decay_lambda must be in [0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&participation_threshold) {
            return Err(Error::InvalidArgument(
                "participation_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(Self {
            reputation: (0..num_clients).map(|i| (ClientId(i), 1.0)).collect(),
            decay_lambda,
            participation_threshold,
        })
    }

    pub fn get(&self, client: ClientId) -> Option<f64> {
        self.reputation.get(&client).copied()
    }
}

/// `r <- lambda * r + (1 - lambda) * [included]` for every client in the decision.
pub fn update_reputation(
    state: &ReputationState,
    decision: &AggregationDecision,
) -> Result<ReputationState> {
    let mut next = state.clone();
    let lambda = state.decay_lambda;
    let marks = decision
        .included
        .iter()
        .map(|&c| (c, 1.0))
        .chain(decision.excluded.iter().map(|&c| (c, 0.0)));
    for (client, s) in marks {
        let r = next
            .reputation
            .get_mut(&client)
            .ok_or(Error::UnknownClient(client))?;
        *r = (lambda * *r + (1.0 - lambda) * s).clamp(0.0, 1.0);
    }
    Ok(next)
}

/// Clients at or above the participation threshold, ascending. If fewer than
/// [`MIN_PARTICIPANTS`] qualify, the highest-reputation clients are returned
/// instead (ties to the lower id).
pub fn select_participants(state: &ReputationState, all_clients: &[ClientId]) -> Vec<ClientId> {
    let rep = |c: &ClientId| state.get(*c).unwrap_or(1.0);
    let mut chosen: Vec<ClientId> = all_clients
        .iter()
        .copied()
        .filter(|c| rep(c) >= state.participation_threshold)
        .collect();
    if chosen.len() < MIN_PARTICIPANTS {
        let mut ranked: Vec<ClientId> = all_clients.to_vec();
        ranked.sort_by(|a, b| rep(b).total_cmp(&rep(a)).then(a.cmp(b)));
        ranked.truncate(MIN_PARTICIPANTS);
        chosen = ranked;
    }
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mean_loss: f64,
    pub cost: f64,
    pub overhead: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub alpha: f64,
    pub beta: f64,
    pub entries: Vec<LedgerEntry>,
}

impl ResourceLedger {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidArgument(
                "alpha and beta must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            alpha,
            beta,
            entries: Vec::new(),
        })
    }

    pub fn record(&mut self, mean_loss: f64, cost: f64, overhead: f64) -> Result<LedgerEntry> {
        if !(cost >= 0.0 && overhead >= 0.0) {
            return Err(Error::InvalidArgument(
                "cost and overhead must be >= 0".into(),
            ));
        }
        let entry = LedgerEntry {
            mean_loss,
            cost,
            overhead,
            objective: mean_loss + self.alpha * cost + self.beta * overhead,
        };
        self.entries.push(entry);
        Ok(entry)
    }

    pub fn total_objective(&self) -> f64 {
        self.entries.iter().map(|e| e.objective).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.entries.iter().map(|e| e.cost).sum()
    }

    pub fn total_overhead(&self) -> f64 {
        self.entries.iter().map(|e| e.overhead).sum()
    }
}
