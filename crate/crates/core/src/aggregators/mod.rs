//! Aggregation strategies.
//!
//! Every strategy consumes the round's client updates and returns an
//! [`AggregationDecision`]: which clients were used, which were rejected, the
//! delta to apply to the global model, and a count of elementary vector
//! operations spent (the controller overhead fed to the resource ledger).
//!
//! Inputs are processed in ascending client id regardless of submission order,
//! and every tie is broken in favour of the lower id.

mod bulyan;
mod fedavg;
mod geomedian;
mod krum;
mod sigma_pid;
mod trimmed_mean;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ClientId, ClientUpdate, ModelParams, Shape};

pub use bulyan::bulyan;
pub use fedavg::fedavg;
pub use geomedian::geomedian;
pub use krum::{krum, krum_scores, multi_krum};
pub use sigma_pid::{sigma_filter, sigma_pid, PidGains, PidState, SigmaFilter};
pub use trimmed_mean::trimmed_mean;

/// Relative tolerance under which two selection scores count as tied.
pub const SCORE_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationDecision {
    pub included: Vec<ClientId>,
    pub excluded: Vec<ClientId>,
    /// Clients counted as excluded by the exclusion metrics. Equal to
    /// `excluded` except for trimmed mean, which flags a client when more than
    /// half of its coordinates were trimmed.
    pub flagged: Vec<ClientId>,
    pub delta: ModelParams,
    pub overhead_ops: u64,
    /// False when an iterative method stopped at its iteration cap.
    pub converged: bool,
}

impl AggregationDecision {
    pub(crate) fn new(
        included: Vec<ClientId>,
        excluded: Vec<ClientId>,
        delta: ModelParams,
        overhead_ops: u64,
    ) -> Self {
        let mut included = included;
        let mut excluded = excluded;
        included.sort_unstable();
        excluded.sort_unstable();
        Self {
            flagged: excluded.clone(),
            included,
            excluded,
            delta,
            overhead_ops,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorName {
    Fedavg,
    TrimmedMean,
    Krum,
    MultiKrum,
    Bulyan,
    Geomedian,
    SigmaPid,
}

impl AggregatorName {
    pub const ALL: [AggregatorName; 7] = [
        AggregatorName::Fedavg,
        AggregatorName::TrimmedMean,
        AggregatorName::Krum,
        AggregatorName::MultiKrum,
        AggregatorName::Bulyan,
        AggregatorName::Geomedian,
        AggregatorName::SigmaPid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorName::Fedavg => "fedavg",
            AggregatorName::TrimmedMean => "trimmed_mean",
            AggregatorName::Krum => "krum",
            AggregatorName::MultiKrum => "multi_krum",
            AggregatorName::Bulyan => "bulyan",
            AggregatorName::Geomedian => "geomedian",
            AggregatorName::SigmaPid => "sigma_pid",
        }
    }

    /// Names of the parameters this aggregator reads.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            AggregatorName::Fedavg => &[],
            AggregatorName::TrimmedMean => &["trim_beta"],
            AggregatorName::Krum | AggregatorName::Bulyan => &["byzantine_f"],
            AggregatorName::MultiKrum => &["byzantine_f", "multi_krum_m"],
            AggregatorName::Geomedian => &["weiszfeld_tol", "weiszfeld_max_iters"],
            AggregatorName::SigmaPid => &["sigma_k", "kp", "ki", "kd"],
        }
    }
}

impl fmt::Display for AggregatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorParams {
    pub trim_beta: usize,
    pub byzantine_f: usize,
    pub multi_krum_m: usize,
    pub sigma_k: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub weiszfeld_tol: f64,
    pub weiszfeld_max_iters: usize,
}

impl Default for AggregatorParams {
    fn default() -> Self {
        Self {
            trim_beta: 4,
            byzantine_f: 4,
            multi_krum_m: 12,
            sigma_k: 2.5,
            kp: 1.0,
            ki: 0.0,
            kd: 0.0,
            weiszfeld_tol: 1e-6,
            weiszfeld_max_iters: 100,
        }
    }
}

impl AggregatorParams {
    /// Display form of one parameter's value, matching its JSON encoding.
    pub fn value_of(&self, name: &str) -> Option<String> {
        let v = serde_json::to_value(self).ok()?;
        v.get(name).map(|x| x.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub name: AggregatorName,
    #[serde(default)]
    pub params: AggregatorParams,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self::new(AggregatorName::Fedavg)
    }
}

impl AggregatorSpec {
    pub fn new(name: AggregatorName) -> Self {
        Self {
            name,
            params: AggregatorParams::default(),
        }
    }

    pub fn with_params(name: AggregatorName, params: AggregatorParams) -> Self {
        Self { name, params }
    }

    /// Checks the name-specific bounds against a federation of `n` clients.
    /// Errors carry the dotted path of the offending field under `prefix`.
    pub fn validate(&self, n: usize, prefix: &str) -> Result<()> {
        let p = &self.params;
        let field = |name: &str| format!("{prefix}.params.{name}");
        match self.name {
            AggregatorName::Fedavg => {}
            AggregatorName::TrimmedMean => {
                if n <= 2 * p.trim_beta {
                    return Err(Error::config(
                        field("trim_beta"),
                        format!(
                            "trimmed_mean needs num_clients > 2*trim_beta (n={n}, beta={})",
                            p.trim_beta
                        ),
                    ));
                }
            }
            AggregatorName::Krum => check_krum(n, p.byzantine_f, &field("byzantine_f"))?,
            AggregatorName::MultiKrum => {
                check_krum(n, p.byzantine_f, &field("byzantine_f"))?;
                if p.multi_krum_m == 0 || p.multi_krum_m > n - p.byzantine_f {
                    return Err(Error::config(
                        field("multi_krum_m"),
                        format!(
                            "multi_krum needs 1 <= m <= n - f (n={n}, f={}, m={})",
                            p.byzantine_f, p.multi_krum_m
                        ),
                    ));
                }
            }
            AggregatorName::Bulyan => {
                if n < 4 * p.byzantine_f + 3 {
                    return Err(Error::config(
                        field("byzantine_f"),
                        format!(
                            "bulyan needs num_clients >= 4f+3 (n={n}, f={})",
                            p.byzantine_f
                        ),
                    ));
                }
            }
            AggregatorName::Geomedian => {
                if !(p.weiszfeld_tol.is_finite() && p.weiszfeld_tol > 0.0) {
                    return Err(Error::config(field("weiszfeld_tol"), "must be > 0"));
                }
                if p.weiszfeld_max_iters == 0 {
                    return Err(Error::config(field("weiszfeld_max_iters"), "must be >= 1"));
                }
            }
            AggregatorName::SigmaPid => {
                if n < 3 {
                    return Err(Error::config(
                        format!("{prefix}.name"),
                        format!("sigma_pid needs num_clients >= 3 (n={n})"),
                    ));
                }
                if !(p.sigma_k.is_finite() && p.sigma_k > 0.0) {
                    return Err(Error::config(field("sigma_k"), "must be > 0"));
                }
                for (name, v) in [("kp", p.kp), ("ki", p.ki), ("kd", p.kd)] {
                    if !v.is_finite() {
                        return Err(Error::config(field(name), "must be finite"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_krum(n: usize, f: usize, field: &str) -> Result<()> {
    if n < 2 * f + 3 {
        return Err(Error::config(
            field,
            format!("krum needs num_clients >= 2f+3 (n={n}, f={f})"),
        ));
    }
    Ok(())
}

/// One line per aggregator: `name<TAB>param=default,...`.
pub fn list_aggregators() -> Vec<String> {
    let defaults = AggregatorParams::default();
    AggregatorName::ALL
        .iter()
        .map(|name| {
            let params: Vec<String> = name
                .param_names()
                .iter()
                .map(|p| format!("{p}={}", defaults.value_of(p).expect("known parameter")))
                .collect();
            format!("{name}\t{}", params.join(","))
        })
        .collect()
}

/// Stateful wrapper that dispatches on the spec and carries PID state across rounds.
#[derive(Debug, Clone)]
pub struct Aggregator {
    spec: AggregatorSpec,
    pid: PidState,
}

impl Aggregator {
    pub fn new(spec: AggregatorSpec) -> Self {
        Self {
            spec,
            pid: PidState::default(),
        }
    }

    pub fn spec(&self) -> &AggregatorSpec {
        &self.spec
    }

    pub fn pid_state(&self) -> &PidState {
        &self.pid
    }

    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<AggregationDecision> {
        let p = &self.spec.params;
        match self.spec.name {
            AggregatorName::Fedavg => fedavg(updates),
            AggregatorName::TrimmedMean => trimmed_mean(updates, p.trim_beta),
            AggregatorName::Krum => krum(updates, p.byzantine_f),
            AggregatorName::MultiKrum => multi_krum(updates, p.byzantine_f, p.multi_krum_m),
            AggregatorName::Bulyan => bulyan(updates, p.byzantine_f),
            AggregatorName::Geomedian => geomedian(updates, p.weiszfeld_tol, p.weiszfeld_max_iters),
            AggregatorName::SigmaPid => {
                let gains = PidGains {
                    kp: p.kp,
                    ki: p.ki,
                    kd: p.kd,
                };
                let (decision, state) = sigma_pid(updates, &self.pid, p.sigma_k, gains)?;
                self.pid = state;
                Ok(decision)
            }
        }
    }
}

/// Updates sorted by id after validation of count, ids, and shapes.
pub(crate) struct Prepared<'a> {
    pub updates: Vec<&'a ClientUpdate>,
    pub shape: Shape,
}

impl Prepared<'_> {
    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn ids(&self) -> Vec<ClientId> {
        self.updates.iter().map(|u| u.client).collect()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.updates.iter().map(|u| u.delta.values()).collect()
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }
}

pub(crate) fn prepare<'a>(
    updates: &'a [ClientUpdate],
    min: usize,
    what: &str,
) -> Result<Prepared<'a>> {
    if updates.len() < min {
        return Err(Error::Aggregation(format!(
            "{what} needs at least {min} updates, got {}",
            updates.len()
        )));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client);
    let mut ids = BTreeSet::new();
    let shape = sorted[0].delta.shape();
    for u in &sorted {
        if !ids.insert(u.client) {
            return Err(Error::Aggregation(format!(
                "duplicate update from client {}",
                u.client
            )));
        }
        if u.delta.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                actual: u.delta.shape().to_string(),
            });
        }
    }
    Ok(Prepared {
        updates: sorted,
        shape,
    })
}

/// `sum_i (n_i / sum_j n_j) * delta_i` over the given updates, in order.
pub(crate) fn weighted_mean(updates: &[&ClientUpdate], dim: usize) -> Vec<f64> {
    let total: f64 = updates.iter().map(|u| u.num_samples as f64).sum();
    let mut out = vec![0.0; dim];
    for u in updates {
        let w = u.num_samples as f64 / total;
        for (o, v) in out.iter_mut().zip(u.delta.values()) {
            *o += w * v;
        }
    }
    out
}

/// Position (into `candidates`) of the lowest score, treating scores within
/// [`SCORE_TIE_RTOL`] of the minimum as tied and preferring the lower id.
/// `candidates` must be in ascending id order.
pub(crate) fn argmin_with_ties(scores: &[f64], candidates: &[usize]) -> usize {
    let min = candidates
        .iter()
        .map(|&i| scores[i])
        .fold(f64::INFINITY, f64::min);
    let tol = SCORE_TIE_RTOL * min.abs();
    candidates
        .iter()
        .position(|&i| scores[i] - min <= tol)
        .expect("nonempty candidates")
}

pub(crate) fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn roster_and_schema() {
        let lines = list_aggregators();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "fedavg\t");
        assert!(lines
            .iter()
            .any(|l| l.starts_with("sigma_pid\t") && l.contains("sigma_k=2.5")));
        assert!(lines.contains(&"multi_krum\tbyzantine_f=4,multi_krum_m=12".to_string()));
        assert_eq!(lines, list_aggregators());
    }

    #[test]
    fn validation_names_field() {
        let spec = AggregatorSpec::with_params(
            AggregatorName::Krum,
            AggregatorParams {
                byzantine_f: 1,
                ..AggregatorParams::default()
            },
        );
        let err = spec.validate(4, "aggregator").unwrap_err().to_string();
        assert!(err.starts_with("aggregator.params.byzantine_f"), "{err}");
        assert!(spec.validate(5, "aggregator").is_ok());

        let bulyan = AggregatorSpec::new(AggregatorName::Bulyan);
        assert!(bulyan.validate(18, "aggregator").is_err());
        assert!(bulyan.validate(19, "aggregator").is_ok());

        let mk = AggregatorSpec::new(AggregatorName::MultiKrum);
        assert!(mk.validate(20, "aggregator").is_ok());
        assert!(mk.validate(15, "aggregator").is_err());

        assert!(AggregatorSpec::new(AggregatorName::TrimmedMean)
            .validate(8, "aggregator")
            .is_err());
        assert!(AggregatorSpec::new(AggregatorName::SigmaPid)
            .validate(2, "aggregator")
            .is_err());
    }

    #[test]
    fn prepare_rejects_duplicates_and_shapes() {
        let mut u = scalars(&[1.0, 2.0]);
        u[1].client = ClientId(0);
        assert!(fedavg(&u).is_err());
        let mixed = vec![
            scalars(&[1.0])[0].clone(),
            updates(&[vec![1.0, 2.0, 3.0]])[0].clone(),
        ];
        let mut mixed = mixed;
        mixed[1].client = ClientId(1);
        assert!(matches!(fedavg(&mixed), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn tie_tolerance_prefers_lower_id() {
        let scores = [0.020000000000000004, 0.019999999999999997, 0.5];
        assert_eq!(argmin_with_ties(&scores, &[0, 1, 2]), 0);
        assert_eq!(argmin_with_ties(&[0.3, 0.2, 0.2], &[0, 1, 2]), 1);
    }

    #[test]
    fn log2_ceiling() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(8), 3);
    }

    #[test]
    fn runtime_wrapper_threads_pid_state() {
        let mut agg = Aggregator::new(AggregatorSpec::with_params(
            AggregatorName::SigmaPid,
            AggregatorParams {
                ki: 0.5,
                ..AggregatorParams::default()
            },
        ));
        let u = scalars(&[1.0, 1.0, 1.0]);
        agg.aggregate(&u).unwrap();
        assert_eq!(agg.pid_state().integral, vec![1.0, 0.0]);
        let d = agg.aggregate(&u).unwrap();
        // kp*e + ki*I with I = 2e
        assert_eq!(d.delta.values(), &[2.0, 0.0]);
    }
}
