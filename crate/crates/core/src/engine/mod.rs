//! The round loop: broadcast, local training, poisoning, monitoring,
//! aggregation, update, and measurement.
//!
//! The global model changes only through `theta_{t+1} = theta_t + delta_t`,
//! where `delta_t` is the round's aggregation decision. Every random draw
//! comes from a stream keyed by (purpose, round, client), so identical
//! configs give bit-identical runs regardless of thread scheduling.

mod config;
mod metrics;
pub mod output;
mod sweep;

use std::time::Instant;

use rayon::prelude::*;

use crate::aggregators::{AggregationDecision, Aggregator};
use crate::attacks::{flip_labels, poison_update, AttackKind};
use crate::datagen::{
    generate_synthetic, load_csv, partition, stratified_split, ClientShard, Dataset,
};
use crate::error::{Error, Result};
use crate::metacognition::{
    compute_indicators, select_participants, update_reputation, ReputationState, ResourceLedger,
    TrustIndicators,
};
use crate::params::{ClientId, ClientUpdate, ModelParams, Shape};
use crate::rng::{purpose, Rng};
use crate::trainer::{evaluate, local_train, Evaluation};

pub use config::{DatasetKind, DatasetSpec, ReputationConfig, ResourceConfig, SimConfig};
pub use metrics::{Confusion, RoundMetrics};
pub use sweep::{parse_sweep_value, set_param, sweep, SweepPoint};

/// Server-side view of the federation after data assignment and static poisoning.
#[derive(Debug, Clone)]
pub struct Federation {
    pub shape: Shape,
    pub shards: Vec<ClientShard>,
    /// Clean held-out evaluation data.
    pub eval: Dataset,
}

/// Builds data, splits off the eval set, partitions, and flips labels on
/// malicious shards once.
pub fn build_federation(config: &SimConfig) -> Result<Federation> {
    let seed = config.seed;
    let ds = &config.dataset;
    let data = match ds.kind {
        DatasetKind::Synthetic => generate_synthetic(
            ds.classes,
            ds.features,
            ds.samples_per_class,
            ds.cluster_spread,
            &mut Rng::for_path(seed, &[purpose::DATA]),
        )?,
        DatasetKind::Csv => {
            let path = ds
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::config("dataset.csv_path", "required when type is csv"))?;
            load_csv(path, Some(ds.classes))?
        }
    };
    let (train, eval) = stratified_split(
        &data,
        config.eval_fraction,
        &mut Rng::for_path(seed, &[purpose::EVAL_SPLIT]),
    )
    .map_err(|e| Error::config("eval_fraction", e.to_string()))?;
    let mut shards = partition(
        &train,
        config.num_clients,
        &config.heterogeneity,
        &mut Rng::for_path(seed, &[purpose::PARTITION]),
    )
    .map_err(|e| Error::config("num_clients", e.to_string()))?;

    let attack = &config.malicious;
    if attack.kind == AttackKind::LabelFlip {
        for shard in shards.iter_mut().filter(|s| attack.is_target(s.client)) {
            let mut rng = Rng::for_path(seed, &[purpose::LABEL_FLIP, shard.client.0 as u64]);
            shard.train = flip_labels(&shard.train, attack.fraction, data.num_classes(), &mut rng)?;
        }
    }
    Ok(Federation {
        shape: Shape::new(data.num_classes(), data.num_features())?,
        shards,
        eval,
    })
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub metrics: RoundMetrics,
    /// Decision as applied to the global model. Diverged clients appear in
    /// `excluded` and `flagged`.
    pub decision: AggregationDecision,
    /// `None` when no finite update was submitted.
    pub indicators: Option<TrustIndicators>,
    /// Reputation of every client after this round, ascending id.
    pub reputation: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Evaluation of the zero-initialized model before round 1.
    pub initial: Evaluation,
    pub rounds: Vec<RoundRecord>,
    /// Global parameters before round 1 and after every round (`rounds + 1` entries).
    pub trajectory: Vec<ModelParams>,
    pub ledger: ResourceLedger,
    pub wall_time_secs: f64,
}

impl RunOutput {
    pub fn final_params(&self) -> &ModelParams {
        self.trajectory
            .last()
            .expect("trajectory holds the initial model")
    }

    pub fn metrics(&self) -> Vec<RoundMetrics> {
        self.rounds.iter().map(|r| r.metrics.clone()).collect()
    }

    pub fn final_eval(&self) -> Evaluation {
        self.rounds.last().map_or(self.initial, |r| Evaluation {
            loss: r.metrics.global_loss,
            accuracy: r.metrics.global_accuracy,
        })
    }

    /// Mean over rounds; 1.0 when there are no rounds, matching the 0/0 convention.
    pub fn mean_precision(&self) -> f64 {
        mean_or_one(self.rounds.iter().map(|r| r.metrics.excl_precision))
    }

    pub fn mean_recall(&self) -> f64 {
        mean_or_one(self.rounds.iter().map(|r| r.metrics.excl_recall))
    }
}

fn mean_or_one(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

enum Submission {
    Ok(ClientUpdate),
    Diverged(ClientId),
}

pub fn run(config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    let fed = build_federation(config)?;
    let seed = config.seed;
    let attack = &config.malicious;
    let all_clients: Vec<ClientId> = (0..config.num_clients).map(ClientId).collect();

    let mut theta = ModelParams::zeros(fed.shape);
    let initial = evaluate(&theta, &fed.eval)?;
    let mut aggregator = Aggregator::new(config.aggregator.clone());
    let mut reputation = ReputationState::new(
        config.num_clients,
        config.reputation.decay_lambda,
        config.reputation.participation_threshold,
    )?;
    let mut ledger = ResourceLedger::new(config.resource.alpha, config.resource.beta)?;
    let mut trajectory = vec![theta.clone()];
    let mut rounds = Vec::with_capacity(config.rounds);

    for t in 1..=config.rounds {
        let round = t as u64;
        let participants = if config.reputation.enabled {
            select_participants(&reputation, &all_clients)
        } else {
            all_clients.clone()
        };
        let non_participants: Vec<ClientId> = all_clients
            .iter()
            .copied()
            .filter(|c| !participants.contains(c))
            .collect();

        let submissions: Vec<Submission> = participants
            .par_iter()
            .map(|&client| {
                let shard = &fed.shards[client.0];
                let mut rng = Rng::for_path(seed, &[purpose::LOCAL_TRAIN, round, client.0 as u64]);
                let update = match local_train(&theta, shard, &config.train, &mut rng) {
                    Ok(u) => u,
                    Err(Error::TrainingDiverged { client }) => {
                        return Ok(Submission::Diverged(client))
                    }
                    Err(e) => return Err(e),
                };
                if attack.kind != AttackKind::LabelFlip && attack.is_target(client) {
                    let mut rng = Rng::for_path(seed, &[purpose::POISON, round, client.0 as u64]);
                    return Ok(match poison_update(&update, attack, &mut rng) {
                        Ok(p) => Submission::Ok(p),
                        Err(Error::NonFinite(_)) => Submission::Diverged(client),
                        Err(e) => return Err(e),
                    });
                }
                Ok(Submission::Ok(update))
            })
            .collect::<Result<_>>()?;

        let mut updates = Vec::new();
        let mut diverged = Vec::new();
        for s in submissions {
            match s {
                Submission::Ok(u) => updates.push(u),
                Submission::Diverged(c) => diverged.push(c),
            }
        }

        let indicators = if updates.is_empty() {
            None
        } else {
            Some(compute_indicators(&updates, &theta, &reputation)?)
        };
        let mut decision = if updates.is_empty() {
            AggregationDecision {
                included: Vec::new(),
                excluded: Vec::new(),
                flagged: Vec::new(),
                delta: ModelParams::zeros(fed.shape),
                overhead_ops: 0,
                converged: true,
            }
        } else {
            aggregator
                .aggregate(&updates)
                .map_err(|e| runtime_in_round(t, e))?
        };
        if !diverged.is_empty() {
            decision.excluded.extend_from_slice(&diverged);
            decision.excluded.sort_unstable();
            decision.flagged.extend_from_slice(&diverged);
            decision.flagged.sort_unstable();
        }

        let next = theta
            .add(&decision.delta)
            .map_err(|_| runtime_in_round(t, Error::NonFinite("global model")))?;
        decision.delta = applied_delta(&theta, &next, decision.delta)?;
        theta = next;
        trajectory.push(theta.clone());

        reputation = update_reputation(&reputation, &decision)?;
        let eval = evaluate(&theta, &fed.eval)?;
        let cost: f64 = participants
            .iter()
            .map(|c| (config.train.local_epochs * fed.shards[c.0].train.len()) as f64)
            .sum();
        let overhead = decision.overhead_ops as f64;
        let entry = ledger.record(eval.loss, cost, overhead)?;

        let confusion = Confusion::tally(&participants, &decision.flagged, |c| attack.is_target(c));
        let metrics = RoundMetrics::new(
            t,
            eval,
            decision.flagged.clone(),
            confusion,
            non_participants,
            entry,
        );
        rounds.push(RoundRecord {
            metrics,
            decision,
            indicators,
            reputation: reputation.reputation.values().copied().collect(),
        });
    }

    Ok(RunOutput {
        initial,
        rounds,
        trajectory,
        ledger,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Rounds `delta` to the step actually taken from `theta` to `next`, so that
/// both `next - theta == delta` and `theta + delta == next` hold bit-exactly.
/// Coordinates where the rounded step would not reproduce `next` keep the
/// aggregator's value.
fn applied_delta(
    theta: &ModelParams,
    next: &ModelParams,
    delta: ModelParams,
) -> Result<ModelParams> {
    let values = theta
        .values()
        .iter()
        .zip(next.values())
        .zip(delta.values())
        .map(|((&a, &s), &d)| {
            let step = s - a;
            if a + step == s {
                step
            } else {
                d
            }
        })
        .collect();
    ModelParams::new(delta.shape(), values)
}

fn runtime_in_round(round: usize, e: Error) -> Error {
    match e {
        Error::Aggregation(msg) => Error::Aggregation(format!("round {round}: {msg}")),
        Error::NonFinite(what) => Error::Aggregation(format!("round {round}: non-finite {what}")),
        other => other,
    }
}
