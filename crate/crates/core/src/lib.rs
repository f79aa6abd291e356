//! Federated-learning simulator with Byzantine-robust aggregation and a
//! rule-based metacognitive layer (trust indicators, reputation, resource ledger).

pub mod aggregators;
pub mod attacks;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod metacognition;
pub mod params;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use aggregators::{
    list_aggregators, AggregationDecision, Aggregator, AggregatorName, AggregatorParams,
    AggregatorSpec,
};
pub use attacks::{AttackKind, AttackSpec};
pub use datagen::{ClientShard, Dataset, HeterogeneityMode, HeterogeneitySpec};
pub use engine::{run, RunOutput, SimConfig};
pub use error::{Error, ErrorKind, Result};
pub use params::{ClientId, ClientUpdate, ModelParams, Shape};
pub use rng::Rng;
pub use trainer::{Evaluation, TrainConfig};
