use serde::Serialize;

use crate::metacognition::LedgerEntry;
use crate::params::ClientId;
use crate::trainer::Evaluation;

/// Exclusion confusion counts: positive = malicious, predicted positive = excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(
        submitting: &[ClientId],
        excluded: &[ClientId],
        is_malicious: impl Fn(ClientId) -> bool,
    ) -> Self {
        let mut c = Confusion::default();
        for &id in submitting {
            match (is_malicious(id), excluded.contains(&id)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `tp / (tp + fp)`, 1.0 when nothing was excluded.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 1.0 when no malicious client submitted.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio_or_one(self.tp + self.tn, self.total())
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_loss: f64,
    pub global_accuracy: f64,
    pub excluded: Vec<ClientId>,
    pub confusion: Confusion,
    pub excl_accuracy: f64,
    pub excl_precision: f64,
    pub excl_recall: f64,
    pub non_participants: Vec<ClientId>,
    pub cost: f64,
    pub overhead: f64,
    pub objective: f64,
}

impl RoundMetrics {
    pub fn new(
        round: usize,
        eval: Evaluation,
        excluded: Vec<ClientId>,
        confusion: Confusion,
        non_participants: Vec<ClientId>,
        ledger: LedgerEntry,
    ) -> Self {
        Self {
            round,
            global_loss: eval.loss,
            global_accuracy: eval.accuracy,
            excluded,
            excl_accuracy: confusion.accuracy(),
            excl_precision: confusion.precision(),
            excl_recall: confusion.recall(),
            confusion,
            non_participants,
            cost: ledger.cost,
            overhead: ledger.overhead,
            objective: ledger.objective,
        }
    }
}
