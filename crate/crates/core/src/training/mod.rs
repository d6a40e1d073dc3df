//! Objectives, gradients, optimizers and the seen-intent training schedule.

mod objective;
mod optim;
mod schedule;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use objective::{
    backward, check_gradients, evaluate, loss_nll, objective, reg_coordinates, reg_rank_preservation, ObjectiveSpec,
    ObjectiveTerms, Sentence, SentenceCache,
};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerConfig};
pub use schedule::{
    draw_reg_sample, run_phases, score_sentences, train_seen, validate, History, HistoryRow, Phase, PhasePlan,
    StopMetric, Validation,
};

use crate::data::LabeledDataset;
use crate::embeddings::{EmbeddingTable, WordVector};
use crate::error::{Error, Result};
use crate::model::{BlockId, ParamGroup};

/// Parameter blocks a training phase may change.
///
/// With `intents` set, only blocks owned by those intents (coordinate rows,
/// expansions, per-intent scorer rows) are selected; shared blocks are not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSelector {
    groups: BTreeSet<ParamGroup>,
    intents: Option<BTreeSet<usize>>,
}

impl ParamSelector {
    pub fn new(groups: impl IntoIterator<Item = ParamGroup>) -> Result<Self> {
        let groups: BTreeSet<ParamGroup> = groups.into_iter().collect();
        if groups.is_empty() {
            return Err(Error::Config("parameter selector is empty".into()));
        }
        Ok(ParamSelector { groups, intents: None })
    }

    pub fn only_intents(mut self, intents: impl IntoIterator<Item = usize>) -> Self {
        self.intents = Some(intents.into_iter().collect());
        self
    }

    pub fn groups(&self) -> &BTreeSet<ParamGroup> {
        &self.groups
    }

    pub fn includes(&self, id: BlockId) -> bool {
        if !self.groups.contains(&id.group()) {
            return false;
        }
        match (&self.intents, id.intent()) {
            (None, _) => true,
            (Some(set), Some(c)) => set.contains(&c),
            (Some(_), None) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    pub interleave_epochs: usize,
    pub max_epochs_seen: usize,
    pub max_epochs_coords: usize,
    pub max_epochs_omega: usize,
    pub epsilon: f64,
    pub zeta: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Seen sentences per intent in the rank-preservation sample.
    pub reg_sentences_per_intent: usize,
    /// Noise half-width for freshly added per-intent scorer rows.
    pub init_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerConfig::sgd(),
            interleave_epochs: 5,
            max_epochs_seen: 50,
            max_epochs_coords: 150,
            max_epochs_omega: 500,
            epsilon: 0.20,
            zeta: 1.00,
            early_stop_patience: 5,
            batch_size: 16,
            seed: 0,
            reg_sentences_per_intent: 50,
            init_scale: 0.05,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.interleave_epochs == 0 {
            return bad("interleave_epochs must be positive");
        }
        if self.max_epochs_seen == 0 || self.max_epochs_coords == 0 || self.max_epochs_omega == 0 {
            return bad("epoch limits must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.epsilon >= 0.0 && self.zeta >= 0.0) {
            return bad("epsilon and zeta must be non-negative");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive");
        }
        Ok(())
    }
}

/// Sentences encoded as word vectors with labels resolved to intent ids.
#[derive(Debug, Clone, Default)]
pub struct EncodedSet {
    pub inputs: Vec<Vec<WordVector>>,
    pub labels: Vec<usize>,
}

impl EncodedSet {
    /// Encodes `ds`, mapping label names through `intents` (the id of a label
    /// is its position there).
    pub fn encode(ds: &LabeledDataset, table: &EmbeddingTable, intents: &[String]) -> Result<Self> {
        let mut out = EncodedSet::default();
        for ex in ds.examples() {
            let name = &ex.intent;
            let id = intents
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Config(format!("intent `{name}` is not known to the model")))?;
            out.inputs.push(table.encode(&ex.tokens)?);
            out.labels.push(id);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, inputs: Vec<WordVector>, label: usize) {
        self.inputs.push(inputs);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &EncodedSet) {
        self.inputs.extend(other.inputs.iter().cloned());
        self.labels.extend(&other.labels);
    }

    pub fn subset(&self, indices: &[usize]) -> EncodedSet {
        EncodedSet {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn labeled(&self) -> Vec<(Sentence<'_, WordVector>, usize)> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| (Sentence::new(x.as_slice()), y))
            .collect()
    }

    /// Like [`EncodedSet::labeled`], attaching one cache per sentence.
    pub fn labeled_cached<'a>(&'a self, caches: &'a [SentenceCache]) -> Vec<(Sentence<'a, WordVector>, usize)> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .zip(caches)
            .map(|((x, &y), k)| (Sentence::cached(x.as_slice(), k), y))
            .collect()
    }
}
