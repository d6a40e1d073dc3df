//! Mini-batch loops, early stopping and the interleaved seen-intent
//! schedule.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, seeded_rng, SeededRng, Vector};
use crate::model::{normalize_scores, score, Composed, IntentSpaceModel, ParamGroup};

use super::objective::{evaluate, ObjectiveSpec, Sentence};
use super::{EncodedSet, Optimizer, ParamSelector, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "W")]
    Bases,
    #[serde(rename = "alpha")]
    Coordinates,
    #[serde(rename = "omega")]
    Expansions,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Bases => "W",
            Phase::Coordinates => "alpha",
            Phase::Expansions => "omega",
        })
    }
}

/// One row per training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Index of the interleaved block (one W or α stretch) the epoch is in.
    pub step: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub valid_seen_acc: Option<f64>,
    pub valid_unseen_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn next_epoch(&self) -> usize {
        self.rows.last().map_or(0, |r| r.epoch + 1)
    }

    pub fn next_step(&self) -> usize {
        self.rows.last().map_or(0, |r| r.step + 1)
    }
}

/// Accuracy per intent group plus mean NLL on a validation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub seen_acc: Option<f64>,
    pub unseen_acc: Option<f64>,
    pub nll: f64,
}

/// Quantity early stopping maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMetric {
    /// Mean of the available group accuracies.
    MeanAccuracy,
    /// Accuracy on unseen-intent sentences, falling back to the mean when
    /// there are none.
    UnseenAccuracy,
}

impl Validation {
    pub fn metric(&self, on: StopMetric) -> f64 {
        match (on, self.seen_acc, self.unseen_acc) {
            (StopMetric::UnseenAccuracy, _, Some(u)) => u,
            (_, Some(a), Some(b)) => (a + b) / 2.0,
            (_, Some(a), None) | (_, None, Some(a)) => a,
            (_, None, None) => 0.0,
        }
    }

    /// Higher metric wins; ties go to the lower NLL.
    fn better_than(&self, best: &Validation, on: StopMetric) -> bool {
        let (m, b) = (self.metric(on), best.metric(on));
        m > b || (m == b && self.nll < best.nll)
    }
}

/// Raw scores of every intent for each sentence, reusing caches.
pub fn score_sentences<X: AsRef<[f64]>>(model: &IntentSpaceModel, sentences: &[Sentence<'_, X>]) -> Result<Vec<Vector>> {
    let n = model.intents();
    let wanted: Vec<bool> = (0..n)
        .map(|c| !sentences.iter().all(|s| s.cache.is_some_and(|k| c < k.frozen.len())))
        .collect();
    let composed = Composed::new(model, &wanted);
    sentences
        .iter()
        .map(|s| {
            if s.inputs.is_empty() {
                return Err(Error::EmptyInput("sentence has no words".into()));
            }
            let owned;
            let projected = match s.cache {
                Some(k) => &k.projected,
                None => {
                    owned = model.project_inputs(s.inputs)?;
                    &owned
                }
            };
            Ok((0..n)
                .map(|c| match s.cache.and_then(|k| k.frozen.get(c)) {
                    Some(v) => *v,
                    None => {
                        let trace = crate::model::run_recurrence(
                            composed.recurrent[c].as_ref().expect("intent composed"),
                            composed.bias[c].as_ref().expect("intent composed"),
                            projected,
                            &model.h0,
                        );
                        score(model, trace.last(), c)
                    }
                })
                .collect::<Vec<f64>>()
                .into())
        })
        .collect()
}

/// Accuracy split by `label < seen_count` and mean NLL.
pub fn validate<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    labeled: &[(Sentence<'_, X>, usize)],
    seen_count: usize,
) -> Result<Validation> {
    let sentences: Vec<Sentence<'_, X>> = labeled.iter().map(|(s, _)| *s).collect();
    let scores = score_sentences(model, &sentences)?;
    let (mut hits, mut totals) = ([0usize; 2], [0usize; 2]);
    let mut nll = 0.0;
    for (s, (_, y)) in scores.iter().zip(labeled) {
        let p = normalize_scores(s);
        let group = usize::from(*y >= seen_count);
        totals[group] += 1;
        if argmax(&p) == *y {
            hits[group] += 1;
        }
        nll -= p[*y].ln();
    }
    let acc = |g: usize| (totals[g] > 0).then(|| hits[g] as f64 / totals[g] as f64);
    Ok(Validation {
        seen_acc: acc(0),
        unseen_acc: acc(1),
        nll: if labeled.is_empty() { 0.0 } else { nll / labeled.len() as f64 },
    })
}

/// A sequence of phases trained with one early-stopping rule.
#[derive(Debug, Clone)]
pub struct PhasePlan {
    /// Phases cycled through, `switch_every` epochs each.
    pub phases: Vec<(Phase, ParamSelector)>,
    pub switch_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub stop_on: StopMetric,
}

/// Runs mini-batch training until early stopping or `max_epochs`, then
/// restores the best validated parameters. Returns the number of epochs run.
///
/// The rank-preservation sample is shuffled each epoch and split evenly
/// across the batches.
#[allow(clippy::too_many_arguments)]
pub fn run_phases<X: AsRef<[f64]>>(
    model: &mut IntentSpaceModel,
    labeled: &[(Sentence<'_, X>, usize)],
    reg: &[Sentence<'_, X>],
    spec: &ObjectiveSpec,
    plan: &PhasePlan,
    optimizer: &mut Optimizer,
    rng: &mut SeededRng,
    validate_fn: &mut dyn FnMut(&IntentSpaceModel) -> Result<Validation>,
    history: &mut History,
) -> Result<usize> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("no training sentences".into()));
    }
    if plan.phases.is_empty() || plan.switch_every == 0 || plan.batch_size == 0 {
        return Err(Error::Config("training plan needs phases and positive sizes".into()));
    }
    let epoch0 = history.next_epoch();
    let step0 = history.next_step();
    let mut best: Option<(Validation, IntentSpaceModel)> = None;
    let mut bad = 0;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut reg_order: Vec<usize> = (0..reg.len()).collect();
    let mut epochs = 0;
    for e in 0..plan.max_epochs {
        let block = e / plan.switch_every;
        let (phase, selector) = &plan.phases[block % plan.phases.len()];
        order.shuffle(rng);
        reg_order.shuffle(rng);
        let batches = labeled.len().div_ceil(plan.batch_size);
        let reg_chunk = reg.len().div_ceil(batches);
        let mut loss_sum = 0.0;
        for (i, idx) in order.chunks(plan.batch_size).enumerate() {
            let batch: Vec<(Sentence<'_, X>, usize)> = idx.iter().map(|&j| labeled[j]).collect();
            let lo = (i * reg_chunk).min(reg.len());
            let hi = ((i + 1) * reg_chunk).min(reg.len());
            let reg_batch: Vec<Sentence<'_, X>> = reg_order[lo..hi].iter().map(|&j| reg[j]).collect();
            let (terms, grads) = evaluate(model, &batch, &reg_batch, spec, Some(selector))?;
            let grads = grads.expect("selector given");
            optimizer.step(model, &grads, selector)?;
            loss_sum += terms.total * idx.len() as f64;
        }
        epochs += 1;
        let v = validate_fn(model)?;
        history.rows.push(HistoryRow {
            epoch: epoch0 + e,
            step: step0 + block,
            phase: *phase,
            train_loss: loss_sum / labeled.len() as f64,
            valid_seen_acc: v.seen_acc,
            valid_unseen_acc: v.unseen_acc,
        });
        match &best {
            Some((b, _)) if !v.better_than(b, plan.stop_on) => {
                bad += 1;
                if bad >= plan.patience {
                    break;
                }
            }
            _ => {
                best = Some((v, model.clone()));
                bad = 0;
            }
        }
    }
    if let Some((_, snapshot)) = best {
        *model = snapshot;
    }
    Ok(epochs)
}

/// Picks up to `per_intent` sentence indices per label, seeded.
pub fn draw_reg_sample(labels: &[usize], per_intent: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed);
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &y) in labels.iter().enumerate() {
        by_label.entry(y).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        out.extend(idx.iter().take(per_intent));
    }
    out.sort_unstable();
    out
}

/// Trains a fresh model on seen intents, alternating between bases (with
/// input and scorer parameters) and coordinates every `interleave_epochs`.
/// Validation falls back to the training set when `valid` is empty.
pub fn train_seen(
    model: &mut IntentSpaceModel,
    train: &EncodedSet,
    valid: &EncodedSet,
    cfg: &TrainingConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training sentences".into()));
    }
    if model.basis_count() != model.intents() {
        return Err(Error::Config(format!(
            "seen training expects one basis per intent ({} bases, {} intents)",
            model.basis_count(),
            model.intents()
        )));
    }
    let plan = PhasePlan {
        phases: vec![
            (
                Phase::Bases,
                ParamSelector::new([ParamGroup::Bases, ParamGroup::Input, ParamGroup::Scorer])?,
            ),
            (Phase::Coordinates, ParamSelector::new([ParamGroup::Coordinates])?),
        ],
        switch_every: cfg.interleave_epochs,
        max_epochs: cfg.max_epochs_seen,
        patience: cfg.early_stop_patience,
        batch_size: cfg.batch_size,
        stop_on: StopMetric::MeanAccuracy,
    };
    let labeled = train.labeled();
    let check = if valid.is_empty() { train } else { valid };
    let check_labeled = check.labeled();
    let seen = model.intents();
    let mut validate_fn = |m: &IntentSpaceModel| validate(m, &check_labeled, seen);
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let mut rng = seeded_rng(cfg.seed);
    let mut history = History::default();
    let reg: [Sentence<'_, crate::embeddings::WordVector>; 0] = [];
    run_phases(
        model,
        &labeled,
        &reg,
        &ObjectiveSpec::nll_only(),
        &plan,
        &mut optimizer,
        &mut rng,
        &mut validate_fn,
        &mut history,
    )?;
    model.seen_count = model.intents();
    Ok(history)
}
