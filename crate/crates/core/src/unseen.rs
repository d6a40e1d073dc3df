//! Adding intents to a trained model and detecting sentences of intents the
//! model does not know.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{l2_distance, seeded_rng, Vector};
use crate::model::{entropy, predict_distribution, BasisSet, BlockId, IntentSpaceModel, ParamGroup, ScorerParams};
use crate::training::{
    evaluate, run_phases, validate, EncodedSet, History, ObjectiveSpec, Optimizer, ParamSelector, Phase, PhasePlan,
    Sentence, SentenceCache, StopMetric, TrainingConfig,
};

/// Everything needed to add intents to a trained model.
///
/// Labels in the encoded sets are ids in the extended model: existing
/// intents keep their ids and `new_labels[u]` becomes `intents() + u`.
#[derive(Debug, Clone)]
pub struct ExtensionRequest<'a> {
    pub new_labels: Vec<String>,
    pub unseen_train: &'a EncodedSet,
    /// Validation sentences of seen and new intents; may be empty, in which
    /// case early stopping watches the unseen training set.
    pub valid: &'a EncodedSet,
    /// Seen sentences for the rank-preservation term.
    pub seen_sample: &'a EncodedSet,
    pub cfg: &'a TrainingConfig,
    pub enable_omega: bool,
}

#[derive(Debug, Clone)]
pub struct ExtensionOutcome {
    pub model: IntentSpaceModel,
    pub history: History,
    pub new_ids: Vec<usize>,
    pub coordinate_epochs: usize,
    pub expansion_epochs: usize,
}

/// Label list of the model after adding `new_labels`.
pub fn extended_labels(model: &IntentSpaceModel, new_labels: &[String]) -> Vec<String> {
    model.labels.iter().chain(new_labels).cloned().collect()
}

/// Blocks of `before` whose values differ bitwise in `after` (or vanished).
pub fn changed_blocks(before: &IntentSpaceModel, after: &IntentSpaceModel) -> Vec<BlockId> {
    let now: std::collections::BTreeMap<BlockId, &[f64]> = after.blocks().into_iter().collect();
    let mut changed: Vec<BlockId> = before
        .blocks()
        .into_iter()
        .filter(|(id, old)| match now.get(id) {
            Some(new) => {
                old.len() != new.len() || old.iter().zip(new.iter()).any(|(a, b)| a.to_bits() != b.to_bits())
            }
            None => true,
        })
        .map(|(id, _)| id)
        .collect();
    let h0_same = before.h0.len() == after.h0.len()
        && before.h0.iter().zip(after.h0.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !h0_same {
        // the initial state is not trainable; report it under the bias id
        changed.push(BlockId::Bias);
    }
    changed
}

/// Appends the requested intents and fits only their coordinates (plus
/// per-intent scorer rows), then optionally their expansion matrices.
/// Every tensor present before the call is left bit-for-bit unchanged.
pub fn add_intents(model: &IntentSpaceModel, req: &ExtensionRequest<'_>, history: History) -> Result<ExtensionOutcome> {
    req.cfg.validate()?;
    if req.new_labels.is_empty() {
        return Err(Error::EmptyInput("no intents to add".into()));
    }
    if req.unseen_train.is_empty() {
        return Err(Error::EmptyInput("no training sentences for the new intents".into()));
    }
    if req.enable_omega && matches!(model.bases, BasisSet::VectorBias { .. }) {
        return Err(Error::UnsupportedForm("expansion matrices need matrix bases".into()));
    }
    let old = model.intents();
    let total = old + req.new_labels.len();
    let in_range = |set: &EncodedSet| set.labels.iter().all(|&y| y < total);
    if !in_range(req.unseen_train) || !in_range(req.valid) {
        return Err(Error::Range("sentence label outside the extended model".into()));
    }
    if req.unseen_train.labels.iter().any(|&y| y < old) {
        return Err(Error::Config("unseen training data contains seen intents".into()));
    }

    let mut rng = seeded_rng(req.cfg.seed);
    let mut extended = model.clone();
    let mut new_ids = Vec::with_capacity(req.new_labels.len());
    for label in &req.new_labels {
        new_ids.push(extended.push_intent(label, req.cfg.init_scale, &mut rng)?);
    }

    let cache_all = |set: &EncodedSet| -> Result<Vec<SentenceCache>> {
        set.inputs
            .iter()
            .map(|x| SentenceCache::build(&extended, x, old))
            .collect()
    };
    let train_caches = cache_all(req.unseen_train)?;
    let reg_caches = cache_all(req.seen_sample)?;
    let valid_caches = cache_all(req.valid)?;
    let labeled = req.unseen_train.labeled_cached(&train_caches);
    let reg: Vec<Sentence<'_, _>> = req
        .seen_sample
        .inputs
        .iter()
        .zip(&reg_caches)
        .map(|(x, k)| Sentence::cached(x.as_slice(), k))
        .collect();
    let check = if req.valid.is_empty() {
        labeled.clone()
    } else {
        req.valid.labeled_cached(&valid_caches)
    };
    let mut validate_fn = |m: &IntentSpaceModel| validate(m, &check, old);
    let spec = ObjectiveSpec {
        epsilon: req.cfg.epsilon,
        zeta: req.cfg.zeta,
        unseen: new_ids.clone(),
        coord_intents: new_ids.clone(),
    };
    let mut history = history;

    let coords = ParamSelector::new([ParamGroup::Coordinates, ParamGroup::Scorer])?.only_intents(new_ids.clone());
    let plan = PhasePlan {
        phases: vec![(Phase::Coordinates, coords)],
        switch_every: req.cfg.max_epochs_coords,
        max_epochs: req.cfg.max_epochs_coords,
        patience: req.cfg.early_stop_patience,
        batch_size: req.cfg.batch_size,
        stop_on: StopMetric::UnseenAccuracy,
    };
    let mut optimizer = Optimizer::new(req.cfg.optimizer)?;
    let coordinate_epochs = run_phases(
        &mut extended,
        &labeled,
        &reg,
        &spec,
        &plan,
        &mut optimizer,
        &mut rng,
        &mut validate_fn,
        &mut history,
    )?;

    let mut expansion_epochs = 0;
    if req.enable_omega {
        for &c in &new_ids {
            extended.expand_intent(c)?;
        }
        let omega = ParamSelector::new([ParamGroup::Expansions])?.only_intents(new_ids.clone());
        let plan = PhasePlan {
            phases: vec![(Phase::Expansions, omega)],
            switch_every: req.cfg.max_epochs_omega,
            max_epochs: req.cfg.max_epochs_omega,
            patience: req.cfg.early_stop_patience,
            batch_size: req.cfg.batch_size,
            stop_on: StopMetric::UnseenAccuracy,
        };
        let mut optimizer = Optimizer::new(req.cfg.optimizer)?;
        expansion_epochs = run_phases(
            &mut extended,
            &labeled,
            &reg,
            &spec,
            &plan,
            &mut optimizer,
            &mut rng,
            &mut validate_fn,
            &mut history,
        )?;
    }

    let changed = changed_blocks(model, &extended);
    if !changed.is_empty() {
        return Err(Error::Numeric(format!("frozen parameters changed: {changed:?}")));
    }
    Ok(ExtensionOutcome {
        model: extended,
        history,
        new_ids,
        coordinate_epochs,
        expansion_epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Entropy, or the coordinate distance for coordinate-based detection.
    pub value: f64,
    pub decision: Decision,
    pub threshold: f64,
}

fn decide(value: f64, threshold: f64) -> DetectionResult {
    DetectionResult {
        value,
        decision: if value > threshold { Decision::Unseen } else { Decision::Seen },
        threshold,
    }
}

/// Flags the sentence as unseen when the entropy of the predicted
/// distribution exceeds `rho`.
pub fn detect_by_entropy<X: AsRef<[f64]>>(model: &IntentSpaceModel, sentence: &[X], rho: f64) -> Result<DetectionResult> {
    detect_from_distribution(&predict_distribution(model, sentence)?, rho)
}

pub fn detect_from_distribution(dist: &[f64], rho: f64) -> Result<DetectionResult> {
    Ok(decide(entropy(dist)?, rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of the rule `value > ρ ⇒ unseen`, sweeping ρ over the observed values
/// from the largest down, then below all of them. AUC by the trapezoid rule.
pub fn roc_curve(values: &[f64], is_unseen: &[bool]) -> Result<RocCurve> {
    if values.len() != is_unseen.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} ground-truth flags",
            values.len(),
            is_unseen.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN detection score".into()));
    }
    let pos = is_unseen.iter().filter(|u| **u).count();
    let neg = is_unseen.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Eval("ROC needs both seen and unseen sentences".into()));
    }
    let mut thresholds: Vec<f64> = values.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.push(f64::NEG_INFINITY);
    let points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&rho| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (v, u) in values.iter().zip(is_unseen) {
                if *v > rho {
                    if *u {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: rho,
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            }
        })
        .collect();
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Fits coordinates of a virtual intent that maximise its normalised score
/// on `sentence`, starting from the uniform point, with every model
/// parameter frozen. Returns the normalised coordinates.
pub fn estimate_sentence_coordinates<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    sentence: &[X],
    steps: usize,
    lr: f64,
) -> Result<Vector> {
    if steps == 0 || lr <= 0.0 {
        return Err(Error::Config("coordinate estimation needs steps ≥ 1 and lr > 0".into()));
    }
    let old = model.intents();
    let mut probe = model.clone();
    let label = (0..).map(|i| format!("__probe{i}")).find(|l| probe.label_id(l).is_none()).unwrap();
    let mut rng = seeded_rng(0);
    let c = probe.push_intent(&label, 0.0, &mut rng)?;
    if let ScorerParams::PerIntent { a, d } = &mut probe.scorer {
        // the virtual intent scores with the average existing scorer
        let h = a.cols();
        let mean: Vec<f64> = (0..h).map(|j| (0..old).map(|r| a.get(r, j)).sum::<f64>() / old as f64).collect();
        a.row_mut(c).copy_from_slice(&mean);
        d[c] = d.iter().take(old).sum::<f64>() / old as f64;
    }
    let cache = SentenceCache::build(&probe, sentence, old)?;
    let labeled = [(Sentence::cached(sentence, &cache), c)];
    let selector = ParamSelector::new([ParamGroup::Coordinates])?.only_intents([c]);
    let mut optimizer = Optimizer::new(crate::training::OptimizerConfig::Sgd { lr, weight_decay: 0.0 })?;
    let none: [Sentence<'_, X>; 0] = [];
    for _ in 0..steps {
        let (_, grads) = evaluate(&probe, &labeled, &none, &ObjectiveSpec::nll_only(), Some(&selector))?;
        optimizer.step(&mut probe, &grads.expect("selector given"), &selector)?;
    }
    Ok(probe.coords.normalized(c))
}

/// Unseen when the estimated coordinates are farther than `threshold` (L2)
/// from every seen intent's coordinates.
pub fn detect_by_coordinates<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    sentence: &[X],
    threshold: f64,
    steps: usize,
    lr: f64,
) -> Result<DetectionResult> {
    let alpha = estimate_sentence_coordinates(model, sentence, steps, lr)?;
    let known: Vec<Vector> = (0..model.seen_count)
        .map(|c| model.coords.normalized(c))
        .collect();
    Ok(decide(nearest_distance(&alpha, &known), threshold))
}

/// Smallest L2 distance from `alpha` to any of `known`.
pub fn nearest_distance(alpha: &[f64], known: &[Vector]) -> f64 {
    known
        .iter()
        .map(|k| l2_distance(alpha, k))
        .fold(f64::INFINITY, f64::min)
}
