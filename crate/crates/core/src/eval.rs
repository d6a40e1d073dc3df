//! Accuracy, evaluation reports, coordinate export and experiment drivers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{partition_seen_unseen, subsample_unseen, LabeledDataset, SplitSpec};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::model::{entropy, IntentSpaceModel, ModelConfig, Predictor};
use crate::training::{draw_reg_sample, train_seen, EncodedSet, History, TrainingConfig};
use crate::unseen::{add_intents, changed_blocks, extended_labels, roc_curve, ExtensionRequest, RocCurve};

/// Rounds a percentage to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Top-1 predictions (ties to the lowest id) for every sentence.
pub fn predictions(model: &IntentSpaceModel, set: &EncodedSet) -> Result<Vec<(usize, f64)>> {
    let p = Predictor::new(model);
    set.inputs
        .iter()
        .map(|x| {
            let d = p.distribution(x)?;
            Ok((argmax(&d), entropy(&d)?))
        })
        .collect()
}

/// Percent of correct top-1 predictions, optionally only over sentences whose
/// label is in `restrict_to`.
pub fn accuracy(model: &IntentSpaceModel, set: &EncodedSet, restrict_to: Option<&[usize]>) -> Result<f64> {
    let idx: Vec<usize> = (0..set.len())
        .filter(|&i| restrict_to.is_none_or(|r| r.contains(&set.labels[i])))
        .collect();
    if idx.is_empty() {
        return Err(Error::Eval("no sentences to score".into()));
    }
    if let Some(y) = idx.iter().map(|&i| set.labels[i]).find(|&y| y >= model.intents()) {
        return Err(Error::Eval(format!("label {y} unknown to the model")));
    }
    let sub = set.subset(&idx);
    let hits = predictions(model, &sub)?
        .iter()
        .zip(&sub.labels)
        .filter(|((p, _), y)| p == *y)
        .count();
    Ok(round2(100.0 * hits as f64 / idx.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub mean_seen: Option<f64>,
    pub mean_unseen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    /// Mean of the seen and unseen accuracies.
    pub simple_average: Option<f64>,
    /// Accuracy over all sentences pooled.
    pub weighted_average: f64,
    pub seen_sentences: usize,
    pub unseen_sentences: usize,
    pub per_intent_accuracy: BTreeMap<String, f64>,
    pub entropy: EntropyStats,
    /// Normalised coordinates, one row per intent.
    pub coordinates: Vec<Vec<f64>>,
}

/// Scores `set` against `model`. A sentence counts as unseen when its label
/// id is at or beyond `model.seen_count`. Labels the model does not hold
/// are scored as errors.
pub fn evaluate_model(model: &IntentSpaceModel, set: &EncodedSet, names: &[String]) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Eval("evaluation set is empty".into()));
    }
    let preds = predictions(model, set)?;
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut ent = [0.0; 2];
    for ((p, h), &y) in preds.iter().zip(&set.labels) {
        let g = usize::from(y >= model.seen_count);
        totals[g] += 1;
        ent[g] += h;
        let e = per.entry(y).or_default();
        e.1 += 1;
        if *p == y {
            hits[g] += 1;
            e.0 += 1;
        }
    }
    let pct = |h: usize, t: usize| (t > 0).then(|| round2(100.0 * h as f64 / t as f64));
    let seen_accuracy = pct(hits[0], totals[0]);
    let unseen_accuracy = pct(hits[1], totals[1]);
    let simple_average = match (seen_accuracy, unseen_accuracy) {
        (Some(a), Some(b)) => Some(round2((a + b) / 2.0)),
        (a, b) => a.or(b),
    };
    let entropies: Vec<f64> = preds.iter().map(|(_, h)| *h).collect();
    let name = |y: usize| names.get(y).cloned().unwrap_or_else(|| format!("#{y}"));
    Ok(EvalReport {
        seen_accuracy,
        unseen_accuracy,
        simple_average,
        weighted_average: round2(100.0 * (hits[0] + hits[1]) as f64 / set.len() as f64),
        seen_sentences: totals[0],
        unseen_sentences: totals[1],
        per_intent_accuracy: per
            .into_iter()
            .map(|(y, (h, t))| (name(y), round2(100.0 * h as f64 / t as f64)))
            .collect(),
        entropy: EntropyStats {
            mean: entropies.iter().sum::<f64>() / entropies.len() as f64,
            min: entropies.iter().copied().fold(f64::INFINITY, f64::min),
            max: entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_seen: (totals[0] > 0).then(|| ent[0] / totals[0] as f64),
            mean_unseen: (totals[1] > 0).then(|| ent[1] / totals[1] as f64),
        },
        coordinates: (0..model.intents())
            .map(|c| model.coords.normalized(c).into_inner())
            .collect(),
    })
}

/// Entropy ROC: a sentence is unseen when its label is not among the
/// model's first `seen_count` intents.
pub fn entropy_roc(model: &IntentSpaceModel, set: &EncodedSet) -> Result<RocCurve> {
    let preds = predictions(model, set)?;
    let values: Vec<f64> = preds.iter().map(|(_, h)| *h).collect();
    let truth: Vec<bool> = set.labels.iter().map(|&y| y >= model.seen_count).collect();
    roc_curve(&values, &truth)
}

/// Normalised coordinates as CSV: `intent,b0,b1,...`.
pub fn coordinates_csv(model: &IntentSpaceModel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["intent".to_string()];
    header.extend((0..model.basis_count()).map(|b| format!("b{b}")));
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for c in 0..model.intents() {
        let mut row = vec![model.labels[c].clone()];
        row.extend(model.coords.normalized(c).iter().map(|a| a.to_string()));
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn export_coordinates(model: &IntentSpaceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, coordinates_csv(model)?).map_err(|e| Error::io(path, e))
}

/// Train/validation/test splits plus the embedding table.
#[derive(Debug, Clone, Copy)]
pub struct Corpus<'a> {
    pub train: &'a LabeledDataset,
    pub valid: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub table: &'a EmbeddingTable,
}

/// One seen-train / extend / evaluate configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub unseen: Vec<String>,
    pub enable_omega: bool,
    /// Number of unseen training sentences to draw; all when `None`.
    pub unseen_train_size: Option<usize>,
}

/// Seen-only model and the data needed to extend it.
#[derive(Debug, Clone)]
pub struct SeenStage {
    pub model: IntentSpaceModel,
    pub history: History,
    /// Seen labels followed by unseen labels; ids index this list.
    pub all_labels: Vec<String>,
    pub seen_train: EncodedSet,
    pub unseen_train: EncodedSet,
    pub valid: EncodedSet,
    pub test: EncodedSet,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seen: SeenStage,
    pub extended: IntentSpaceModel,
    pub history: History,
    /// Test report of the seen-only model.
    pub seen_report: EvalReport,
    /// Test report after extension.
    pub report: EvalReport,
    /// Entropy ROC of the seen-only model on the full test set.
    pub roc: RocCurve,
    /// Tensors of the seen model changed by extension (always empty).
    pub changed_blocks: usize,
}

fn seen_labels(d: &LabeledDataset, unseen: &[String]) -> Vec<String> {
    d.labels().iter().filter(|l| !unseen.contains(l)).cloned().collect()
}

/// Trains the seen-only model of a configuration.
pub fn train_seen_stage(corpus: Corpus<'_>, cfg: &ExperimentConfig) -> Result<SeenStage> {
    let unseen_refs: Vec<&str> = cfg.unseen.iter().map(String::as_str).collect();
    let split = SplitSpec::holding_out(corpus.train, &unseen_refs, 0);
    let (seen_train, unseen_train) = partition_seen_unseen(corpus.train, &split)?;
    let seen = seen_labels(corpus.train, &cfg.unseen);
    if seen.is_empty() {
        return Err(Error::Config("every intent is held out".into()));
    }
    let mut all_labels = seen.clone();
    all_labels.extend(cfg.unseen.iter().cloned());
    let valid_all = corpus.valid.filter(|e| all_labels.contains(&e.intent));
    let seen_valid = valid_all.filter(|e| !cfg.unseen.contains(&e.intent));
    let test = corpus.test.filter(|e| all_labels.contains(&e.intent));

    let mut model_cfg = cfg.model.clone();
    model_cfg.input_dim = corpus.table.dim();
    let mut model = IntentSpaceModel::new(&model_cfg, seen.clone())?;
    let seen_train = EncodedSet::encode(&seen_train, corpus.table, &all_labels)?;
    let seen_valid_enc = EncodedSet::encode(&seen_valid, corpus.table, &all_labels)?;
    let history = train_seen(&mut model, &seen_train, &seen_valid_enc, &cfg.training)?;
    Ok(SeenStage {
        model,
        history,
        seen_train,
        unseen_train: EncodedSet::encode(&unseen_train, corpus.table, &all_labels)?,
        valid: EncodedSet::encode(&valid_all, corpus.table, &all_labels)?,
        test: EncodedSet::encode(&test, corpus.table, &all_labels)?,
        all_labels,
    })
}

/// Extends a seen stage with the configuration's unseen intents.
pub fn extend_stage(stage: &SeenStage, cfg: &ExperimentConfig, corpus: Corpus<'_>) -> Result<ExperimentResult> {
    let unseen_train = match cfg.unseen_train_size {
        None => stage.unseen_train.clone(),
        Some(n) => {
            let unseen_refs: Vec<&str> = cfg.unseen.iter().map(String::as_str).collect();
            let split = SplitSpec::holding_out(corpus.train, &unseen_refs, 0);
            let (_, pool) = partition_seen_unseen(corpus.train, &split)?;
            let drawn = subsample_unseen(&pool, n, cfg.training.seed)?;
            EncodedSet::encode(&drawn, corpus.table, &stage.all_labels)?
        }
    };
    let sample_idx = draw_reg_sample(&stage.seen_train.labels, cfg.training.reg_sentences_per_intent, cfg.training.seed);
    let seen_sample = stage.seen_train.subset(&sample_idx);
    let new_labels: Vec<String> = stage.all_labels[stage.model.intents()..].to_vec();
    if extended_labels(&stage.model, &new_labels) != stage.all_labels {
        return Err(Error::Config("label order of the stage is inconsistent".into()));
    }
    let req = ExtensionRequest {
        new_labels,
        unseen_train: &unseen_train,
        valid: &stage.valid,
        seen_sample: &seen_sample,
        cfg: &cfg.training,
        enable_omega: cfg.enable_omega,
    };
    let outcome = add_intents(&stage.model, &req, stage.history.clone())?;
    Ok(ExperimentResult {
        seen: stage.clone(),
        changed_blocks: changed_blocks(&stage.model, &outcome.model).len(),
        seen_report: evaluate_model(&stage.model, &stage.test, &stage.all_labels)?,
        report: evaluate_model(&outcome.model, &stage.test, &stage.all_labels)?,
        roc: entropy_roc(&stage.model, &stage.test)?,
        extended: outcome.model,
        history: outcome.history,
    })
}

pub fn run_experiment(corpus: Corpus<'_>, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let stage = train_seen_stage(corpus, cfg)?;
    extend_stage(&stage, cfg, corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
}

/// Holds out each intent in turn.
pub fn run_table2(corpus: Corpus<'_>, cfg: &ExperimentConfig, intents: &[String]) -> Result<Vec<TableRow>> {
    intents
        .iter()
        .map(|intent| {
            let mut c = cfg.clone();
            c.unseen = vec![intent.clone()];
            let r = run_experiment(corpus, &c)?;
            Ok(TableRow {
                label: intent.clone(),
                seen_accuracy: r.report.seen_accuracy,
                unseen_accuracy: r.report.unseen_accuracy,
            })
        })
        .collect()
}

/// Extends one seen model with growing unseen training subsets. Size 0
/// reports the seen-only model.
pub fn run_table3(corpus: Corpus<'_>, cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<TableRow>> {
    let stage = train_seen_stage(corpus, cfg)?;
    let available = stage.unseen_train.len();
    let mut rows = Vec::new();
    for &n in sizes {
        if n == 0 {
            let r = evaluate_model(&stage.model, &stage.test, &stage.all_labels)?;
            rows.push(TableRow {
                label: "0".into(),
                seen_accuracy: r.seen_accuracy,
                unseen_accuracy: None,
            });
            continue;
        }
        let mut c = cfg.clone();
        c.unseen_train_size = Some(n.min(available));
        let r = extend_stage(&stage, &c, corpus)?;
        rows.push(TableRow {
            label: n.to_string(),
            seen_accuracy: r.report.seen_accuracy,
            unseen_accuracy: r.report.unseen_accuracy,
        });
    }
    Ok(rows)
}

/// Joint extension with several intents compared against extending with
/// each of them alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    pub joint: EvalReport,
    /// Per intent: basis with the largest coordinate in the joint run and in
    /// the run that added the intent alone.
    pub main_contributors: BTreeMap<String, (usize, usize)>,
}

pub fn run_joint_comparison(corpus: Corpus<'_>, cfg: &ExperimentConfig) -> Result<JointComparison> {
    let joint = run_experiment(corpus, cfg)?;
    let mut main_contributors = BTreeMap::new();
    for intent in &cfg.unseen {
        let mut single = cfg.clone();
        single.unseen = vec![intent.clone()];
        let alone = run_experiment(corpus, &single)?;
        let top = |m: &IntentSpaceModel| -> Result<usize> {
            let c = m
                .label_id(intent)
                .ok_or_else(|| Error::Eval(format!("`{intent}` missing after extension")))?;
            Ok(argmax(&m.coords.normalized(c)))
        };
        main_contributors.insert(intent.clone(), (top(&joint.extended)?, top(&alone.extended)?));
    }
    Ok(JointComparison {
        joint: joint.report,
        main_contributors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vector;
    use crate::model::ModelConfig;
    use std::sync::Arc;

    fn tiny() -> (IntentSpaceModel, EncodedSet) {
        let m = IntentSpaceModel::new(&ModelConfig::new(3, 2), vec!["a".into(), "b".into()]).unwrap();
        let mut set = EncodedSet::default();
        for i in 0..4 {
            let x: Arc<[f64]> = vec![i as f64, 1.0].into();
            set.push(vec![x], i % 2);
        }
        (m, set)
    }

    #[test]
    fn accuracy_rules() {
        let (m, set) = tiny();
        let preds = predictions(&m, &set).unwrap();
        let mut oracle = set.clone();
        oracle.labels = preds.iter().map(|(p, _)| *p).collect();
        assert_eq!(accuracy(&m, &oracle, None).unwrap(), 100.0);
        assert!(matches!(accuracy(&m, &set, Some(&[])), Err(Error::Eval(_))));
        let mut rev = oracle.clone();
        rev.inputs.reverse();
        rev.labels.reverse();
        assert_eq!(accuracy(&m, &rev, None).unwrap(), accuracy(&m, &oracle, None).unwrap());
    }

    #[test]
    fn round_to_two_places() {
        assert_eq!(round2(100.0 * 2.0 / 3.0), 66.67);
        assert_eq!(round2(95.0), 95.0);
    }

    #[test]
    fn coordinates_of_fresh_and_extended_models() {
        let (mut m, _) = tiny();
        let csv = coordinates_csv(&m).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "intent,b0,b1");
        // Euclidean one-hot rows are exact; simplex rows are dominated by
        // the diagonal
        for (c, line) in lines[1..].iter().enumerate() {
            let vals: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            assert_eq!(argmax(&vals), c);
            assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut rng = crate::math::seeded_rng(0);
        m.push_intent("new", 0.05, &mut rng).unwrap();
        let row = m.coords.normalized(2);
        assert!(row.iter().all(|a| (a - 0.5).abs() < 1e-15));
        let mut e = IntentSpaceModel::new(
            &{
                let mut c = ModelConfig::new(3, 2);
                c.mode = crate::model::SpaceMode::Euclidean;
                c
            },
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|c| e.coords.normalized(c).into_inner()).collect();
        assert_eq!(rows, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        e.push_intent("d", 0.0, &mut rng).unwrap();
        assert_eq!(e.coords.normalized(3), Vector::from(vec![1.0 / 3.0; 3]));
    }

    #[test]
    fn report_splits_by_seen_count() {
        let (mut m, set) = tiny();
        m.seen_count = 1;
        let r = evaluate_model(&m, &set, &m.labels.clone()).unwrap();
        assert_eq!(r.seen_sentences, 2);
        assert_eq!(r.unseen_sentences, 2);
        assert!(r.unseen_accuracy.is_some());
        assert_eq!(r.coordinates.len(), 2);
    }
}
