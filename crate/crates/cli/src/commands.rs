use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use intent_space::data::{convert_atis, convert_snips, load_jsonl, make_validation_split, LabeledDataset};
use intent_space::embeddings::{load_embeddings_restricted, EmbeddingTable};
use intent_space::eval::{
    accuracy, coordinates_csv, entropy_roc, evaluate_model, run_experiment, run_joint_comparison,
    run_table2, run_table3, train_seen_stage, Corpus, ExperimentConfig,
};
use intent_space::math::{seeded_rng, Matrix, Vector};
use intent_space::model::{
    load_checkpoint, predict_distribution, save_checkpoint, BasisForm, Checkpoint, IntentSpaceModel, ModelConfig, ParamGroup, ScorerKind,
    SpaceMode,
};
use intent_space::training::{check_gradients, draw_reg_sample, EncodedSet, ObjectiveSpec, ParamSelector, TrainingConfig};
use intent_space::unseen::{add_intents, changed_blocks, detect_by_coordinates, detect_from_distribution, ExtensionRequest};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{apply_override, RunConfig};
use crate::failure::{Category, Failure};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(Category::Io, format!("{what}: {} does not exist", path.display())).into())
    }
}

fn dataset(path: &Path) -> Result<LabeledDataset> {
    require_file(path, "dataset")?;
    Ok(load_jsonl(path)?)
}

/// Loads only the embedding rows the datasets use.
fn embeddings(path: &Path, dim: usize, sets: &[&LabeledDataset]) -> Result<EmbeddingTable> {
    require_file(path, "embeddings")?;
    let vocab: HashSet<String> = sets.iter().flat_map(|d| d.vocabulary()).collect();
    Ok(load_embeddings_restricted(path, dim, Some(&vocab))?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    files: Vec<&'a str>,
}

fn prepare_run_dir(cfg: &RunConfig, command: &str, files: Vec<&str>) -> Result<PathBuf> {
    let dir = cfg.run_dir()?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.run.seed,
        config_hash: cfg.hash()?,
        config: cfg,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let echo = toml::to_string(cfg).context("serialising config")?;
    write_text(&dir.join("config.toml"), &echo)?;
    Ok(dir)
}

struct Loaded {
    train: LabeledDataset,
    valid: LabeledDataset,
    test: LabeledDataset,
    table: EmbeddingTable,
}

impl Loaded {
    fn from_config(cfg: &RunConfig) -> Result<Loaded> {
        cfg.check_inputs()?;
        let full = load_jsonl(&cfg.data.train)?;
        let (train, valid) = match &cfg.data.valid {
            Some(p) => (full, load_jsonl(p)?),
            None => make_validation_split(&full, cfg.data.validation_per_intent)?,
        };
        let test = match &cfg.data.test {
            Some(p) => load_jsonl(p)?,
            None => LabeledDataset::new(),
        };
        let table = embeddings(&cfg.embeddings.path, cfg.embeddings.dim, &[&train, &valid, &test])?;
        Ok(Loaded {
            train,
            valid,
            test,
            table,
        })
    }

    fn corpus(&self) -> Corpus<'_> {
        Corpus {
            train: &self.train,
            valid: &self.valid,
            test: if self.test.is_empty() { &self.train } else { &self.test },
            table: &self.table,
        }
    }
}

fn experiment_config(cfg: &RunConfig) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        model: cfg.model_config()?,
        training: cfg.training.clone(),
        unseen: cfg.data.unseen.clone(),
        enable_omega: cfg.run.omega,
        unseen_train_size: cfg.data.unseen_train_size,
    })
}

fn training_metadata(cfg: &RunConfig, ck: &mut Checkpoint) -> Result<()> {
    ck.metadata.insert("training".into(), serde_json::to_value(&cfg.training)?);
    ck.metadata.insert("seed".into(), json!(cfg.run.seed));
    ck.metadata.insert("config_hash".into(), json!(cfg.hash()?));
    ck.metadata.insert(
        "embeddings".into(),
        json!({ "path": cfg.embeddings.path, "dim": cfg.embeddings.dim }),
    );
    ck.metadata.insert("held_out".into(), json!(cfg.data.unseen));
    Ok(())
}

pub fn convert(format: &str, input: &Path, test: Option<&Path>, out: &Path, validation_per_intent: usize) -> Result<()> {
    let report = match format {
        "snips" => {
            if !input.is_dir() {
                return Err(Failure::new(Category::Input, format!("{} is not a directory", input.display())).into());
            }
            convert_snips(input, out, validation_per_intent)?
        }
        "atis" => {
            let test = test.ok_or_else(|| Failure::new(Category::Config, "atis conversion needs --test"))?;
            require_file(input, "atis train")?;
            require_file(test, "atis test")?;
            convert_atis(input, test, out)?
        }
        other => return Err(Failure::new(Category::Config, format!("unknown source format `{other}`")).into()),
    };
    write_json(&out.join("conversion.json"), &report)?;
    for (split, counts) in &report.splits {
        println!("{split}: {} sentences, {} intents", counts.total, counts.intents);
    }
    Ok(())
}

pub fn train(config: &Path, overrides: &[String]) -> Result<PathBuf> {
    let cfg = RunConfig::load(config, overrides)?;
    let data = Loaded::from_config(&cfg)?;
    let exp = experiment_config(&cfg)?;
    let stage = train_seen_stage(data.corpus(), &exp)?;
    let dir = prepare_run_dir(
        &cfg,
        "train",
        vec!["checkpoint.json", "history.csv", "coordinates.csv", "report.json"],
    )?;
    let mut ck = Checkpoint::new(stage.model.clone());
    training_metadata(&cfg, &mut ck)?;
    save_checkpoint(dir.join("checkpoint.json"), &ck)?;
    stage.history.write_csv(dir.join("history.csv"))?;
    write_text(&dir.join("coordinates.csv"), &coordinates_csv(&stage.model)?)?;
    let train_acc = accuracy(&stage.model, &stage.seen_train, None)?;
    let mut report = json!({
        "train_accuracy": train_acc,
        "epochs": stage.history.rows.len(),
    });
    // the test set restricted to the intents the model knows
    if !data.test.is_empty() {
        let known = data.test.filter(|e| stage.model.label_id(&e.intent).is_some());
        if !known.is_empty() {
            let set = EncodedSet::encode(&known, &data.table, &stage.model.labels)?;
            report["test"] = serde_json::to_value(evaluate_model(&stage.model, &set, &stage.model.labels)?)?;
        }
    }
    write_json(&dir.join("report.json"), &report)?;
    println!("train accuracy {train_acc:.2}");
    println!("{}", dir.display());
    Ok(dir)
}

pub struct AddIntentArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub seen: &'a Path,
    pub valid: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub omega: bool,
    pub epsilon: Option<f64>,
    pub zeta: Option<f64>,
    pub overrides: &'a [String],
}

fn stored_training(ck: &Checkpoint, overrides: &[String]) -> Result<TrainingConfig> {
    let base = match ck.metadata.get("training") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => TrainingConfig::default(),
    };
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut table: toml::Table = toml::Table::try_from(&base).context("serialising training config")?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::new(Category::Config, format!("training override: {e}")).into())
}

fn stored_embeddings(ck: &Checkpoint, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    ck.metadata
        .get("embeddings")
        .and_then(|e| e.get("path"))
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| Failure::new(Category::Config, "checkpoint records no embeddings; pass --embeddings").into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn add_intent(args: &AddIntentArgs<'_>) -> Result<PathBuf> {
    require_file(args.checkpoint, "checkpoint")?;
    let ck = load_checkpoint(args.checkpoint)?;
    let model = ck.model.clone();
    let mut cfg = stored_training(&ck, args.overrides)?;
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    if let Some(z) = args.zeta {
        cfg.zeta = z;
    }
    cfg.validate()?;
    let out = args.out.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.checkpoint, ".extended.json"));
    if out == args.checkpoint {
        return Err(Failure::new(Category::Config, "refusing to overwrite the input checkpoint").into());
    }

    let unseen = dataset(args.data)?;
    let seen = dataset(args.seen)?;
    let valid = match args.valid {
        Some(p) => dataset(p)?,
        None => LabeledDataset::new(),
    };
    let collisions: Vec<&String> = unseen.labels().iter().filter(|l| model.label_id(l).is_some()).collect();
    if !collisions.is_empty() {
        return Err(Failure::new(
            Category::Config,
            format!("the model already has intents {collisions:?}"),
        )
        .into());
    }
    let new_labels: Vec<String> = unseen.labels().to_vec();
    let seen = seen.filter(|e| model.label_id(&e.intent).is_some());
    if seen.is_empty() {
        return Err(Failure::new(Category::Input, "no sentences of the model's intents in --seen").into());
    }
    let emb = stored_embeddings(&ck, args.embeddings)?;
    let table = embeddings(&emb, model.input_dim, &[&unseen, &seen, &valid])?;
    let all: Vec<String> = model.labels.iter().chain(&new_labels).cloned().collect();
    let valid = valid.filter(|e| all.contains(&e.intent));
    let unseen_set = EncodedSet::encode(&unseen, &table, &all)?;
    let seen_set = EncodedSet::encode(&seen, &table, &all)?;
    let sample = seen_set.subset(&draw_reg_sample(&seen_set.labels, cfg.reg_sentences_per_intent, cfg.seed));
    let valid_set = EncodedSet::encode(&valid, &table, &all)?;

    let req = ExtensionRequest {
        new_labels: new_labels.clone(),
        unseen_train: &unseen_set,
        valid: &valid_set,
        seen_sample: &sample,
        cfg: &cfg,
        enable_omega: args.omega,
    };
    let outcome = add_intents(&model, &req, Default::default())?;

    let mut next = Checkpoint::new(outcome.model.clone());
    next.metadata = ck.metadata.clone();
    let mut extensions = next
        .metadata
        .get("extensions")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    extensions.push(json!({
        "labels": new_labels,
        "epsilon": cfg.epsilon,
        "zeta": cfg.zeta,
        "omega": args.omega,
        "parent": args.checkpoint.file_name().and_then(|s| s.to_str()),
    }));
    next.metadata.insert("extensions".into(), Value::Array(extensions));
    next.metadata.insert("epsilon".into(), json!(cfg.epsilon));
    next.metadata.insert("zeta".into(), json!(cfg.zeta));
    next.metadata.insert("omega".into(), json!(args.omega));
    save_checkpoint(&out, &next)?;
    outcome.history.write_csv(sibling(&out, ".history.csv"))?;

    // compare against the file on disk, not the in-memory copy
    let original = load_checkpoint(args.checkpoint)?.model;
    let reloaded = load_checkpoint(&out)?.model;
    let changed = changed_blocks(&original, &reloaded);
    let diff = json!({
        "parent": args.checkpoint,
        "checkpoint": out,
        "checked_blocks": original.blocks().len(),
        "changed_blocks": changed.iter().map(|id| format!("{id:?}")).collect::<Vec<_>>(),
        "frozen_intact": changed.is_empty(),
        "new_labels": new_labels,
        "new_ids": outcome.new_ids,
        "epsilon": cfg.epsilon,
        "zeta": cfg.zeta,
        "omega": args.omega,
        "coordinate_epochs": outcome.coordinate_epochs,
        "expansion_epochs": outcome.expansion_epochs,
    });
    write_json(&sibling(&out, ".diff.json"), &diff)?;
    if !changed.is_empty() {
        return Err(Failure::new(Category::Numeric, format!("frozen tensors changed: {changed:?}")).into());
    }
    println!("added {:?}; {} existing blocks unchanged", new_labels, original.blocks().len());
    println!("{}", out.display());
    Ok(out)
}

/// Encodes a dataset against a model; labels the model lacks get ids past
/// its intents so they count as unseen and are never predicted correctly.
fn encode_for(model: &IntentSpaceModel, ds: &LabeledDataset, table: &EmbeddingTable) -> Result<(EncodedSet, Vec<String>)> {
    let mut names = model.labels.clone();
    for l in ds.labels() {
        if !names.contains(l) {
            names.push(l.clone());
        }
    }
    Ok((EncodedSet::encode(ds, table, &names)?, names))
}

fn load_for_eval(checkpoint: &Path, data: &Path, emb: Option<&Path>) -> Result<(IntentSpaceModel, LabeledDataset, EmbeddingTable)> {
    require_file(checkpoint, "checkpoint")?;
    let ck = load_checkpoint(checkpoint)?;
    let ds = dataset(data)?;
    let path = stored_embeddings(&ck, emb)?;
    let table = embeddings(&path, ck.model.input_dim, &[&ds])?;
    Ok((ck.model, ds, table))
}

pub fn eval(checkpoint: &Path, data: &Path, emb: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (model, ds, table) = load_for_eval(checkpoint, data, emb)?;
    let (set, names) = encode_for(&model, &ds, &table)?;
    let report = evaluate_model(&model, &set, &names)?;
    match out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

pub struct DetectArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub embeddings: Option<&'a Path>,
    pub rho: f64,
    pub method: &'a str,
    pub steps: usize,
    pub lr: f64,
    pub out: Option<&'a Path>,
}

pub fn detect(args: &DetectArgs<'_>) -> Result<()> {
    let (model, ds, table) = load_for_eval(args.checkpoint, args.data, args.embeddings)?;
    let (set, _) = encode_for(&model, &ds, &table)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "text", "intent", "value", "decision"])?;
    if !matches!(args.method, "entropy" | "coordinates") {
        return Err(Failure::new(Category::Config, format!("unknown detection method `{}`", args.method)).into());
    }
    for (i, (x, ex)) in set.inputs.iter().zip(ds.examples()).enumerate() {
        let r = if args.method == "entropy" {
            detect_from_distribution(&predict_distribution(&model, x)?, args.rho)?
        } else {
            detect_by_coordinates(&model, x, args.rho, args.steps, args.lr)?
        };
        let decision = serde_json::to_value(r.decision)?;
        w.write_record([
            i.to_string(),
            ex.text.clone(),
            ex.intent.clone(),
            r.value.to_string(),
            decision.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    match args.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn roc(checkpoint: &Path, data: &Path, emb: Option<&Path>, out_dir: &Path) -> Result<f64> {
    let (model, ds, table) = load_for_eval(checkpoint, data, emb)?;
    let (set, _) = encode_for(&model, &ds, &table)?;
    let curve = entropy_roc(&model, &set)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    write_text(&out_dir.join("roc.csv"), &String::from_utf8(w.into_inner()?)?)?;
    let unseen = set.labels.iter().filter(|&&y| y >= model.seen_count).count();
    write_json(
        &out_dir.join("roc.json"),
        &json!({
            "auc": curve.auc,
            "points": curve.points.len(),
            "seen_sentences": set.len() - unseen,
            "unseen_sentences": unseen,
        }),
    )?;
    println!("auc {:.4}", curve.auc);
    Ok(curve.auc)
}

pub fn export_coords(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    let model = load_checkpoint(checkpoint)?.model;
    let text = coordinates_csv(&model)?;
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Finite-difference check of every selector on small seeded models.
pub fn grad_check(seed: u64, eps: f64) -> Result<f64> {
    let groups: [(&str, &[ParamGroup]); 6] = [
        ("bases", &[ParamGroup::Bases]),
        ("coordinates", &[ParamGroup::Coordinates]),
        ("expansions", &[ParamGroup::Expansions]),
        ("input", &[ParamGroup::Input]),
        ("scorer", &[ParamGroup::Scorer]),
        (
            "all",
            &[
                ParamGroup::Bases,
                ParamGroup::Coordinates,
                ParamGroup::Expansions,
                ParamGroup::Input,
                ParamGroup::Scorer,
            ],
        ),
    ];
    let mut rng = seeded_rng(seed);
    let xs: Vec<Vec<Vector>> = (0..5)
        .map(|i| (0..2 + i % 3).map(|_| Vector::random(3, 1.0, &mut rng)).collect())
        .collect();
    let labeled: Vec<(&[Vector], usize)> = vec![(&xs[0], 2), (&xs[1], 2), (&xs[2], 1)];
    let reg: Vec<&[Vector]> = vec![&xs[3], &xs[4]];
    let spec = ObjectiveSpec {
        epsilon: 0.2,
        zeta: 1.0,
        unseen: vec![2],
        coord_intents: vec![2],
    };
    let mut worst: f64 = 0.0;
    for (form, form_name) in [
        (BasisForm::FullMatrix, "full-matrix"),
        (BasisForm::ReducedRank { rank: 2 }, "reduced-rank"),
        (BasisForm::VectorBias, "vector-bias"),
    ] {
        for mode in [SpaceMode::Simplex, SpaceMode::Euclidean] {
            for scorer in [ScorerKind::Shared, ScorerKind::PerIntent] {
                let mut cfg = ModelConfig::new(6, 3);
                cfg.form = form;
                cfg.mode = mode;
                cfg.scorer = scorer;
                cfg.seed = seed;
                cfg.init_scale = 0.4;
                let mut m = IntentSpaceModel::new(&cfg, vec!["a".into(), "b".into(), "c".into()])?;
                m.coords.beta = Matrix::random(3, 3, 1.0, &mut rng);
                if form != BasisForm::VectorBias {
                    m.expand_intent(2)?;
                    for o in m.expansions.by_intent.get_mut(&2).into_iter().flatten() {
                        o.data_mut().iter_mut().for_each(|x| *x += intent_space::math::uniform(&mut rng, 0.2));
                    }
                }
                for (name, g) in groups {
                    if name == "expansions" && form == BasisForm::VectorBias {
                        continue;
                    }
                    let sel = ParamSelector::new(g.iter().copied())?;
                    let err = check_gradients(&m, &labeled, &reg, &spec, &sel, eps)?;
                    worst = worst.max(err);
                    println!("{form_name:<13} {:<9} {:<10} {name:<12} {err:.3e}", format!("{mode:?}"), format!("{scorer:?}"));
                }
            }
        }
    }
    println!("max relative error {worst:.3e}");
    if !(worst < GRAD_TOLERANCE) {
        return Err(Failure::new(Category::Numeric, format!("gradient check failed: {worst:.3e}")).into());
    }
    Ok(worst)
}

pub fn experiment(config: &Path, overrides: &[String], kind: &str, sizes: &[usize]) -> Result<PathBuf> {
    let cfg = RunConfig::load(config, overrides)?;
    if kind != "table2" && cfg.data.unseen.is_empty() {
        return Err(Failure::new(Category::Config, "data.unseen must name the held-out intents").into());
    }
    let data = Loaded::from_config(&cfg)?;
    let exp = experiment_config(&cfg)?;
    let report: Value = match kind {
        "single" => {
            let r = run_experiment(data.corpus(), &exp)?;
            json!({
                "seen_only": r.seen_report,
                "extended": r.report,
                "roc_auc": r.roc.auc,
                "changed_blocks": r.changed_blocks,
            })
        }
        "table2" => {
            let intents: Vec<String> = data.train.labels().to_vec();
            let rows = run_table2(data.corpus(), &exp, &intents)?;
            json!({ "rows": rows })
        }
        "table3" => json!({ "rows": run_table3(data.corpus(), &exp, sizes)? }),
        "joint" => serde_json::to_value(run_joint_comparison(data.corpus(), &exp)?)?,
        other => return Err(Failure::new(Category::Config, format!("unknown experiment `{other}`")).into()),
    };
    let dir = prepare_run_dir(&cfg, &format!("experiment {kind}"), vec!["experiment.json"])?;
    let mut body = BTreeMap::new();
    body.insert("kind", json!(kind));
    body.insert("report", report);
    write_json(&dir.join("experiment.json"), &body)?;
    println!("{}", dir.display());
    Ok(dir)
}
