//! Labelled sentence datasets: the canonical JSON Lines format, converters
//! from the SNIPS nlu-benchmark layout and from delimited ATIS exports, and
//! the split/partition/subsample helpers used by the experiments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embeddings::tokenize;
use crate::error::{Error, Result};
use crate::math::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub tokens: Vec<String>,
    pub intent: String,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, intent: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let intent = intent.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput(format!("sentence `{text}` has no tokens")));
        }
        if intent.is_empty() {
            return Err(Error::EmptyInput(format!("sentence `{text}` has an empty intent")));
        }
        Ok(LabeledExample {
            text,
            tokens,
            intent,
        })
    }
}

/// Examples plus a dense label index in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    examples: Vec<LabeledExample>,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_examples(examples: impl IntoIterator<Item = LabeledExample>) -> Self {
        let mut d = Self::new();
        for e in examples {
            d.push(e);
        }
        d
    }

    pub fn push(&mut self, example: LabeledExample) {
        if !self.label_index.contains_key(&example.intent) {
            self.label_index
                .insert(example.intent.clone(), self.labels.len());
            self.labels.push(example.intent.clone());
        }
        self.examples.push(example);
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example counts per label, in label-index order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.labels.len()];
        for e in &self.examples {
            counts[self.label_index[&e.intent]] += 1;
        }
        self.labels.iter().cloned().zip(counts).collect()
    }

    pub fn filter<F: Fn(&LabeledExample) -> bool>(&self, keep: F) -> LabeledDataset {
        LabeledDataset::from_examples(self.examples.iter().filter(|e| keep(e)).cloned())
    }

    pub fn with_labels(&self, labels: &[String]) -> LabeledDataset {
        let set: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        self.filter(|e| set.contains(e.intent.as_str()))
    }

    /// Every distinct token across all examples.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.examples
            .iter()
            .flat_map(|e| e.tokens.iter().cloned())
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.examples {
            let rec = JsonlRecord {
                text: e.text.clone(),
                intent: e.intent.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|err| Error::io(path, err))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    text: String,
    intent: String,
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<LabeledDataset> {
    let mut d = LabeledDataset::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let example = LabeledExample::new(rec.text, rec.intent).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        d.push(example);
    }
    Ok(d)
}

/// The seven SNIPS intents, in the order used by the experiment tables.
pub const SNIPS_INTENTS: [&str; 7] = [
    "AddToPlaylist",
    "BookRestaurant",
    "PlayMusic",
    "RateBook",
    "SearchCreativeWork",
    "SearchScreeningEvent",
    "GetWeather",
];

/// SNIPS corpus as shipped: the full training files and the held-out files
/// (used as the test set).
#[derive(Debug, Clone)]
pub struct SnipsCorpus {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads the nlu-benchmark custom-intent-engines layout. `root` may be the
/// repository root or the `2017-06-custom-intent-engines` directory itself.
///
/// Each intent directory holds `train_<Intent>_full.json` and
/// `validate_<Intent>.json`; the latter becomes the test split.
pub fn load_snips(root: impl AsRef<Path>) -> Result<SnipsCorpus> {
    let root = root.as_ref();
    let base = if root.join("2017-06-custom-intent-engines").is_dir() {
        root.join("2017-06-custom-intent-engines")
    } else {
        root.to_path_buf()
    };
    let mut intents: Vec<String> = Vec::new();
    for name in SNIPS_INTENTS {
        if base.join(name).is_dir() {
            intents.push(name.to_string());
        }
    }
    if intents.is_empty() {
        // Fall back to whatever intent directories are present.
        let entries = fs::read_dir(&base).map_err(|e| Error::io(&base, e))?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| base.join(n).join(format!("train_{n}_full.json")).is_file())
            .collect();
        names.sort();
        intents = names;
    }
    if intents.is_empty() {
        return Err(Error::Format(format!(
            "{} contains no SNIPS intent directories",
            base.display()
        )));
    }
    let mut train = LabeledDataset::new();
    let mut test = LabeledDataset::new();
    for intent in &intents {
        let dir = base.join(intent);
        for e in read_snips_file(&dir.join(format!("train_{intent}_full.json")), intent)? {
            train.push(e);
        }
        for e in read_snips_file(&dir.join(format!("validate_{intent}.json")), intent)? {
            test.push(e);
        }
    }
    Ok(SnipsCorpus { train, test })
}

#[derive(Deserialize)]
struct SnipsUtterance {
    data: Vec<SnipsChunk>,
}

#[derive(Deserialize)]
struct SnipsChunk {
    text: String,
}

fn read_snips_file(path: &Path, intent: &str) -> Result<Vec<LabeledExample>> {
    if !path.is_file() {
        return Err(Error::Format(format!("missing SNIPS file {}", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Some releases of the corpus are not valid UTF-8 throughout.
    let text = String::from_utf8_lossy(&bytes);
    let parsed: BTreeMap<String, Vec<SnipsUtterance>> =
        serde_json::from_str(&text).map_err(|e| {
            Error::Format(format!("{}: {e}", path.display()))
        })?;
    let utterances = parsed.get(intent).ok_or_else(|| {
        Error::Format(format!("{} has no `{intent}` key", path.display()))
    })?;
    utterances
        .iter()
        .map(|u| {
            let sentence: String = u.data.iter().map(|c| c.text.as_str()).collect();
            LabeledExample::new(sentence.trim(), intent)
        })
        .collect()
}

/// ATIS train/test pair after dropping intents missing from either split.
#[derive(Debug, Clone)]
pub struct AtisCorpus {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub dropped: Vec<String>,
}

/// Reads a delimited (CSV or TSV) file with a header row.
///
/// The text column is the first of `query`, `text`, `sentence`, `utterance`
/// present in the header; the label column is `intent` or `label`.
/// ATIS exports wrap queries in `BOS … EOS` markers, which are dropped.
pub fn read_delimited(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.contains(&h.trim().to_lowercase().as_str()))
    };
    let text_col = find(&["query", "text", "sentence", "utterance"]).ok_or_else(|| {
        Error::Format(format!("{}: no query/text column in header", path.display()))
    })?;
    let intent_col = find(&["intent", "label"]).ok_or_else(|| {
        Error::Format(format!("{}: no intent column in header", path.display()))
    })?;
    let mut d = LabeledDataset::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let raw = record.get(text_col).unwrap_or("");
        let text: Vec<&str> = raw
            .split_whitespace()
            .filter(|t| *t != "BOS" && *t != "EOS")
            .collect();
        let intent = record.get(intent_col).unwrap_or("").trim();
        let example = LabeledExample::new(text.join(" "), intent).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        d.push(example);
    }
    Ok(d)
}

/// Keeps only intents that occur in both splits.
pub fn restrict_to_shared_intents(train: &LabeledDataset, test: &LabeledDataset) -> AtisCorpus {
    let test_labels: BTreeSet<&String> = test.labels().iter().collect();
    let train_labels: BTreeSet<&String> = train.labels().iter().collect();
    let keep: BTreeSet<String> = train_labels
        .intersection(&test_labels)
        .map(|s| s.to_string())
        .collect();
    let mut dropped: Vec<String> = train_labels
        .union(&test_labels)
        .filter(|l| !keep.contains(l.as_str()))
        .map(|s| s.to_string())
        .collect();
    dropped.sort();
    AtisCorpus {
        train: train.filter(|e| keep.contains(&e.intent)),
        test: test.filter(|e| keep.contains(&e.intent)),
        dropped,
    }
}

pub fn load_atis(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<AtisCorpus> {
    let train = read_delimited(train)?;
    let test = read_delimited(test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Format("ATIS split without any rows".into()));
    }
    Ok(restrict_to_shared_intents(&train, &test))
}

/// Moves the first `n_per_intent` examples of every intent (in file order)
/// into a validation set.
pub fn make_validation_split(
    d: &LabeledDataset,
    n_per_intent: usize,
) -> Result<(LabeledDataset, LabeledDataset)> {
    for (label, count) in d.counts() {
        if count < n_per_intent {
            return Err(Error::Split {
                intent: label,
                available: count,
                requested: n_per_intent,
            });
        }
    }
    let mut taken: HashMap<&str, usize> = HashMap::new();
    let mut train = LabeledDataset::new();
    let mut valid = LabeledDataset::new();
    for e in d.examples() {
        let t = taken.entry(e.intent.as_str()).or_insert(0);
        if *t < n_per_intent {
            *t += 1;
            valid.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((train, valid))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen_labels: BTreeSet<String>,
    pub unseen_labels: BTreeSet<String>,
    pub validation_per_intent: usize,
}

impl SplitSpec {
    /// Every label of `d` not listed as unseen is seen.
    pub fn holding_out(d: &LabeledDataset, unseen: &[&str], validation_per_intent: usize) -> Self {
        let unseen_labels: BTreeSet<String> = unseen.iter().map(|s| s.to_string()).collect();
        let seen_labels = d
            .labels()
            .iter()
            .filter(|l| !unseen_labels.contains(*l))
            .cloned()
            .collect();
        SplitSpec {
            seen_labels,
            unseen_labels,
            validation_per_intent,
        }
    }
}

/// Routes examples by label. Labels of `d` mentioned in neither set go to
/// the seen side when the seen set is empty, and are dropped otherwise.
pub fn partition_seen_unseen(
    d: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if let Some(both) = spec.seen_labels.intersection(&spec.unseen_labels).next() {
        return Err(Error::Config(format!("`{both}` is both seen and unseen")));
    }
    for l in spec.seen_labels.iter().chain(&spec.unseen_labels) {
        if d.label_id(l).is_none() {
            return Err(Error::Config(format!("label `{l}` does not occur in the dataset")));
        }
    }
    let mut seen = LabeledDataset::new();
    let mut unseen = LabeledDataset::new();
    for e in d.examples() {
        if spec.unseen_labels.contains(&e.intent) {
            unseen.push(e.clone());
        } else if spec.seen_labels.is_empty() || spec.seen_labels.contains(&e.intent) {
            seen.push(e.clone());
        }
    }
    Ok((seen, unseen))
}

/// Draws `n` examples without replacement, with per-intent quotas
/// proportional to the intent sizes (largest remainder), so a single-intent
/// pool is a plain uniform draw. The output keeps the input order.
pub fn subsample_unseen(unseen: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n > unseen.len() {
        return Err(Error::Range(format!(
            "cannot draw {n} examples from {}",
            unseen.len()
        )));
    }
    if n == unseen.len() {
        return Ok(unseen.clone());
    }
    let counts = unseen.counts();
    let total = unseen.len();
    let mut quotas: Vec<(usize, usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, (_, c))| (i, c * n / total, (c * n) % total))
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in by_remainder.iter().cycle() {
        if assigned == n {
            break;
        }
        if quotas[i].1 < counts[i].1 {
            quotas[i].1 += 1;
            assigned += 1;
        }
    }
    let mut rng = seeded_rng(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for (label_idx, quota, _) in quotas {
        let label = &counts[label_idx].0;
        let mut pool: Vec<usize> = unseen
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.intent == label)
            .map(|(i, _)| i)
            .collect();
        pool.shuffle(&mut rng);
        chosen.extend(pool.into_iter().take(quota));
    }
    chosen.sort_unstable();
    Ok(LabeledDataset::from_examples(
        chosen.into_iter().map(|i| unseen.examples()[i].clone()),
    ))
}

/// Conversion summary written next to converted files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConversionReport {
    pub format: String,
    pub splits: BTreeMap<String, SplitCounts>,
    pub dropped_intents: Vec<String>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitCounts {
    pub total: usize,
    pub intents: usize,
    pub per_intent: BTreeMap<String, usize>,
}

impl SplitCounts {
    pub fn of(d: &LabeledDataset) -> Self {
        SplitCounts {
            total: d.len(),
            intents: d.labels().len(),
            per_intent: d.counts().into_iter().collect(),
        }
    }
}

/// Converts the SNIPS layout to `train.jsonl`, `valid.jsonl`, `test.jsonl`.
pub fn convert_snips(
    root: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    validation_per_intent: usize,
) -> Result<ConversionReport> {
    let corpus = load_snips(root)?;
    let (train, valid) = make_validation_split(&corpus.train, validation_per_intent)?;
    write_splits(
        "snips",
        out_dir.as_ref(),
        &[("train", &train), ("valid", &valid), ("test", &corpus.test)],
        Vec::new(),
    )
}

pub fn convert_atis(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<ConversionReport> {
    let corpus = load_atis(train, test)?;
    write_splits(
        "atis",
        out_dir.as_ref(),
        &[("train", &corpus.train), ("test", &corpus.test)],
        corpus.dropped,
    )
}

fn write_splits(
    format: &str,
    out_dir: &Path,
    splits: &[(&str, &LabeledDataset)],
    dropped_intents: Vec<String>,
) -> Result<ConversionReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut report = ConversionReport {
        format: format.to_string(),
        splits: BTreeMap::new(),
        dropped_intents,
        files: Vec::new(),
    };
    for (name, d) in splits {
        let path = out_dir.join(format!("{name}.jsonl"));
        d.write_jsonl(&path)?;
        report.splits.insert(name.to_string(), SplitCounts::of(d));
        report.files.push(path);
    }
    let report_path = out_dir.join("conversion.json");
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}
