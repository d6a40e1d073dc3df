use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use intent_space::model::{BasisForm, ModelConfig, ScorerKind, SpaceMode};
use intent_space::training::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{Category, Failure};

/// One experiment definition, read from a TOML file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub embeddings: EmbeddingSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub run: RunSection,
    /// Hash of the file as written (paths unresolved).
    #[serde(skip)]
    digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Sentences per intent moved from `train` to validation when no
    /// validation file is given.
    #[serde(default)]
    pub validation_per_intent: usize,
    /// Intents held out of seen training.
    #[serde(default)]
    pub unseen: Vec<String>,
    /// Unseen training sentences used for extension; all when absent.
    pub unseen_train_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub path: PathBuf,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden size; the embedding dimension when absent.
    pub hidden: Option<usize>,
    /// `full-matrix`, `reduced-rank` or `vector-bias`.
    pub form: String,
    pub rank: Option<usize>,
    pub mode: SpaceMode,
    pub scorer: ScorerKind,
    pub init_scale: f64,
    pub one_hot_logit: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(1, 1);
        ModelSection {
            hidden: None,
            form: "full-matrix".into(),
            rank: None,
            mode: base.mode,
            scorer: base.scorer,
            init_scale: base.init_scale,
            one_hot_logit: base.one_hot_logit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    /// Seeds model initialisation and training; overrides `training.seed`.
    pub seed: u64,
    /// Fit expansion matrices when adding intents.
    pub omega: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: PathBuf::from("runs"),
            seed: 0,
            omega: true,
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides and resolves
    /// relative paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Category::Io, format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Failure::new(Category::Config, format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Failure::new(Category::Config, format!("{}: {e}", path.display())))?;
        cfg.training.seed = cfg.run.seed;
        cfg.digest = cfg.compute_hash()?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = parent.canonicalize().unwrap_or_else(|_| parent.to_path_buf());
        cfg.resolve(&base);
        cfg.model_config()?;
        cfg.training
            .validate()
            .map_err(|e| Failure::new(Category::Config, format!("[training] {e}")))?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        self.data.valid.as_mut().map(fix);
        self.data.test.as_mut().map(fix);
        fix(&mut self.embeddings.path);
        fix(&mut self.run.output_dir);
    }

    /// Fails with a path error naming the first input that does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        let mut inputs = vec![("data.train", &self.data.train), ("embeddings.path", &self.embeddings.path)];
        if let Some(p) = &self.data.valid {
            inputs.push(("data.valid", p));
        }
        if let Some(p) = &self.data.test {
            inputs.push(("data.test", p));
        }
        for (key, p) in inputs {
            if !p.is_file() {
                return Err(Failure::new(Category::Io, format!("{key}: {} does not exist", p.display())).into());
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let form = match (m.form.as_str(), m.rank) {
            ("full-matrix", None) => BasisForm::FullMatrix,
            ("vector-bias", None) => BasisForm::VectorBias,
            ("reduced-rank", Some(rank)) if rank > 0 => BasisForm::ReducedRank { rank },
            ("reduced-rank", _) => return Err(config("[model] reduced-rank needs a positive `rank`")),
            ("full-matrix" | "vector-bias", Some(_)) => return Err(config("[model] `rank` only applies to reduced-rank")),
            (other, _) => return Err(config(&format!("[model] unknown form `{other}`"))),
        };
        if self.embeddings.dim == 0 {
            return Err(config("[embeddings] dim must be positive"));
        }
        let hidden = m.hidden.unwrap_or(self.embeddings.dim);
        if hidden == 0 {
            return Err(config("[model] hidden must be positive"));
        }
        Ok(ModelConfig {
            hidden,
            input_dim: self.embeddings.dim,
            form,
            mode: m.mode,
            scorer: m.scorer,
            init_scale: m.init_scale,
            one_hot_logit: m.one_hot_logit,
            seed: self.run.seed,
        })
    }

    /// First 12 hex digits of a SHA-256 over the configuration as written,
    /// ignoring the seed and output directory.
    pub fn hash(&self) -> Result<String> {
        if self.digest.is_empty() {
            self.compute_hash()
        } else {
            Ok(self.digest.clone())
        }
    }

    fn compute_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.run.seed = 0;
        c.training.seed = 0;
        c.run.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&c).context("serialising config")?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(hex::encode(digest)[..12].to_string())
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.run.output_dir.join(format!("{}-s{}", self.hash()?, self.run.seed)))
    }
}

fn config(msg: &str) -> anyhow::Error {
    Failure::new(Category::Config, msg.to_string()).into()
}

/// Sets `a.b.c=value` in `table`. The value is parsed as TOML and falls back
/// to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config(&format!("override `{spec}` is not of the form key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config(&format!("override key `{key}` is malformed")));
    }
    let (last, parents) = parts.split_last().expect("non-empty split");
    let mut here = table;
    for p in parents {
        let entry = here
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        here = entry
            .as_table_mut()
            .ok_or_else(|| config(&format!("override `{key}`: `{p}` is not a section")))?;
    }
    here.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\ntrain = \"t.jsonl\"\n[embeddings]\npath = \"e.txt\"\ndim = 4\n";

    fn load_str(text: &str, overrides: &[&str]) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(&p, &o)
    }

    #[test]
    fn defaults_and_overrides() {
        let c = load_str(MINIMAL, &["training.epsilon=0.5", "run.seed=3", "data.unseen=[\"A\"]"]).unwrap();
        assert_eq!(c.training.epsilon, 0.5);
        assert_eq!(c.training.seed, 3);
        assert_eq!(c.data.unseen, vec!["A".to_string()]);
        assert_eq!(c.model_config().unwrap().hidden, 4);
        assert!(c.data.train.is_absolute());
    }

    #[test]
    fn hash_ignores_seed_but_not_settings() {
        let a = load_str(MINIMAL, &["run.seed=1"]).unwrap();
        let b = load_str(MINIMAL, &["run.seed=2"]).unwrap();
        let c = load_str(MINIMAL, &["training.zeta=0.5"]).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 12);
        assert!(a.run_dir().unwrap().ends_with(format!("{}-s1", a.hash().unwrap())));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = load_str(MINIMAL, &["model.hiden=3"]).unwrap_err();
        assert!(err.to_string().contains("hiden"), "{err}");
        let err = load_str(MINIMAL, &["model.form=reduced-rank"]).unwrap_err();
        assert!(err.to_string().contains("rank"), "{err}");
        assert!(load_str(MINIMAL, &["training.batch_size=0"]).is_err());
        assert!(load_str(MINIMAL, &["nonsense"]).is_err());
    }
}
