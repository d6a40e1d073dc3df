//! JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so a saved model reloads bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BasisForm, IntentSpaceModel, SpaceMode};

pub const CHECKPOINT_FORMAT: &str = "intent-space-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden: usize,
    pub input_dim: usize,
    pub bases: usize,
    pub intents: usize,
    pub form: BasisForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub mode: SpaceMode,
    pub labels: Vec<String>,
    pub model: IntentSpaceModel,
    /// Free-form run information (hyper-parameters of the phase that
    /// produced the model, for instance).
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(model: IntentSpaceModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: Dims {
                hidden: model.hidden,
                input_dim: model.input_dim,
                bases: model.basis_count(),
                intents: model.intents(),
                form: model.bases.form(),
            },
            mode: model.mode(),
            labels: model.labels.clone(),
            model,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if !all_finite(&self.model) {
            return Err(Error::Numeric("refusing to save non-finite parameters".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.model.validate()?;
        let m = &ck.model;
        let header_ok = ck.dims.hidden == m.hidden
            && ck.dims.input_dim == m.input_dim
            && ck.dims.bases == m.basis_count()
            && ck.dims.intents == m.intents()
            && ck.dims.form == m.bases.form()
            && ck.mode == m.mode()
            && ck.labels == m.labels;
        if !header_ok {
            return Err(Error::Format("checkpoint header disagrees with its tensors".into()));
        }
        Ok(ck)
    }
}

fn all_finite(m: &IntentSpaceModel) -> bool {
    let mut probe = m.clone();
    probe
        .blocks_mut()
        .into_iter()
        .all(|(_, s)| s.iter().all(|x| x.is_finite()))
        && m.h0.is_finite()
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let text = ck.to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{seeded_rng, Matrix};
    use crate::model::{ModelConfig, ScorerKind};

    fn bits(m: &IntentSpaceModel) -> Vec<u64> {
        let mut m = m.clone();
        m.blocks_mut()
            .into_iter()
            .flat_map(|(_, s)| s.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for form in [BasisForm::FullMatrix, BasisForm::ReducedRank { rank: 2 }, BasisForm::VectorBias] {
            let mut cfg = ModelConfig::new(5, 3);
            cfg.form = form;
            cfg.scorer = ScorerKind::PerIntent;
            cfg.seed = 17;
            let mut m = IntentSpaceModel::new(&cfg, vec!["a".into(), "b".into()]).unwrap();
            let mut rng = seeded_rng(3);
            m.coords.beta = Matrix::random(2, 2, 3.0, &mut rng);
            if form != BasisForm::VectorBias {
                m.expand_intent(1).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.json");
            save_checkpoint(&p, &Checkpoint::new(m.clone())).unwrap();
            let back = load_checkpoint(&p).unwrap();
            assert_eq!(bits(&back.model), bits(&m));
            assert_eq!(back.model, m);
            // saving again yields the same bytes
            let p2 = dir.path().join("m2.json");
            save_checkpoint(&p2, &back).unwrap();
            assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn rejects_bad_files() {
        let m = IntentSpaceModel::new(&ModelConfig::new(3, 3), vec!["a".into()]).unwrap();
        let mut ck = Checkpoint::new(m);
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
        assert!(Checkpoint::from_json("{").is_err());
        ck.version = CHECKPOINT_VERSION;
        ck.dims.hidden = 4;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Format(_))));
    }
}
