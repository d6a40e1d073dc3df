//! The intent-space classifier.
//!
//! Every intent `c` owns a point `α_c` over `B` shared bases. The recurrent
//! matrix used for intent `c` is composed from the bases
//!
//! ```text
//! U_c = Σ_b α_{c,b} Ω_{c,b} W_b        (Ω_{c,b} = I unless c is expanded)
//! ```
//!
//! and each intent runs its own recurrence
//! `h_{c,t} = σ(U_c h_{c,t-1} + V x_t + b)`. The final states are scored with
//! `S_c = σ(aᵀ h_{c,T} + d)` (shared or per-intent `a`, `d`) and the scores are
//! normalised by their sum. Because the normaliser runs over whatever intents
//! the model holds, new intents can be appended without touching old ones.

mod baseline;
mod checkpoint;
mod params;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use baseline::{baseline_forward, BaselineGradients, BaselineRnn};
pub use params::{BlockId, ParamGroup};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Dims, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::math::{self, dot, seeded_rng, sigmoid, softmax, uniform, Matrix, SeededRng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceMode {
    Euclidean,
    Simplex,
}

/// Which shape the bases take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form")]
pub enum BasisForm {
    FullMatrix,
    ReducedRank { rank: usize },
    VectorBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Shared,
    PerIntent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form")]
pub enum BasisSet {
    /// `W_b ∈ R^{H×H}`.
    FullMatrix { bases: Vec<Matrix> },
    /// `W_b = Σ_k w_{b,k} w_{b,k}ᵀ`; `factors[b][k]` is `w_{b,k}`.
    ReducedRank { rank: usize, factors: Vec<Vec<Vector>> },
    /// Intent-dependent bias `u_c = Σ_b α_{c,b} w_b` added to `b`, with one
    /// shared recurrent matrix.
    VectorBias { recurrent: Matrix, bases: Vec<Vector> },
}

impl BasisSet {
    pub fn count(&self) -> usize {
        match self {
            BasisSet::FullMatrix { bases } => bases.len(),
            BasisSet::ReducedRank { factors, .. } => factors.len(),
            BasisSet::VectorBias { bases, .. } => bases.len(),
        }
    }

    pub fn form(&self) -> BasisForm {
        match self {
            BasisSet::FullMatrix { .. } => BasisForm::FullMatrix,
            BasisSet::ReducedRank { rank, .. } => BasisForm::ReducedRank { rank: *rank },
            BasisSet::VectorBias { .. } => BasisForm::VectorBias,
        }
    }

    /// Materialises matrix bases (`None` for the vector form).
    pub fn dense(&self) -> Option<Vec<Matrix>> {
        match self {
            BasisSet::FullMatrix { bases } => Some(bases.clone()),
            BasisSet::ReducedRank { factors, .. } => Some(
                factors
                    .iter()
                    .map(|fs| {
                        let h = fs[0].dim();
                        let mut w = Matrix::zeros(h, h);
                        for f in fs {
                            w.add_outer(1.0, f, f);
                        }
                        w
                    })
                    .collect(),
            ),
            BasisSet::VectorBias { .. } => None,
        }
    }
}

/// Unnormalised coordinates, one row per intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateBlock {
    pub beta: Matrix,
    pub mode: SpaceMode,
}

impl CoordinateBlock {
    pub fn intents(&self) -> usize {
        self.beta.rows()
    }

    pub fn bases(&self) -> usize {
        self.beta.cols()
    }

    /// Softmax of the row in simplex spaces, the raw row otherwise.
    pub fn normalized(&self, c: usize) -> Vector {
        let row = self.beta.row(c);
        match self.mode {
            SpaceMode::Simplex => softmax(row),
            SpaceMode::Euclidean => Vector::from(row.to_vec()),
        }
    }

    pub fn normalized_matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..self.intents())
            .map(|c| self.normalized(c).into_inner())
            .collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, self.bases()))
    }
}

pub fn normalize_coordinates(coords: &CoordinateBlock, c: usize) -> Vector {
    coords.normalized(c)
}

/// Per-intent expansion matrices, present only for expanded intents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionBlock {
    pub by_intent: BTreeMap<usize, Vec<Matrix>>,
}

impl ExpansionBlock {
    pub fn get(&self, c: usize) -> Option<&[Matrix]> {
        self.by_intent.get(&c).map(Vec::as_slice)
    }

    pub fn is_expanded(&self, c: usize) -> bool {
        self.by_intent.contains_key(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScorerParams {
    Shared { a: Vector, d: f64 },
    PerIntent { a: Matrix, d: Vector },
}

impl ScorerParams {
    pub fn kind(&self) -> ScorerKind {
        match self {
            ScorerParams::Shared { .. } => ScorerKind::Shared,
            ScorerParams::PerIntent { .. } => ScorerKind::PerIntent,
        }
    }

    pub fn weights(&self, c: usize) -> &[f64] {
        match self {
            ScorerParams::Shared { a, .. } => a,
            ScorerParams::PerIntent { a, .. } => a.row(c),
        }
    }

    pub fn offset(&self, c: usize) -> f64 {
        match self {
            ScorerParams::Shared { d, .. } => *d,
            ScorerParams::PerIntent { d, .. } => d[c],
        }
    }
}

/// Construction parameters for a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub input_dim: usize,
    pub form: BasisForm,
    pub mode: SpaceMode,
    pub scorer: ScorerKind,
    /// Half-width of the uniform noise used for random initialisation.
    pub init_scale: f64,
    /// Logit given to the own basis when one-hot coordinates are encoded in
    /// a simplex space (softmax cannot reach an exact one-hot point).
    pub one_hot_logit: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(hidden: usize, input_dim: usize) -> Self {
        ModelConfig {
            hidden,
            input_dim,
            form: BasisForm::FullMatrix,
            mode: SpaceMode::Simplex,
            scorer: ScorerKind::Shared,
            init_scale: 0.05,
            one_hot_logit: 8.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpaceModel {
    pub hidden: usize,
    pub input_dim: usize,
    /// Input projection `V` (H × d_in).
    pub input: Matrix,
    pub bias: Vector,
    pub bases: BasisSet,
    pub coords: CoordinateBlock,
    pub expansions: ExpansionBlock,
    pub scorer: ScorerParams,
    pub labels: Vec<String>,
    /// Number of intents present when seen-intent training ran.
    pub seen_count: usize,
    pub h0: Vector,
}

impl IntentSpaceModel {
    /// Builds a model with one basis per label and one-hot coordinates.
    pub fn new(cfg: &ModelConfig, labels: Vec<String>) -> Result<Self> {
        let h = cfg.hidden;
        let n = labels.len();
        if h == 0 || cfg.input_dim == 0 {
            return Err(Error::Config("hidden and input sizes must be positive".into()));
        }
        if n == 0 {
            return Err(Error::Config("a model needs at least one intent".into()));
        }
        let mut rng = seeded_rng(cfg.seed);
        let s = cfg.init_scale;
        let input = if h == cfg.input_dim {
            Matrix::identity(h)
        } else {
            Matrix::random(h, cfg.input_dim, 1.0 / (cfg.input_dim as f64).sqrt(), &mut rng)
        };
        let bias = Vector::random(h, s, &mut rng);
        let noisy_identity = |rng: &mut SeededRng| {
            let mut w = Matrix::identity(h);
            for x in w.data_mut() {
                *x += uniform(rng, s);
            }
            w
        };
        let bases = match cfg.form {
            BasisForm::FullMatrix => BasisSet::FullMatrix {
                bases: (0..n).map(|_| noisy_identity(&mut rng)).collect(),
            },
            BasisForm::ReducedRank { rank } => {
                if rank == 0 {
                    return Err(Error::Config("reduced rank must be at least 1".into()));
                }
                let scale = (3.0 / h as f64).sqrt();
                BasisSet::ReducedRank {
                    rank,
                    factors: (0..n)
                        .map(|_| (0..rank).map(|_| Vector::random(h, scale, &mut rng)).collect())
                        .collect(),
                }
            }
            BasisForm::VectorBias => BasisSet::VectorBias {
                recurrent: noisy_identity(&mut rng),
                bases: (0..n).map(|_| Vector::random(h, s, &mut rng)).collect(),
            },
        };
        let hot = match cfg.mode {
            SpaceMode::Euclidean => 1.0,
            SpaceMode::Simplex => cfg.one_hot_logit,
        };
        let mut beta = Matrix::zeros(n, n);
        for c in 0..n {
            beta.set(c, c, hot);
        }
        let scorer = match cfg.scorer {
            ScorerKind::Shared => ScorerParams::Shared {
                a: Vector::random(h, s, &mut rng),
                d: uniform(&mut rng, s),
            },
            ScorerKind::PerIntent => ScorerParams::PerIntent {
                a: Matrix::random(n, h, s, &mut rng),
                d: Vector::random(n, s, &mut rng),
            },
        };
        let model = IntentSpaceModel {
            hidden: h,
            input_dim: cfg.input_dim,
            input,
            bias,
            bases,
            coords: CoordinateBlock {
                beta,
                mode: cfg.mode,
            },
            expansions: ExpansionBlock::default(),
            scorer,
            labels,
            seen_count: n,
            h0: Vector::zeros(h),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn intents(&self) -> usize {
        self.labels.len()
    }

    pub fn basis_count(&self) -> usize {
        self.bases.count()
    }

    pub fn mode(&self) -> SpaceMode {
        self.coords.mode
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Checks every shape invariant.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        let c = self.labels.len();
        let shape = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Shape(what.to_string()))
            }
        };
        shape(self.input.rows() == h && self.input.cols() == self.input_dim, "input matrix")?;
        shape(self.bias.dim() == h, "bias")?;
        shape(self.h0.dim() == h, "initial state")?;
        let b = self.bases.count();
        shape(b >= 1, "at least one basis")?;
        match &self.bases {
            BasisSet::FullMatrix { bases } => {
                shape(bases.iter().all(|w| w.rows() == h && w.cols() == h), "basis matrix")?
            }
            BasisSet::ReducedRank { rank, factors } => shape(
                *rank >= 1
                    && factors
                        .iter()
                        .all(|fs| fs.len() == *rank && fs.iter().all(|f| f.dim() == h)),
                "reduced-rank factors",
            )?,
            BasisSet::VectorBias { recurrent, bases } => shape(
                recurrent.rows() == h && recurrent.cols() == h && bases.iter().all(|w| w.dim() == h),
                "vector bases",
            )?,
        }
        shape(self.coords.beta.rows() == c && self.coords.beta.cols() == b, "coordinates")?;
        for (&i, oms) in &self.expansions.by_intent {
            shape(
                i < c && oms.len() == b && oms.iter().all(|o| o.rows() == h && o.cols() == h),
                "expansion matrices",
            )?;
        }
        match &self.scorer {
            ScorerParams::Shared { a, .. } => shape(a.dim() == h, "scorer weights")?,
            ScorerParams::PerIntent { a, d } => shape(
                a.rows() == c && a.cols() == h && d.dim() == c,
                "per-intent scorer",
            )?,
        }
        shape(self.seen_count <= c, "seen intent count")?;
        Ok(())
    }

    /// Appends an intent whose normalised coordinates are uniform over the
    /// bases. Per-intent scorers get a seeded random row.
    pub fn push_intent(&mut self, label: &str, init_scale: f64, rng: &mut SeededRng) -> Result<usize> {
        if self.label_id(label).is_some() {
            return Err(Error::Config(format!("intent `{label}` already exists")));
        }
        let b = self.basis_count();
        let row = match self.coords.mode {
            SpaceMode::Simplex => vec![0.0; b],
            SpaceMode::Euclidean => vec![1.0 / b as f64; b],
        };
        self.coords.beta.push_row(&row)?;
        if let ScorerParams::PerIntent { a, d } = &mut self.scorer {
            let w = Vector::random(self.hidden, init_scale, rng);
            a.push_row(&w)?;
            let mut ds = std::mem::take(d).into_inner();
            ds.push(uniform(rng, init_scale));
            *d = Vector::from(ds);
        }
        self.labels.push(label.to_string());
        Ok(self.labels.len() - 1)
    }

    /// Gives intent `c` identity expansion matrices for every basis.
    pub fn expand_intent(&mut self, c: usize) -> Result<()> {
        if matches!(self.bases, BasisSet::VectorBias { .. }) {
            return Err(Error::UnsupportedForm(
                "expansion matrices need matrix bases".into(),
            ));
        }
        if c >= self.intents() {
            return Err(Error::Range(format!("intent {c} does not exist")));
        }
        let h = self.hidden;
        self.expansions
            .by_intent
            .entry(c)
            .or_insert_with(|| (0..self.bases.count()).map(|_| Matrix::identity(h)).collect());
        Ok(())
    }

    pub fn project_inputs<X: AsRef<[f64]>>(&self, sentence: &[X]) -> Result<Vec<Vector>> {
        sentence
            .iter()
            .map(|x| self.input.matvec(x.as_ref()))
            .collect()
    }
}

/// `U_c` for matrix bases.
pub fn compose_recurrent(model: &IntentSpaceModel, c: usize) -> Result<Matrix> {
    check_intent(model, c)?;
    let dense = model
        .bases
        .dense()
        .ok_or_else(|| Error::UnsupportedForm("vector bases compose a bias; use compose_bias".into()))?;
    let alpha = model.coords.normalized(c);
    Ok(compose_with(&dense, &alpha, model.expansions.get(c)).0)
}

/// `u_c = Σ_b α_{c,b} w_b` for vector bases.
pub fn compose_bias(model: &IntentSpaceModel, c: usize) -> Result<Vector> {
    check_intent(model, c)?;
    match &model.bases {
        BasisSet::VectorBias { bases, .. } => {
            let alpha = model.coords.normalized(c);
            let mut u = Vector::zeros(model.hidden);
            for (a, w) in alpha.iter().zip(bases) {
                if *a != 0.0 {
                    math::axpy(*a, w, &mut u);
                }
            }
            Ok(u)
        }
        _ => Err(Error::UnsupportedForm("matrix bases compose a recurrent matrix".into())),
    }
}

fn check_intent(model: &IntentSpaceModel, c: usize) -> Result<()> {
    if c >= model.intents() {
        Err(Error::Range(format!(
            "intent {c} out of range for a model with {} intents",
            model.intents()
        )))
    } else {
        Ok(())
    }
}

/// Returns `Σ_b α_b M_b W_b` and, when expansions are present, the products
/// `M_b W_b` (needed for coordinate gradients).
fn compose_with(
    dense: &[Matrix],
    alpha: &[f64],
    expansions: Option<&[Matrix]>,
) -> (Matrix, Option<Vec<Matrix>>) {
    let h = dense[0].rows();
    let mut u = Matrix::zeros(h, h);
    match expansions {
        None => {
            for (a, w) in alpha.iter().zip(dense) {
                if *a != 0.0 {
                    u.add_scaled(*a, w);
                }
            }
            (u, None)
        }
        Some(oms) => {
            let products: Vec<Matrix> = oms
                .iter()
                .zip(dense)
                .map(|(o, w)| o.matmul(w).expect("square matrices of equal size"))
                .collect();
            for (a, p) in alpha.iter().zip(&products) {
                if *a != 0.0 {
                    u.add_scaled(*a, p);
                }
            }
            (u, Some(products))
        }
    }
}

/// Intent-resolved parameters for one parameter snapshot.
///
/// Entries are `None` for intents that were not requested.
#[derive(Debug, Clone)]
pub(crate) struct Composed {
    pub alpha: Vec<Vector>,
    pub recurrent: Vec<Option<Matrix>>,
    pub bias: Vec<Option<Vector>>,
    /// Dense bases (materialised for the reduced-rank form).
    pub dense: Option<Vec<Matrix>>,
    /// `Ω_{c,b} W_b` for expanded intents.
    pub expanded: Vec<Option<Vec<Matrix>>>,
}

impl Composed {
    pub fn new(model: &IntentSpaceModel, wanted: &[bool]) -> Self {
        let n = model.intents();
        let alpha: Vec<Vector> = (0..n).map(|c| model.coords.normalized(c)).collect();
        let dense = model.bases.dense();
        let mut recurrent = vec![None; n];
        let mut bias = vec![None; n];
        let mut expanded = vec![None; n];
        for c in (0..n).filter(|&c| wanted[c]) {
            match (&model.bases, &dense) {
                (BasisSet::VectorBias { recurrent: shared, bases }, _) => {
                    let mut b = model.bias.clone();
                    for (a, w) in alpha[c].iter().zip(bases) {
                        if *a != 0.0 {
                            math::axpy(*a, w, &mut b);
                        }
                    }
                    recurrent[c] = Some(shared.clone());
                    bias[c] = Some(b);
                }
                (_, Some(d)) => {
                    let (u, prods) = compose_with(d, &alpha[c], model.expansions.get(c));
                    recurrent[c] = Some(u);
                    bias[c] = Some(model.bias.clone());
                    expanded[c] = prods;
                }
                (_, None) => unreachable!("matrix bases always materialise"),
            }
        }
        Composed {
            alpha,
            recurrent,
            bias,
            dense,
            expanded,
        }
    }
}

/// History states `h_{c,0..T}` of one intent-dependent recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<Vector>,
}

impl Trace {
    pub fn last(&self) -> &Vector {
        self.states.last().expect("a trace always holds h0")
    }
}

pub(crate) fn run_recurrence(u: &Matrix, bias: &[f64], projected: &[Vector], h0: &[f64]) -> Trace {
    let h = h0.len();
    let mut states = Vec::with_capacity(projected.len() + 1);
    states.push(Vector::from(h0.to_vec()));
    let mut pre = vec![0.0; h];
    for vx in projected {
        u.matvec_into(states.last().unwrap(), &mut pre);
        let next: Vec<f64> = pre
            .iter()
            .zip(vx.iter())
            .zip(bias)
            .map(|((p, x), b)| sigmoid(p + x + b))
            .collect();
        states.push(Vector::from(next));
    }
    Trace { states }
}

/// Runs intent `c`'s recurrence over `sentence`, returning `h_{c,T}` and the
/// full trace.
pub fn forward_intent<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    sentence: &[X],
    c: usize,
) -> Result<(Vector, Trace)> {
    check_intent(model, c)?;
    if sentence.is_empty() {
        return Err(Error::EmptyInput("sentence has no words".into()));
    }
    let projected = model.project_inputs(sentence)?;
    let mut wanted = vec![false; model.intents()];
    wanted[c] = true;
    let composed = Composed::new(model, &wanted);
    let trace = run_recurrence(
        composed.recurrent[c].as_ref().unwrap(),
        composed.bias[c].as_ref().unwrap(),
        &projected,
        &model.h0,
    );
    Ok((trace.last().clone(), trace))
}

/// `S(h_{c,T}) = σ(a_cᵀ h + d_c)`.
pub fn score(model: &IntentSpaceModel, h_final: &[f64], c: usize) -> f64 {
    sigmoid(dot(model.scorer.weights(c), h_final) + model.scorer.offset(c))
}

/// Raw scores of every intent on one sentence.
pub fn intent_scores<X: AsRef<[f64]>>(model: &IntentSpaceModel, sentence: &[X]) -> Result<Vector> {
    if sentence.is_empty() {
        return Err(Error::EmptyInput("sentence has no words".into()));
    }
    let projected = model.project_inputs(sentence)?;
    let composed = Composed::new(model, &vec![true; model.intents()]);
    Ok(scores_with(model, &composed, &projected))
}

pub(crate) fn scores_with(model: &IntentSpaceModel, composed: &Composed, projected: &[Vector]) -> Vector {
    (0..model.intents())
        .map(|c| {
            let trace = run_recurrence(
                composed.recurrent[c].as_ref().expect("intent composed"),
                composed.bias[c].as_ref().expect("intent composed"),
                projected,
                &model.h0,
            );
            score(model, trace.last(), c)
        })
        .collect::<Vec<f64>>()
        .into()
}

/// Scores divided by their sum.
pub fn normalize_scores(scores: &[f64]) -> Vector {
    let total: f64 = scores.iter().sum();
    scores.iter().map(|s| s / total).collect::<Vec<f64>>().into()
}

pub fn predict_distribution<X: AsRef<[f64]>>(model: &IntentSpaceModel, sentence: &[X]) -> Result<Vector> {
    Ok(normalize_scores(&intent_scores(model, sentence)?))
}

/// Reusable predictor that composes the intent matrices once.
pub struct Predictor<'a> {
    model: &'a IntentSpaceModel,
    composed: Composed,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a IntentSpaceModel) -> Self {
        Predictor {
            model,
            composed: Composed::new(model, &vec![true; model.intents()]),
        }
    }

    pub fn scores<X: AsRef<[f64]>>(&self, sentence: &[X]) -> Result<Vector> {
        if sentence.is_empty() {
            return Err(Error::EmptyInput("sentence has no words".into()));
        }
        let projected = self.model.project_inputs(sentence)?;
        Ok(scores_with(self.model, &self.composed, &projected))
    }

    pub fn distribution<X: AsRef<[f64]>>(&self, sentence: &[X]) -> Result<Vector> {
        Ok(normalize_scores(&self.scores(sentence)?))
    }
}

/// Natural-log entropy with `0 · log 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if let Some(p) = dist.iter().find(|p| **p < 0.0 || !p.is_finite()) {
        return Err(Error::Domain(format!("invalid probability {p}")));
    }
    Ok(-dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}
