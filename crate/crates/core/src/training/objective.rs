//! Objective terms and their gradients by backpropagation through time.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::math::{self, dot, softmax_backward, Matrix, Vector};
use crate::model::{run_recurrence, score, BasisSet, BlockId, Composed, IntentSpaceModel, SpaceMode, Trace};

use super::ParamSelector;

/// Precomputed per-sentence quantities that stay valid while `V` and the
/// first `frozen.len()` intents are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceCache {
    pub projected: Vec<Vector>,
    pub frozen: Vec<f64>,
}

impl SentenceCache {
    /// Caches `V x_t` and the scores of intents `0..frozen_intents`.
    pub fn build<X: AsRef<[f64]>>(model: &IntentSpaceModel, inputs: &[X], frozen_intents: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("sentence has no words".into()));
        }
        let projected = model.project_inputs(inputs)?;
        let mut wanted = vec![false; model.intents()];
        wanted[..frozen_intents].iter_mut().for_each(|w| *w = true);
        let composed = Composed::new(model, &wanted);
        let frozen = (0..frozen_intents)
            .map(|c| {
                let trace = intent_trace(model, &composed, c, &projected);
                score(model, trace.last(), c)
            })
            .collect();
        Ok(SentenceCache { projected, frozen })
    }
}

#[derive(Debug)]
pub struct Sentence<'a, X> {
    pub inputs: &'a [X],
    pub cache: Option<&'a SentenceCache>,
}

impl<X> Clone for Sentence<'_, X> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<X> Copy for Sentence<'_, X> {}

impl<'a, X> Sentence<'a, X> {
    pub fn new(inputs: &'a [X]) -> Self {
        Sentence { inputs, cache: None }
    }

    pub fn cached(inputs: &'a [X], cache: &'a SentenceCache) -> Self {
        Sentence {
            inputs,
            cache: Some(cache),
        }
    }
}

/// Which terms enter the objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveSpec {
    /// Weight of the rank-preservation term.
    pub epsilon: f64,
    /// Weight of the coordinate term.
    pub zeta: f64,
    /// Intents treated as unseen by the rank-preservation term. Every other
    /// intent counts as seen.
    pub unseen: Vec<usize>,
    /// Intents whose coordinates enter the coordinate term.
    pub coord_intents: Vec<usize>,
}

impl ObjectiveSpec {
    pub fn nll_only() -> Self {
        ObjectiveSpec::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub nll: f64,
    pub rank: f64,
    pub coords: f64,
    pub total: f64,
}

impl ObjectiveTerms {
    /// Weighs the three components into `nll + ε·rank + ζ·coords`.
    pub fn combine(nll: f64, rank: f64, coords: f64, epsilon: f64, zeta: f64) -> Self {
        ObjectiveTerms {
            nll,
            rank,
            coords,
            total: nll + epsilon * rank + zeta * coords,
        }
    }
}

fn intent_trace(model: &IntentSpaceModel, composed: &Composed, c: usize, projected: &[Vector]) -> Trace {
    run_recurrence(
        composed.recurrent[c].as_ref().expect("intent composed"),
        composed.bias[c].as_ref().expect("intent composed"),
        projected,
        &model.h0,
    )
}

/// What gradient work each intent needs under a selector.
struct Needs {
    input: bool,
    bases: bool,
    scorer: Vec<bool>,
    coord: Vec<bool>,
    expansion: Vec<bool>,
    /// Backpropagation into the recurrence is needed.
    bptt: Vec<bool>,
    recurrent: Vec<bool>,
    bias: Vec<bool>,
}

impl Needs {
    fn new(model: &IntentSpaceModel, sel: &ParamSelector) -> Self {
        let n = model.intents();
        let vector = matches!(model.bases, BasisSet::VectorBias { .. });
        let input = sel.includes(BlockId::Input);
        let bases = sel.includes(BlockId::SharedRecurrent);
        let shared_scorer = sel.includes(BlockId::ScorerWeights(None));
        let mut needs = Needs {
            input,
            bases,
            scorer: vec![false; n],
            coord: vec![false; n],
            expansion: vec![false; n],
            bptt: vec![false; n],
            recurrent: vec![false; n],
            bias: vec![false; n],
        };
        for c in 0..n {
            needs.scorer[c] = match model.scorer {
                crate::model::ScorerParams::Shared { .. } => shared_scorer,
                crate::model::ScorerParams::PerIntent { .. } => sel.includes(BlockId::ScorerWeights(Some(c))),
            };
            needs.coord[c] = sel.includes(BlockId::Coord(c));
            needs.expansion[c] = model.expansions.is_expanded(c) && sel.includes(BlockId::Expansion(c, 0));
            needs.recurrent[c] = if vector {
                bases
            } else {
                bases || needs.coord[c] || needs.expansion[c]
            };
            needs.bias[c] = input || (vector && (bases || needs.coord[c]));
            needs.bptt[c] = input || needs.recurrent[c] || needs.bias[c];
        }
        needs
    }

    fn any(&self, c: usize) -> bool {
        self.bptt[c] || self.scorer[c]
    }
}

fn check_labels(model: &IntentSpaceModel, ids: &[usize], what: &str) -> Result<()> {
    match ids.iter().find(|&&c| c >= model.intents()) {
        Some(c) => Err(Error::Range(format!("{what} intent {c} is not in the model"))),
        None => Ok(()),
    }
}

/// Evaluates the objective and, when a selector is given, its gradient for
/// the selected blocks. Unselected blocks of the returned gradient are zero.
pub fn evaluate<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    labeled: &[(Sentence<'_, X>, usize)],
    reg: &[Sentence<'_, X>],
    spec: &ObjectiveSpec,
    selector: Option<&ParamSelector>,
) -> Result<(ObjectiveTerms, Option<IntentSpaceModel>)> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("objective needs at least one labelled sentence".into()));
    }
    let n = model.intents();
    let labels: Vec<usize> = labeled.iter().map(|(_, y)| *y).collect();
    check_labels(model, &labels, "label")?;
    check_labels(model, &spec.unseen, "unseen")?;
    check_labels(model, &spec.coord_intents, "coordinate")?;
    let use_rank = spec.epsilon != 0.0 && !spec.unseen.is_empty() && !reg.is_empty();
    let unseen_set: BTreeSet<usize> = spec.unseen.iter().copied().collect();
    let seen: Vec<usize> = (0..n).filter(|c| !unseen_set.contains(c)).collect();
    if use_rank && seen.is_empty() {
        return Err(Error::Config("rank preservation needs at least one seen intent".into()));
    }

    let needs = selector.map(|s| Needs::new(model, s));
    let grad_c: Vec<bool> = (0..n).map(|c| needs.as_ref().is_some_and(|nd| nd.any(c))).collect();
    let all_cached = |c: usize| {
        labeled
            .iter()
            .map(|(s, _)| s)
            .chain(reg.iter())
            .all(|s| s.cache.is_some_and(|k| c < k.frozen.len()))
    };
    let wanted: Vec<bool> = (0..n).map(|c| grad_c[c] || !all_cached(c)).collect();
    let composed = Composed::new(model, &wanted);

    let mut acc = needs.as_ref().map(|_| Accumulator::new(model));
    let mut terms = ObjectiveTerms::default();
    let w_nll = 1.0 / labeled.len() as f64;
    let w_rank = if use_rank {
        1.0 / (reg.len() * spec.unseen.len()) as f64
    } else {
        0.0
    };

    let mut visit = |sentence: &Sentence<'_, X>, label: Option<usize>| -> Result<()> {
        if sentence.inputs.is_empty() {
            return Err(Error::EmptyInput("sentence has no words".into()));
        }
        let owned;
        let projected: &[Vector] = match sentence.cache {
            Some(k) => &k.projected,
            None => {
                owned = model.project_inputs(sentence.inputs)?;
                &owned
            }
        };
        let mut traces: Vec<Option<Trace>> = vec![None; n];
        let mut s = vec![0.0; n];
        for c in 0..n {
            let cached = sentence.cache.and_then(|k| k.frozen.get(c).copied());
            match (grad_c[c], cached) {
                (false, Some(v)) => s[c] = v,
                _ => {
                    let trace = intent_trace(model, &composed, c, projected);
                    s[c] = score(model, trace.last(), c);
                    if grad_c[c] {
                        traces[c] = Some(trace);
                    }
                }
            }
        }
        let mut ds = vec![0.0; n];
        if let Some(y) = label {
            let total: f64 = s.iter().sum();
            terms.nll -= w_nll * (s[y] / total).ln();
            ds.iter_mut().for_each(|d| *d = w_nll / total);
            ds[y] -= w_nll / s[y];
        } else {
            let m = seen
                .iter()
                .copied()
                .max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a)))
                .expect("seen intents present");
            for &u in &spec.unseen {
                terms.rank -= w_rank * (s[m] / s[u]).ln();
                ds[u] += spec.epsilon * w_rank / s[u];
                ds[m] -= spec.epsilon * w_rank / s[m];
            }
        }
        if let (Some(acc), Some(nd)) = (acc.as_mut(), needs.as_ref()) {
            for c in (0..n).filter(|&c| grad_c[c] && ds[c] != 0.0) {
                let trace = traces[c].as_ref().expect("trace kept");
                let dpre = ds[c] * s[c] * (1.0 - s[c]);
                acc.backprop(model, &composed, nd, c, dpre, trace, sentence.inputs);
            }
        }
        Ok(())
    };

    for (sentence, y) in labeled {
        visit(sentence, Some(*y))?;
    }
    if use_rank {
        for sentence in reg {
            visit(sentence, None)?;
        }
    }

    let (coord_value, coord_grad) = coordinate_term(model, &composed, &spec.coord_intents);
    let rank_weight = if use_rank { spec.epsilon } else { 0.0 };
    let terms = ObjectiveTerms::combine(terms.nll, terms.rank, coord_value, rank_weight, spec.zeta);
    if !terms.total.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }

    let grads = match (acc, needs) {
        (Some(acc), Some(nd)) => {
            let mut dalpha = acc.dalpha.clone();
            for (c, g) in coord_grad {
                if nd.coord[c] {
                    math::axpy(spec.zeta, &g, &mut dalpha[c]);
                }
            }
            Some(acc.finish(model, &composed, &nd, dalpha))
        }
        _ => None,
    };
    Ok((terms, grads))
}

/// Coordinate term value and its gradient with respect to `α_c`.
fn coordinate_term(model: &IntentSpaceModel, composed: &Composed, intents: &[usize]) -> (f64, Vec<(usize, Vector)>) {
    if intents.is_empty() {
        return (0.0, Vec::new());
    }
    let b = model.basis_count() as f64;
    let w = 1.0 / intents.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(intents.len());
    for &c in intents {
        let alpha = &composed.alpha[c];
        let g: Vec<f64> = match model.mode() {
            SpaceMode::Simplex => {
                value += w * alpha
                    .iter()
                    .filter(|a| **a > 0.0)
                    .map(|a| a * (a * b).ln())
                    .sum::<f64>();
                alpha
                    .iter()
                    .map(|a| if *a > 0.0 { w * ((a * b).ln() + 1.0) } else { 0.0 })
                    .collect()
            }
            SpaceMode::Euclidean => {
                value += w * dot(alpha, alpha);
                alpha.iter().map(|a| 2.0 * w * a).collect()
            }
        };
        grads.push((c, Vector::from(g)));
    }
    (value, grads)
}

/// Raw per-intent gradients collected during backpropagation.
struct Accumulator {
    grads: IntentSpaceModel,
    d_recurrent: Vec<Option<Matrix>>,
    d_bias: Vec<Option<Vector>>,
    dalpha: Vec<Vector>,
}

impl Accumulator {
    fn new(model: &IntentSpaceModel) -> Self {
        let n = model.intents();
        Accumulator {
            grads: model.zeros_like(),
            d_recurrent: vec![None; n],
            d_bias: vec![None; n],
            dalpha: vec![Vector::zeros(model.basis_count()); n],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop<X: AsRef<[f64]>>(
        &mut self,
        model: &IntentSpaceModel,
        composed: &Composed,
        nd: &Needs,
        c: usize,
        dpre: f64,
        trace: &Trace,
        inputs: &[X],
    ) {
        let h_final = trace.last();
        if nd.scorer[c] {
            match &mut self.grads.scorer {
                crate::model::ScorerParams::Shared { a, d } => {
                    math::axpy(dpre, h_final, a);
                    *d += dpre;
                }
                crate::model::ScorerParams::PerIntent { a, d } => {
                    math::axpy(dpre, h_final, a.row_mut(c));
                    d[c] += dpre;
                }
            }
        }
        if !nd.bptt[c] {
            return;
        }
        let h = model.hidden;
        let u = composed.recurrent[c].as_ref().expect("intent composed");
        let mut dh: Vec<f64> = model.scorer.weights(c).iter().map(|a| a * dpre).collect();
        let mut delta = vec![0.0; h];
        for t in (1..trace.states.len()).rev() {
            let state = &trace.states[t];
            for i in 0..h {
                delta[i] = dh[i] * state[i] * (1.0 - state[i]);
            }
            if nd.recurrent[c] {
                self.d_recurrent[c]
                    .get_or_insert_with(|| Matrix::zeros(h, h))
                    .add_outer(1.0, &delta, &trace.states[t - 1]);
            }
            if nd.bias[c] {
                math::axpy(1.0, &delta, self.d_bias[c].get_or_insert_with(|| Vector::zeros(h)));
            }
            if nd.input {
                self.grads.input.add_outer(1.0, &delta, inputs[t - 1].as_ref());
            }
            if t > 1 {
                dh.iter_mut().for_each(|x| *x = 0.0);
                u.matvec_transposed_acc(&delta, &mut dh);
            }
        }
    }

    /// Chains the per-intent gradients into bases, coordinates and
    /// expansions.
    fn finish(mut self, model: &IntentSpaceModel, composed: &Composed, nd: &Needs, mut dalpha: Vec<Vector>) -> IntentSpaceModel {
        let n = model.intents();
        let mut d_dense: Option<Vec<Matrix>> = None;
        for c in 0..n {
            let alpha = &composed.alpha[c];
            if let Some(du) = &self.d_recurrent[c] {
                match &mut self.grads.bases {
                    BasisSet::VectorBias { recurrent, .. } => {
                        if nd.bases {
                            recurrent.add_scaled(1.0, du);
                        }
                    }
                    _ => {
                        let dense = composed.dense.as_ref().expect("matrix bases");
                        let expansions = model.expansions.get(c);
                        let products = composed.expanded[c].as_ref();
                        for (b, w) in dense.iter().enumerate() {
                            if nd.coord[c] {
                                let m = products.map_or(w, |p| &p[b]);
                                dalpha[c][b] += m.frobenius_dot(du);
                            }
                            if nd.bases && alpha[b] != 0.0 {
                                let acc = d_dense
                                    .get_or_insert_with(|| vec![Matrix::zeros(model.hidden, model.hidden); dense.len()]);
                                match expansions {
                                    None => acc[b].add_scaled(alpha[b], du),
                                    Some(oms) => {
                                        let g = oms[b].transposed_matmul(du).expect("square");
                                        acc[b].add_scaled(alpha[b], &g);
                                    }
                                }
                            }
                            if nd.expansion[c] && alpha[b] != 0.0 {
                                let g = du.matmul_transposed(w).expect("square");
                                let om = &mut self.grads.expansions.by_intent.get_mut(&c).expect("expanded")[b];
                                om.add_scaled(alpha[b], &g);
                            }
                        }
                    }
                }
            }
            if let Some(db) = &self.d_bias[c] {
                if nd.input {
                    math::axpy(1.0, db, &mut self.grads.bias);
                }
                if let BasisSet::VectorBias { bases, .. } = &model.bases {
                    for (b, w) in bases.iter().enumerate() {
                        if nd.coord[c] {
                            dalpha[c][b] += dot(w, db);
                        }
                    }
                    if nd.bases {
                        if let BasisSet::VectorBias { bases: gb, .. } = &mut self.grads.bases {
                            for (b, g) in gb.iter_mut().enumerate() {
                                math::axpy(alpha[b], db, g);
                            }
                        }
                    }
                }
            }
        }
        if let Some(dd) = d_dense {
            match (&mut self.grads.bases, &model.bases) {
                (BasisSet::FullMatrix { bases }, _) => {
                    for (g, d) in bases.iter_mut().zip(&dd) {
                        g.add_scaled(1.0, d);
                    }
                }
                (BasisSet::ReducedRank { factors: gf, .. }, BasisSet::ReducedRank { factors, .. }) => {
                    for (b, d) in dd.iter().enumerate() {
                        let mut sym = d.clone();
                        sym.add_scaled(1.0, &d.transpose());
                        for (k, f) in factors[b].iter().enumerate() {
                            let g = sym.matvec(f).expect("square");
                            math::axpy(1.0, &g, &mut gf[b][k]);
                        }
                    }
                }
                _ => unreachable!("dense gradients only for matrix bases"),
            }
        }
        for c in (0..n).filter(|&c| nd.coord[c]) {
            let g = match model.mode() {
                SpaceMode::Simplex => softmax_backward(&composed.alpha[c], &dalpha[c]),
                SpaceMode::Euclidean => dalpha[c].to_vec(),
            };
            self.grads.coords.beta.row_mut(c).copy_from_slice(&g);
        }
        self.grads
    }
}

/// Mean negative log-likelihood of the references.
pub fn loss_nll<X: AsRef<[f64]>>(model: &IntentSpaceModel, batch: &[(&[X], usize)]) -> Result<f64> {
    let labeled: Vec<(Sentence<'_, X>, usize)> = batch.iter().map(|(x, y)| (Sentence::new(x), *y)).collect();
    Ok(evaluate(model, &labeled, &[], &ObjectiveSpec::nll_only(), None)?.0.nll)
}

/// Rank-preservation term over a sample of seen sentences.
pub fn reg_rank_preservation<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    sample: &[&[X]],
    unseen: &[usize],
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("rank preservation needs sample sentences".into()));
    }
    if unseen.is_empty() {
        return Err(Error::Config("rank preservation needs unseen intents".into()));
    }
    check_labels(model, unseen, "unseen")?;
    let unseen_set: BTreeSet<usize> = unseen.iter().copied().collect();
    if (0..model.intents()).all(|c| unseen_set.contains(&c)) {
        return Err(Error::Config("rank preservation needs at least one seen intent".into()));
    }
    let predictor = crate::model::Predictor::new(model);
    let mut total = 0.0;
    for x in sample {
        let s = predictor.scores(x)?;
        let m = (0..model.intents())
            .filter(|c| !unseen_set.contains(c))
            .map(|c| s[c])
            .fold(f64::NEG_INFINITY, f64::max);
        for &u in unseen {
            total += (m / s[u]).ln();
        }
    }
    Ok(-total / (sample.len() * unseen.len()) as f64)
}

/// Mean divergence from uniform (simplex) or mean squared norm (Euclidean).
pub fn reg_coordinates(model: &IntentSpaceModel, intents: &[usize]) -> Result<f64> {
    check_labels(model, intents, "coordinate")?;
    let composed = Composed::new(model, &vec![false; model.intents()]);
    Ok(coordinate_term(model, &composed, intents).0)
}

/// Combined objective `nll + ε·rank + ζ·coords`.
pub fn objective<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    labeled: &[(&[X], usize)],
    reg: &[&[X]],
    spec: &ObjectiveSpec,
) -> Result<ObjectiveTerms> {
    let labeled: Vec<(Sentence<'_, X>, usize)> = labeled.iter().map(|(x, y)| (Sentence::new(x), *y)).collect();
    let reg: Vec<Sentence<'_, X>> = reg.iter().map(|x| Sentence::new(x)).collect();
    Ok(evaluate(model, &labeled, &reg, spec, None)?.0)
}

/// Gradient of the objective for the selected blocks.
pub fn backward<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    labeled: &[(&[X], usize)],
    reg: &[&[X]],
    spec: &ObjectiveSpec,
    selector: &ParamSelector,
) -> Result<(ObjectiveTerms, IntentSpaceModel)> {
    let labeled: Vec<(Sentence<'_, X>, usize)> = labeled.iter().map(|(x, y)| (Sentence::new(x), *y)).collect();
    let reg: Vec<Sentence<'_, X>> = reg.iter().map(|x| Sentence::new(x)).collect();
    let (terms, grads) = evaluate(model, &labeled, &reg, spec, Some(selector))?;
    Ok((terms, grads.expect("selector given")))
}

/// Largest relative error between [`backward`] and central differences over
/// every selected parameter.
pub fn check_gradients<X: AsRef<[f64]>>(
    model: &IntentSpaceModel,
    labeled: &[(&[X], usize)],
    reg: &[&[X]],
    spec: &ObjectiveSpec,
    selector: &ParamSelector,
    eps: f64,
) -> Result<f64> {
    let (_, grads) = backward(model, labeled, reg, spec, selector)?;
    let pick = |m: &IntentSpaceModel| -> Vec<f64> {
        m.blocks()
            .into_iter()
            .filter(|(id, _)| selector.includes(*id))
            .flat_map(|(_, s)| s.to_vec())
            .collect()
    };
    let point = pick(model);
    if point.is_empty() {
        return Err(Error::Config("selector matches no parameters of this model".into()));
    }
    let mut probe = model.clone();
    let f = |theta: &[f64]| {
        let mut off = 0;
        for (id, s) in probe.blocks_mut() {
            if selector.includes(id) {
                let n = s.len();
                s.copy_from_slice(&theta[off..off + n]);
                off += n;
            }
        }
        objective(&probe, labeled, reg, spec).map_or(f64::NAN, |t| t.total)
    };
    math::grad_check(f, &point, &pick(&grads), eps)
}
