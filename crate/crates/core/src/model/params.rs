//! Flat views over the trainable tensors of a model.

use serde::{Deserialize, Serialize};

use super::{BasisSet, IntentSpaceModel, ScorerParams};

/// One contiguous trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    Input,
    Bias,
    /// Dense basis matrix or basis vector `b`.
    Basis(usize),
    /// Reduced-rank factor `k` of basis `b`.
    BasisFactor(usize, usize),
    /// Shared recurrent matrix of the vector form.
    SharedRecurrent,
    Coord(usize),
    Expansion(usize, usize),
    /// `None` for the shared scorer, `Some(c)` for intent `c`'s row.
    ScorerWeights(Option<usize>),
    ScorerOffset(Option<usize>),
}

/// Families of tensors that training phases switch on and off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Bases,
    Coordinates,
    Expansions,
    /// `V` and `b`.
    Input,
    Scorer,
}

impl BlockId {
    pub fn group(self) -> ParamGroup {
        match self {
            BlockId::Input | BlockId::Bias => ParamGroup::Input,
            BlockId::Basis(_) | BlockId::BasisFactor(..) | BlockId::SharedRecurrent => ParamGroup::Bases,
            BlockId::Coord(_) => ParamGroup::Coordinates,
            BlockId::Expansion(..) => ParamGroup::Expansions,
            BlockId::ScorerWeights(_) | BlockId::ScorerOffset(_) => ParamGroup::Scorer,
        }
    }

    /// Intent owning the block, `None` for blocks shared by all intents.
    pub fn intent(self) -> Option<usize> {
        match self {
            BlockId::Coord(c) | BlockId::Expansion(c, _) => Some(c),
            BlockId::ScorerWeights(c) | BlockId::ScorerOffset(c) => c,
            _ => None,
        }
    }
}

impl IntentSpaceModel {
    /// Every trainable tensor in a fixed order.
    pub fn blocks(&self) -> Vec<(BlockId, &[f64])> {
        let mut out: Vec<(BlockId, &[f64])> = vec![(BlockId::Input, self.input.data()), (BlockId::Bias, &self.bias)];
        match &self.bases {
            BasisSet::FullMatrix { bases } => {
                out.extend(bases.iter().enumerate().map(|(b, w)| (BlockId::Basis(b), w.data())))
            }
            BasisSet::ReducedRank { factors, .. } => {
                for (b, fs) in factors.iter().enumerate() {
                    out.extend(fs.iter().enumerate().map(|(k, f)| (BlockId::BasisFactor(b, k), &f[..])));
                }
            }
            BasisSet::VectorBias { recurrent, bases } => {
                out.push((BlockId::SharedRecurrent, recurrent.data()));
                out.extend(bases.iter().enumerate().map(|(b, w)| (BlockId::Basis(b), &w[..])));
            }
        }
        for c in 0..self.coords.beta.rows() {
            out.push((BlockId::Coord(c), self.coords.beta.row(c)));
        }
        for (&c, oms) in &self.expansions.by_intent {
            out.extend(oms.iter().enumerate().map(|(b, o)| (BlockId::Expansion(c, b), o.data())));
        }
        match &self.scorer {
            ScorerParams::Shared { a, d } => {
                out.push((BlockId::ScorerWeights(None), a));
                out.push((BlockId::ScorerOffset(None), std::slice::from_ref(d)));
            }
            ScorerParams::PerIntent { a, d } => {
                for c in 0..a.rows() {
                    out.push((BlockId::ScorerWeights(Some(c)), a.row(c)));
                    out.push((BlockId::ScorerOffset(Some(c)), std::slice::from_ref(&d[c])));
                }
            }
        }
        out
    }

    /// Mutable counterpart of [`IntentSpaceModel::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<(BlockId, &mut [f64])> {
        let mut out: Vec<(BlockId, &mut [f64])> =
            vec![(BlockId::Input, self.input.data_mut()), (BlockId::Bias, &mut self.bias)];
        match &mut self.bases {
            BasisSet::FullMatrix { bases } => out.extend(
                bases
                    .iter_mut()
                    .enumerate()
                    .map(|(b, w)| (BlockId::Basis(b), w.data_mut())),
            ),
            BasisSet::ReducedRank { factors, .. } => {
                for (b, fs) in factors.iter_mut().enumerate() {
                    out.extend(
                        fs.iter_mut()
                            .enumerate()
                            .map(|(k, f)| (BlockId::BasisFactor(b, k), &mut f[..])),
                    );
                }
            }
            BasisSet::VectorBias { recurrent, bases } => {
                out.push((BlockId::SharedRecurrent, recurrent.data_mut()));
                out.extend(bases.iter_mut().enumerate().map(|(b, w)| (BlockId::Basis(b), &mut w[..])));
            }
        }
        let cols = self.coords.beta.cols();
        if cols > 0 {
            for (c, row) in self.coords.beta.data_mut().chunks_mut(cols).enumerate() {
                out.push((BlockId::Coord(c), row));
            }
        }
        for (&c, oms) in self.expansions.by_intent.iter_mut() {
            out.extend(
                oms.iter_mut()
                    .enumerate()
                    .map(|(b, o)| (BlockId::Expansion(c, b), o.data_mut())),
            );
        }
        match &mut self.scorer {
            ScorerParams::Shared { a, d } => {
                out.push((BlockId::ScorerWeights(None), &mut a[..]));
                out.push((BlockId::ScorerOffset(None), std::slice::from_mut(d)));
            }
            ScorerParams::PerIntent { a, d } => {
                let h = a.cols();
                let rows: Vec<&mut [f64]> = if h > 0 { a.data_mut().chunks_mut(h).collect() } else { Vec::new() };
                for (c, (row, off)) in rows.into_iter().zip(d.iter_mut()).enumerate() {
                    out.push((BlockId::ScorerWeights(Some(c)), row));
                    out.push((BlockId::ScorerOffset(Some(c)), std::slice::from_mut(off)));
                }
            }
        }
        out
    }

    /// A copy with every trainable tensor zeroed, used to hold gradients.
    pub fn zeros_like(&self) -> IntentSpaceModel {
        let mut z = self.clone();
        for (_, s) in z.blocks_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn block(&self, id: BlockId) -> Option<&[f64]> {
        self.blocks().into_iter().find(|(b, _)| *b == id).map(|(_, s)| s)
    }

    /// Total number of scalars in the selected blocks.
    pub fn parameter_count(&self, mut keep: impl FnMut(BlockId) -> bool) -> usize {
        self.blocks()
            .into_iter()
            .filter(|(id, _)| keep(*id))
            .map(|(_, s)| s.len())
            .sum()
    }
}
