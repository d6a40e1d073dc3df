//! Plain RNN classifier with a softmax output layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{seeded_rng, softmax, Matrix, Vector};

use super::run_recurrence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRnn {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Vector,
    pub a: Matrix,
    pub d: Vector,
    pub h0: Vector,
    pub labels: Vec<String>,
}

/// Gradients with the same layout as [`BaselineRnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGradients {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Vector,
    pub a: Matrix,
    pub d: Vector,
}

impl BaselineGradients {
    pub fn slices(&self) -> [&[f64]; 5] {
        [self.u.data(), self.v.data(), &self.b, self.a.data(), &self.d]
    }
}

impl BaselineRnn {
    pub fn new(hidden: usize, input_dim: usize, labels: Vec<String>, init_scale: f64, seed: u64) -> Result<Self> {
        if hidden == 0 || input_dim == 0 || labels.is_empty() {
            return Err(Error::Config("baseline needs positive sizes and at least one intent".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut u = Matrix::identity(hidden);
        for x in u.data_mut() {
            *x += crate::math::uniform(&mut rng, init_scale);
        }
        let v = if hidden == input_dim {
            Matrix::identity(hidden)
        } else {
            Matrix::random(hidden, input_dim, 1.0 / (input_dim as f64).sqrt(), &mut rng)
        };
        let c = labels.len();
        Ok(BaselineRnn {
            u,
            v,
            b: Vector::random(hidden, init_scale, &mut rng),
            a: Matrix::random(c, hidden, init_scale, &mut rng),
            d: Vector::random(c, init_scale, &mut rng),
            h0: Vector::zeros(hidden),
            labels,
        })
    }

    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub fn intents(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.u.rows();
        let ok = self.u.cols() == h
            && self.v.rows() == h
            && self.b.dim() == h
            && self.h0.dim() == h
            && self.a.cols() == h
            && self.d.dim() == self.a.rows()
            && self.labels.len() == self.a.rows();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("baseline parameter shapes disagree".into()))
        }
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.u.data_mut(),
            self.v.data_mut(),
            &mut self.b,
            self.a.data_mut(),
            &mut self.d,
        ]
    }

    fn forward<X: AsRef<[f64]>>(&self, sentence: &[X]) -> Result<(Vec<Vector>, super::Trace, Vector)> {
        if sentence.is_empty() {
            return Err(Error::EmptyInput("sentence has no words".into()));
        }
        let projected: Vec<Vector> = sentence
            .iter()
            .map(|x| self.v.matvec(x.as_ref()))
            .collect::<Result<_>>()?;
        let trace = run_recurrence(&self.u, &self.b, &projected, &self.h0);
        let mut logits = self.a.matvec(trace.last())?;
        for (l, d) in logits.iter_mut().zip(self.d.iter()) {
            *l += d;
        }
        Ok((projected, trace, softmax(&logits)))
    }

    /// Gradient of `−log P(label)` for one sentence, added into `grads`.
    /// Returns the loss.
    pub fn accumulate_gradient<X: AsRef<[f64]>>(
        &self,
        sentence: &[X],
        label: usize,
        weight: f64,
        grads: &mut BaselineGradients,
    ) -> Result<f64> {
        if label >= self.intents() {
            return Err(Error::Range(format!("label {label} out of range")));
        }
        let (_, trace, probs) = self.forward(sentence)?;
        let h_t = trace.last();
        let mut dlogit = probs.clone();
        dlogit[label] -= 1.0;
        for x in dlogit.iter_mut() {
            *x *= weight;
        }
        grads.a.add_outer(1.0, &dlogit, h_t);
        crate::math::axpy(1.0, &dlogit, &mut grads.d);
        let mut dh = vec![0.0; self.hidden()];
        self.a.matvec_transposed_acc(&dlogit, &mut dh);
        for t in (1..trace.states.len()).rev() {
            let h = &trace.states[t];
            let delta: Vec<f64> = dh.iter().zip(h.iter()).map(|(g, s)| g * s * (1.0 - s)).collect();
            grads.u.add_outer(1.0, &delta, &trace.states[t - 1]);
            grads.v.add_outer(1.0, &delta, sentence[t - 1].as_ref());
            crate::math::axpy(1.0, &delta, &mut grads.b);
            dh.iter_mut().for_each(|x| *x = 0.0);
            self.u.matvec_transposed_acc(&delta, &mut dh);
        }
        Ok(-probs[label].ln() * weight)
    }

    pub fn zero_gradients(&self) -> BaselineGradients {
        BaselineGradients {
            u: Matrix::zeros(self.u.rows(), self.u.cols()),
            v: Matrix::zeros(self.v.rows(), self.v.cols()),
            b: Vector::zeros(self.b.dim()),
            a: Matrix::zeros(self.a.rows(), self.a.cols()),
            d: Vector::zeros(self.d.dim()),
        }
    }
}

/// Softmax over `A h_T + d` after the shared recursion.
pub fn baseline_forward<X: AsRef<[f64]>>(rnn: &BaselineRnn, sentence: &[X]) -> Result<Vector> {
    Ok(rnn.forward(sentence)?.2)
}
