//! Composition functions mapping an ordered list of token embeddings onto a
//! single latent vector, with their gradients.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_dim, Error, Result};
use crate::lexicon::{EmbeddingTable, TokenId};
use crate::numerics::{axpy, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    /// `Σ xᵢ`
    Additive,
    /// `Σ tanh(xᵢ + xᵢ₊₁)`; a single token maps to `tanh(x₁)`.
    Bigram,
}

impl fmt::Display for CompositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompositionMode::Additive => "additive",
            CompositionMode::Bigram => "bigram",
        })
    }
}

impl FromStr for CompositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(CompositionMode::Additive),
            "bigram" => Ok(CompositionMode::Bigram),
            other => Err(Error::InvalidArgument(format!(
                "unknown composition mode {other:?} (expected additive or bigram)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositionFn {
    mode: CompositionMode,
    dim: usize,
}

impl CompositionFn {
    pub fn new(mode: CompositionMode, dim: usize) -> Self {
        CompositionFn { mode, dim }
    }

    pub fn mode(&self) -> CompositionMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::Empty("composition input"));
        }
        xs.iter()
            .try_for_each(|x| ensure_dim(self.dim, x.as_ref().len()))
    }

    pub fn compose<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<Vector> {
        self.check(xs)?;
        Vector::new(self.compose_unchecked(xs))
    }

    pub(crate) fn compose_unchecked<X: AsRef<[f64]>>(&self, xs: &[X]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        match self.mode {
            CompositionMode::Additive => {
                for x in xs {
                    axpy(1.0, x.as_ref(), &mut out);
                }
            }
            CompositionMode::Bigram if xs.len() == 1 => {
                for (o, v) in out.iter_mut().zip(xs[0].as_ref()) {
                    *o = v.tanh();
                }
            }
            CompositionMode::Bigram => {
                for pair in xs.windows(2) {
                    let (a, b) = (pair[0].as_ref(), pair[1].as_ref());
                    for k in 0..self.dim {
                        out[k] += (a[k] + b[k]).tanh();
                    }
                }
            }
        }
        out
    }

    /// Gradient of `upstream · compose(xs)` with respect to every input.
    pub fn compose_backward<X: AsRef<[f64]>>(
        &self,
        xs: &[X],
        upstream: &[f64],
    ) -> Result<Vec<Vector>> {
        self.check(xs)?;
        ensure_dim(self.dim, upstream.len())?;
        let mut grads = vec![vec![0.0; self.dim]; xs.len()];
        self.backward_each(xs, upstream, |i, g| axpy(1.0, g, &mut grads[i]));
        grads.into_iter().map(Vector::new).collect()
    }

    /// Calls `sink(i, g)` with gradient contributions for input `i`; an input
    /// may receive several contributions.
    fn backward_each<X, F>(&self, xs: &[X], upstream: &[f64], mut sink: F)
    where
        X: AsRef<[f64]>,
        F: FnMut(usize, &[f64]),
    {
        match self.mode {
            CompositionMode::Additive => {
                for i in 0..xs.len() {
                    sink(i, upstream);
                }
            }
            CompositionMode::Bigram if xs.len() == 1 => {
                let g: Vec<f64> = xs[0]
                    .as_ref()
                    .iter()
                    .zip(upstream)
                    .map(|(v, u)| {
                        let t = v.tanh();
                        (1.0 - t * t) * u
                    })
                    .collect();
                sink(0, &g);
            }
            CompositionMode::Bigram => {
                let mut g = vec![0.0; self.dim];
                for i in 0..xs.len() - 1 {
                    let (a, b) = (xs[i].as_ref(), xs[i + 1].as_ref());
                    for k in 0..self.dim {
                        let t = (a[k] + b[k]).tanh();
                        g[k] = (1.0 - t * t) * upstream[k];
                    }
                    sink(i, &g);
                    sink(i + 1, &g);
                }
            }
        }
    }
}

/// An embedding table together with the composition applied to its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder {
    pub table: EmbeddingTable,
    pub compose: CompositionFn,
}

impl SequenceEncoder {
    pub fn new(table: EmbeddingTable, mode: CompositionMode) -> Self {
        let compose = CompositionFn::new(mode, table.dim());
        SequenceEncoder { table, compose }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn mode(&self) -> CompositionMode {
        self.compose.mode()
    }

    fn rows(&self, ids: &[TokenId]) -> Result<Vec<&[f64]>> {
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        ids.iter().map(|&id| self.table.lookup(id)).collect()
    }

    pub fn encode(&self, ids: &[TokenId]) -> Result<Vector> {
        let rows = self.rows(ids)?;
        Vector::new(self.compose.compose_unchecked(&rows))
    }

    /// Adds the gradient of `upstream · encode(ids)` into `grad`, a matrix
    /// shaped like the table.
    pub fn backward(&self, ids: &[TokenId], upstream: &[f64], grad: &mut Matrix) -> Result<()> {
        let rows = self.rows(ids)?;
        ensure_dim(self.dim(), upstream.len())?;
        self.compose
            .backward_each(&rows, upstream, |i, g| axpy(1.0, g, grad.row_mut(ids[i])));
        Ok(())
    }
}
