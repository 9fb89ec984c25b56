//! Eigenbasis of the all-ones matrix and the weight-graded eigenspace
//! projectors of the Hamming association scheme on `[q]^n`.
//!
//! The basis pins only the uniform vector `e_0`; the remaining columns come
//! from a deterministic Householder reflection, so the same alphabet size
//! always yields a bit-identical basis. Projectors are exposed both densely
//! and as structured operators that apply by per-coordinate basis change,
//! weight masking, and inverse change.

mod operator;

pub use operator::{DenseOp, Factor, LinOp, StructuredOperator, Term};

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::util;

/// Orthonormal q-by-q basis whose first column is the uniform unit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    q: usize,
    vectors: DMatrix<f64>,
}

impl EigenBasis {
    pub fn q(&self) -> usize {
        self.q
    }

    /// The basis as a matrix; column j is `e_j`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j).iter().copied().collect()
    }
}

/// Deterministic eigenbasis with `e_0 = (1, .., 1)/sqrt(q)`: the Householder
/// reflection exchanging the uniform vector with the first standard vector.
pub fn make_eigenbasis(q: usize) -> Result<EigenBasis> {
    if q < 2 {
        return Err(Error::InvalidParameter(format!(
            "alphabet size must be at least 2, got {q}"
        )));
    }
    let s = 1.0 / (q as f64).sqrt();
    // w = u - ê_0, H = I - 2 w wᵀ / ‖w‖²; columns of H are the basis
    let mut w = vec![s; q];
    w[0] -= 1.0;
    let wnorm2: f64 = w.iter().map(|x| x * x).sum();
    let scale = 2.0 / wnorm2;
    let vectors = DMatrix::from_fn(q, q, |r, c| {
        let id = if r == c { 1.0 } else { 0.0 };
        id - scale * w[r] * w[c]
    });
    Ok(EigenBasis { q, vectors })
}

/// Alternative deterministic completion (modified Gram-Schmidt over the
/// uniform vector followed by standard vectors); used to check that the
/// projectors depend only on the span split, not the completion.
#[cfg(test)]
pub(crate) fn make_eigenbasis_gram_schmidt(q: usize) -> EigenBasis {
    assert!(q >= 2);
    let s = 1.0 / (q as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = vec![vec![s; q]];
    let mut j = 0usize;
    while cols.len() < q {
        let mut v = vec![0.0; q];
        v[j] = 1.0;
        j += 1;
        for c in &cols {
            let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        cols.push(v);
    }
    let vectors = DMatrix::from_fn(q, q, |r, c| cols[c][r]);
    EigenBasis { q, vectors }
}

/// The rank-one uniform projector `E_0` (all entries 1/q) and its complement
/// `E_1 = I - E_0`, with exact entries.
pub fn elementary_projectors(q: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if q < 2 {
        return Err(Error::InvalidParameter(format!(
            "alphabet size must be at least 2, got {q}"
        )));
    }
    let inv = 1.0 / q as f64;
    let e0 = DMatrix::from_element(q, q, inv);
    let e1 = DMatrix::from_fn(q, q, |r, c| if r == c { 1.0 - inv } else { -inv });
    Ok((e0, e1))
}

/// Projector onto basis tensors of exactly weight m on `[q]^n`, realized as a
/// structured operator.
#[derive(Clone, Debug)]
pub struct WeightProjector {
    n: usize,
    m: usize,
    q: usize,
    op: StructuredOperator,
}

impl WeightProjector {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn operator(&self) -> &StructuredOperator {
        &self.op
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.op.apply(v)
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        self.op.dense()
    }

    /// `C(n, m) (q-1)^m`, the dimension of the weight-m eigenspace.
    pub fn rank(&self) -> u128 {
        util::binomial(self.n, self.m) * (self.q as u128 - 1).pow(self.m as u32)
    }
}

pub fn weight_projector(n: usize, m: usize, q: usize) -> Result<WeightProjector> {
    let basis = Arc::new(make_eigenbasis(q)?);
    weight_projector_with_basis(n, m, &basis)
}

pub fn weight_projector_with_basis(
    n: usize,
    m: usize,
    basis: &Arc<EigenBasis>,
) -> Result<WeightProjector> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "need at least one coordinate".into(),
        ));
    }
    if m > n {
        return Err(Error::InvalidParameter(format!(
            "weight {m} out of range for {n} coordinates"
        )));
    }
    let q = basis.q();
    let dims = vec![q; n];
    let mut weights = vec![0.0; n + 1];
    weights[m] = 1.0;
    let axes: Vec<usize> = (0..n).collect();
    let mut op = StructuredOperator::new(dims.clone(), dims);
    op.push_term(
        1.0,
        vec![Factor::weight_scaled(
            basis.clone(),
            axes.clone(),
            axes,
            weights,
        )],
    )?;
    Ok(WeightProjector {
        n,
        m,
        q: basis.q(),
        op,
    })
}
