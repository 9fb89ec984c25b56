//! Rectangular-to-symmetric reduction: fold a row-duplicated rectangular
//! adversary matrix into a symmetric one over the plain input domain, using
//! the weights of its top singular pair, and certify that the fold loses
//! nothing: the norm does not drop and every coordinate-masked norm does not
//! grow. A correctness certificate, dense only.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adversary_core::RectangularAdversary;
use crate::error::{Error, Result};
use crate::util;

/// Symmetric adversary matrix over the full input domain, zero on pairs with
/// equal function value.
#[derive(Clone, Debug)]
pub struct SymmetricAdversary {
    /// Domain size q^n; index i is the input with flat base-q index i.
    pub dim: usize,
    pub matrix: DMatrix<f64>,
    /// Function value per domain point (true = 1-input).
    pub f_one: Vec<bool>,
    /// Top singular value of the rectangular matrix.
    pub sigma: f64,
    /// Direct evaluation of the folded quadratic form at the transferred
    /// weight vector; equals `sigma` up to rounding.
    pub transfer_value: f64,
    /// The top singular value was (numerically) degenerate; the fold used
    /// the decomposition's deterministic choice of pair.
    pub degenerate: bool,
    pub n: usize,
    pub q: usize,
}

/// Norm of one coordinate-masked slice of the symmetric matrix, with the sign
/// of the extreme eigenvalue achieving it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MaskedNorm {
    pub coord: usize,
    pub norm: f64,
    pub negative_extreme: bool,
}

/// Fold a rectangular adversary matrix into a symmetric one.
///
/// Takes the top singular pair (u, v) of the input, splits the weight
/// `delta = (v, u)/sqrt(2)` over the row and column labels, aggregates rows
/// sharing an input with weights `delta_x,a / delta'_x`, and scales by
/// `1/(delta'_x delta'_y)`. Inputs with zero aggregated weight get zero rows
/// and columns.
pub fn symmetrize(rect: &RectangularAdversary) -> Result<SymmetricAdversary> {
    let m = &rect.matrix;
    if m.nrows() == 0 || m.ncols() == 0 || m.amax() == 0.0 {
        return Err(Error::Degenerate(
            "adversary matrix must be non-zero".into(),
        ));
    }
    if rect.row_inputs.len() != m.nrows() || rect.col_inputs.len() != m.ncols() {
        return Err(Error::DimensionMismatch(
            "label counts must match the matrix".into(),
        ));
    }
    let dim = util::checked_pow(rect.q, rect.n).ok_or(Error::TooLarge {
        entries: u128::MAX,
        cap: usize::MAX as u128,
    })?;
    let entries = dim as u128 * dim as u128;
    let cap = util::dense_cap() as u128;
    if entries > cap {
        return Err(Error::TooLarge { entries, cap });
    }

    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("singular value decomposition did not converge".into()))?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut top = 0usize;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > svd.singular_values[top] {
            top = i;
        }
    }
    let sigma = svd.singular_values[top];
    let mut sorted: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let degenerate = sorted.len() > 1 && (sorted[0] - sorted[1]).abs() <= 1e-8 * sorted[0].max(1.0);

    let inv_sqrt2 = 1.0 / 2f64.sqrt();
    // delta over the stacked label set: rows carry u/sqrt(2), columns v/sqrt(2)
    let row_delta: Vec<f64> = (0..m.nrows()).map(|r| u[(r, top)] * inv_sqrt2).collect();
    let col_delta: Vec<f64> = (0..m.ncols()).map(|c| v_t[(top, c)] * inv_sqrt2).collect();

    let mut f_one = vec![false; dim];
    for &x in &rect.row_inputs {
        f_one[x] = true;
    }
    for &y in &rect.col_inputs {
        if f_one[y] {
            return Err(Error::InvalidParameter(format!(
                "input {y} appears as both a row and a column label"
            )));
        }
    }

    // aggregated weight per domain point
    let mut weight_sq = vec![0.0f64; dim];
    for (r, &x) in rect.row_inputs.iter().enumerate() {
        weight_sq[x] += row_delta[r] * row_delta[r];
    }
    for (c, &y) in rect.col_inputs.iter().enumerate() {
        weight_sq[y] += col_delta[c] * col_delta[c];
    }
    let weight: Vec<f64> = weight_sq.iter().map(|w| w.sqrt()).collect();

    let mut rows_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &x) in rect.row_inputs.iter().enumerate() {
        rows_of.entry(x).or_default().push(r);
    }

    let mut matrix = DMatrix::zeros(dim, dim);
    for (c, &y) in rect.col_inputs.iter().enumerate() {
        if weight[y] == 0.0 {
            continue;
        }
        for (&x, rows) in &rows_of {
            if weight[x] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for &r in rows {
                acc += row_delta[r] * m[(r, c)];
            }
            let val = acc * col_delta[c] / (weight[x] * weight[y]);
            matrix[(x, y)] = val;
            matrix[(y, x)] = val;
        }
    }

    // transferred quadratic form, evaluated directly
    let wv = DVector::from_column_slice(&weight);
    let transfer_value = (wv.transpose() * &matrix * &wv)[(0, 0)];

    Ok(SymmetricAdversary {
        dim,
        matrix,
        f_one,
        sigma,
        transfer_value,
        degenerate,
        n: rect.n,
        q: rect.q,
    })
}

impl SymmetricAdversary {
    /// Entries on pairs with equal function value are exactly zero.
    pub fn zero_pattern_ok(&self) -> bool {
        for y in 0..self.dim {
            for x in 0..self.dim {
                if self.f_one[x] == self.f_one[y] && self.matrix[(x, y)] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// The matrix with entries on pairs agreeing at `coord` zeroed.
    pub fn masked(&self, coord: usize) -> Result<DMatrix<f64>> {
        if coord >= self.n {
            return Err(Error::InvalidParameter(format!(
                "coordinate {coord} out of range for n={}",
                self.n
            )));
        }
        let digits: Vec<u32> = (0..self.dim)
            .map(|i| util::digit_at(i, coord, self.n, self.q))
            .collect();
        let mut out = self.matrix.clone();
        for c in 0..self.dim {
            for r in 0..self.dim {
                if digits[r] == digits[c] {
                    out[(r, c)] = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Spectral norm of the masked matrix, noting whether the extreme
    /// eigenvalue achieving it is negative.
    pub fn masked_norm(&self, coord: usize) -> Result<MaskedNorm> {
        let masked = self.masked(coord)?;
        let eig = masked.symmetric_eigen();
        let mut norm = 0.0f64;
        let mut negative = false;
        for lambda in eig.eigenvalues.iter() {
            if lambda.abs() > norm {
                norm = lambda.abs();
                negative = *lambda < 0.0;
            }
        }
        Ok(MaskedNorm {
            coord,
            norm,
            negative_extreme: negative,
        })
    }
}
