//! Matrix-free structured operators.
//!
//! A [`StructuredOperator`] is a sum of coefficient-weighted terms. Each term
//! is a product of factors placed on disjoint groups of row and column axes of
//! a mixed-radix tensor layout (axis 0 most significant). Factors are either
//! explicit dense blocks or fused weight-graded projector combinations
//! `sum_m w_m E_m` applied by per-coordinate basis change, weight masking and
//! inverse change. Matvecs contract one factor at a time, permuting the target
//! axes to the front of the layout and multiplying through.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::EigenBasis;
use crate::error::{Error, Result};
use crate::util;

/// Minimal matrix-free operator interface used by the spectral routines.
pub trait LinOp: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A v`; panics on dimension mismatch (public wrappers validate).
    fn matvec(&self, v: &[f64]) -> Vec<f64>;
    /// `Aᵀ u`.
    fn rmatvec(&self, u: &[f64]) -> Vec<f64>;
}

/// Dense matrix viewed as a [`LinOp`]. Matvecs run over column chunks in
/// parallel; partial results fold in chunk order, so values are independent
/// of scheduling.
pub struct DenseOp<'a>(pub &'a DMatrix<f64>);

const DENSE_PAR_CHUNK: usize = 256;

impl LinOp for DenseOp<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let (m, ncols) = (self.0, self.0.ncols());
        assert_eq!(v.len(), ncols);
        let nrows = m.nrows();
        let data = m.as_slice(); // column-major
        if (nrows as u64) * (ncols as u64) < 1 << 20 {
            let x = nalgebra::DVector::from_column_slice(v);
            return (m * x).as_slice().to_vec();
        }
        let partials: Vec<Vec<f64>> = data
            .par_chunks(DENSE_PAR_CHUNK * nrows)
            .zip(v.par_chunks(DENSE_PAR_CHUNK))
            .map(|(cols, xs)| {
                let mut acc = vec![0.0; nrows];
                for (col, &x) in cols.chunks_exact(nrows).zip(xs) {
                    if x == 0.0 {
                        continue;
                    }
                    for (a, &c) in acc.iter_mut().zip(col) {
                        *a += x * c;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; nrows];
        for p in partials {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }
    fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        let (m, nrows, ncols) = (self.0, self.0.nrows(), self.0.ncols());
        assert_eq!(u.len(), nrows);
        let data = m.as_slice();
        if (nrows as u64) * (ncols as u64) < 1 << 20 {
            let x = nalgebra::DVector::from_column_slice(u);
            return (m.transpose() * x).as_slice().to_vec();
        }
        data.par_chunks(nrows)
            .map(|col| col.iter().zip(u).map(|(&c, &x)| c * x).sum())
            .collect()
    }
}

/// One factor of a term.
#[derive(Clone, Debug)]
pub enum Factor {
    /// Explicit block: `matrix` has `prod(row dims)` rows and `prod(col dims)`
    /// columns, indices mixed-radix over the listed axes (first listed most
    /// significant). Empty axis lists are allowed on either side.
    Dense {
        matrix: Arc<DMatrix<f64>>,
        row_axes: Vec<usize>,
        col_axes: Vec<usize>,
    },
    /// `sum_m weights[m] * E_m` over the listed coordinates, where `E_m`
    /// projects onto basis tensors with exactly m factors off the uniform
    /// vector. Row and column axis lists pair up elementwise.
    WeightScaled {
        basis: Arc<EigenBasis>,
        row_axes: Vec<usize>,
        col_axes: Vec<usize>,
        weights: Arc<Vec<f64>>,
    },
}

impl Factor {
    pub fn dense(matrix: DMatrix<f64>, row_axes: Vec<usize>, col_axes: Vec<usize>) -> Self {
        Factor::Dense {
            matrix: Arc::new(matrix),
            row_axes,
            col_axes,
        }
    }

    pub fn weight_scaled(
        basis: Arc<EigenBasis>,
        row_axes: Vec<usize>,
        col_axes: Vec<usize>,
        weights: Vec<f64>,
    ) -> Self {
        Factor::WeightScaled {
            basis,
            row_axes,
            col_axes,
            weights: Arc::new(weights),
        }
    }

    fn row_axes(&self) -> &[usize] {
        match self {
            Factor::Dense { row_axes, .. } => row_axes,
            Factor::WeightScaled { row_axes, .. } => row_axes,
        }
    }

    fn col_axes(&self) -> &[usize] {
        match self {
            Factor::Dense { col_axes, .. } => col_axes,
            Factor::WeightScaled { col_axes, .. } => col_axes,
        }
    }

    fn transposed(&self) -> Factor {
        match self {
            Factor::Dense {
                matrix,
                row_axes,
                col_axes,
            } => Factor::Dense {
                matrix: Arc::new(matrix.transpose()),
                row_axes: col_axes.clone(),
                col_axes: row_axes.clone(),
            },
            Factor::WeightScaled {
                basis,
                row_axes,
                col_axes,
                weights,
            } => Factor::WeightScaled {
                basis: basis.clone(),
                row_axes: col_axes.clone(),
                col_axes: row_axes.clone(),
                weights: weights.clone(),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub coeff: f64,
    pub factors: Vec<Factor>,
}

/// Sum of factored terms over a mixed-radix row and column layout.
#[derive(Debug)]
pub struct StructuredOperator {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    terms: Vec<Term>,
    transposed: OnceLock<Box<StructuredOperator>>,
}

impl Clone for StructuredOperator {
    fn clone(&self) -> Self {
        StructuredOperator {
            row_dims: self.row_dims.clone(),
            col_dims: self.col_dims.clone(),
            terms: self.terms.clone(),
            transposed: OnceLock::new(),
        }
    }
}

impl StructuredOperator {
    pub fn new(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Self {
        StructuredOperator {
            row_dims,
            col_dims,
            terms: Vec::new(),
            transposed: OnceLock::new(),
        }
    }

    /// Identity operator on the given layout (one explicit unit block per axis).
    pub fn identity(dims: &[usize]) -> Self {
        let mut op = StructuredOperator::new(dims.to_vec(), dims.to_vec());
        let factors = dims
            .iter()
            .enumerate()
            .map(|(a, &d)| Factor::dense(DMatrix::identity(d, d), vec![a], vec![a]))
            .collect();
        op.push_term(1.0, factors).expect("identity term is valid");
        op
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn row_dim(&self) -> usize {
        self.row_dims.iter().product()
    }

    pub fn col_dim(&self) -> usize {
        self.col_dims.iter().product()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Add a term; every row and column axis must be covered exactly once.
    pub fn push_term(&mut self, coeff: f64, factors: Vec<Factor>) -> Result<()> {
        let mut row_seen = vec![false; self.row_dims.len()];
        let mut col_seen = vec![false; self.col_dims.len()];
        for f in &factors {
            for &a in f.row_axes() {
                if a >= row_seen.len() || row_seen[a] {
                    return Err(Error::InvalidParameter(format!(
                        "row axis {a} missing or covered twice"
                    )));
                }
                row_seen[a] = true;
            }
            for &a in f.col_axes() {
                if a >= col_seen.len() || col_seen[a] {
                    return Err(Error::InvalidParameter(format!(
                        "column axis {a} missing or covered twice"
                    )));
                }
                col_seen[a] = true;
            }
            match f {
                Factor::Dense {
                    matrix,
                    row_axes,
                    col_axes,
                } => {
                    let r: usize = row_axes.iter().map(|&a| self.row_dims[a]).product();
                    let c: usize = col_axes.iter().map(|&a| self.col_dims[a]).product();
                    if matrix.nrows() != r || matrix.ncols() != c {
                        return Err(Error::DimensionMismatch(format!(
                            "factor is {}x{}, axes give {}x{}",
                            matrix.nrows(),
                            matrix.ncols(),
                            r,
                            c
                        )));
                    }
                }
                Factor::WeightScaled {
                    basis,
                    row_axes,
                    col_axes,
                    weights,
                } => {
                    if row_axes.len() != col_axes.len() {
                        return Err(Error::DimensionMismatch(
                            "weight-scaled factor must pair row and column axes".into(),
                        ));
                    }
                    for (&r, &c) in row_axes.iter().zip(col_axes) {
                        if self.row_dims[r] != basis.q() || self.col_dims[c] != basis.q() {
                            return Err(Error::DimensionMismatch(
                                "weight-scaled axes must have the basis alphabet size".into(),
                            ));
                        }
                    }
                    if weights.len() != row_axes.len() + 1 {
                        return Err(Error::InvalidParameter(format!(
                            "need {} weights, got {}",
                            row_axes.len() + 1,
                            weights.len()
                        )));
                    }
                }
            }
        }
        if !row_seen.iter().all(|&s| s) || !col_seen.iter().all(|&s| s) {
            return Err(Error::InvalidParameter(
                "term must cover every row and column axis".into(),
            ));
        }
        self.terms.push(Term { coeff, factors });
        self.transposed = OnceLock::new();
        Ok(())
    }

    /// Apply to a vector, checking dimensions.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.col_dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} vs column dimension {}",
                v.len(),
                self.col_dim()
            )));
        }
        Ok(self.matvec_impl(v))
    }

    /// Apply the transpose to a vector, checking dimensions.
    pub fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.row_dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} vs row dimension {}",
                u.len(),
                self.row_dim()
            )));
        }
        Ok(self.transposed().matvec_impl(u))
    }

    /// The transpose as a new operator (factor matrices transposed, axes swapped).
    pub fn transpose(&self) -> StructuredOperator {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coeff: t.coeff,
                // reversed so contractions shrink the tensor early
                factors: t.factors.iter().rev().map(Factor::transposed).collect(),
            })
            .collect();
        StructuredOperator {
            row_dims: self.col_dims.clone(),
            col_dims: self.row_dims.clone(),
            terms,
            transposed: OnceLock::new(),
        }
    }

    fn transposed(&self) -> &StructuredOperator {
        self.transposed.get_or_init(|| Box::new(self.transpose()))
    }

    fn matvec_impl(&self, v: &[f64]) -> Vec<f64> {
        let out_len = self.row_dim();
        // Terms run in parallel; the sum is folded in term order so results
        // do not depend on scheduling.
        let partials: Vec<Vec<f64>> = if self.terms.len() > 1 && v.len() >= (1 << 12) {
            self.terms
                .par_iter()
                .map(|t| self.apply_term(t, v))
                .collect()
        } else {
            self.terms.iter().map(|t| self.apply_term(t, v)).collect()
        };
        let mut out = vec![0.0; out_len];
        for p in partials {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    fn apply_term(&self, term: &Term, v: &[f64]) -> Vec<f64> {
        let mut st = TensorState {
            data: v.to_vec(),
            dims: self.col_dims.clone(),
            labels: (0..self.col_dims.len()).map(Label::Col).collect(),
        };
        for f in &term.factors {
            apply_factor(f, &mut st, &self.row_dims);
        }
        debug_assert!(st.labels.iter().all(|l| matches!(l, Label::Row(_))));
        // permute surviving axes into the canonical row order
        let mut perm = Vec::with_capacity(self.row_dims.len());
        for target in 0..self.row_dims.len() {
            let pos = st
                .labels
                .iter()
                .position(|l| *l == Label::Row(target))
                .expect("term covers all row axes");
            perm.push(pos);
        }
        st.permute(&perm);
        if term.coeff != 1.0 {
            for x in &mut st.data {
                *x *= term.coeff;
            }
        }
        st.data
    }

    /// Dense materialization under the configured entry cap.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        self.dense_with_cap(util::dense_cap())
    }

    pub fn dense_with_cap(&self, cap: usize) -> Result<DMatrix<f64>> {
        let (r, c) = (self.row_dim(), self.col_dim());
        let entries = r as u128 * c as u128;
        if entries > cap as u128 {
            return Err(Error::TooLarge {
                entries,
                cap: cap as u128,
            });
        }
        let mut out = DMatrix::zeros(r, c);
        for term in &self.terms {
            self.add_term_dense(term, &mut out);
        }
        Ok(out)
    }

    fn add_term_dense(&self, term: &Term, out: &mut DMatrix<f64>) {
        // row/col strides of the canonical layouts
        let row_strides = strides(&self.row_dims);
        let col_strides = strides(&self.col_dims);
        struct FView {
            m: DMatrix<f64>,
            row_off: Vec<usize>,
            col_off: Vec<usize>,
        }
        let views: Vec<FView> = term
            .factors
            .iter()
            .map(|f| {
                let (m, row_axes, col_axes) = match f {
                    Factor::Dense {
                        matrix,
                        row_axes,
                        col_axes,
                    } => (matrix.as_ref().clone(), row_axes.clone(), col_axes.clone()),
                    Factor::WeightScaled {
                        basis,
                        row_axes,
                        col_axes,
                        weights,
                    } => (
                        weight_scaled_dense(basis.q(), row_axes.len(), weights),
                        row_axes.clone(),
                        col_axes.clone(),
                    ),
                };
                let rdims: Vec<usize> = row_axes.iter().map(|&a| self.row_dims[a]).collect();
                let cdims: Vec<usize> = col_axes.iter().map(|&a| self.col_dims[a]).collect();
                let row_off = offset_table(&rdims, &row_axes, &row_strides);
                let col_off = offset_table(&cdims, &col_axes, &col_strides);
                FView {
                    m,
                    row_off,
                    col_off,
                }
            })
            .collect();

        fn recurse(
            views: &[FView],
            depth: usize,
            val: f64,
            roff: usize,
            coff: usize,
            out: &mut DMatrix<f64>,
        ) {
            if depth == views.len() {
                out[(roff, coff)] += val;
                return;
            }
            let fv = &views[depth];
            for rf in 0..fv.m.nrows() {
                for cf in 0..fv.m.ncols() {
                    let x = fv.m[(rf, cf)];
                    if x == 0.0 {
                        continue;
                    }
                    recurse(
                        views,
                        depth + 1,
                        val * x,
                        roff + fv.row_off[rf],
                        coff + fv.col_off[cf],
                        out,
                    );
                }
            }
        }
        recurse(&views, 0, term.coeff, 0, 0, out);
    }
}

impl LinOp for StructuredOperator {
    fn nrows(&self) -> usize {
        self.row_dim()
    }
    fn ncols(&self) -> usize {
        self.col_dim()
    }
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.col_dim());
        self.matvec_impl(v)
    }
    fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.row_dim());
        self.transposed().matvec_impl(u)
    }
}

/// Dense form of `sum_m weights[m] * E_m` on `c` coordinates over alphabet q.
/// Entries depend only on the number of agreeing coordinates, so a length
/// c+1 lookup fills the whole block.
pub(crate) fn weight_scaled_dense(q: usize, c: usize, weights: &[f64]) -> DMatrix<f64> {
    let qf = q as f64;
    // per-coordinate entries: E1 is 1-1/q on agreement, -1/q off; E0 is 1/q
    let mut g = vec![0.0f64; c + 1];
    for (a, ga) in g.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, &w) in weights.iter().enumerate().take(c + 1) {
            if w == 0.0 {
                continue;
            }
            let mut em = 0.0;
            for j in 0..=m.min(a) {
                if m - j > c - a {
                    continue;
                }
                em += util::binomial(a, j) as f64
                    * util::binomial(c - a, m - j) as f64
                    * (1.0 - 1.0 / qf).powi(j as i32)
                    * (-1.0 / qf).powi((m - j) as i32)
                    * (1.0 / qf).powi((c - m) as i32);
            }
            acc += w * em;
        }
        *ga = acc;
    }
    let size = util::checked_pow(q, c).expect("weight-scaled block fits usize");
    DMatrix::from_fn(size, size, |r, col| {
        let mut agree = 0usize;
        let (mut rr, mut cc) = (r, col);
        for _ in 0..c {
            if rr % q == cc % q {
                agree += 1;
            }
            rr /= q;
            cc /= q;
        }
        g[agree]
    })
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
enum Label {
    Col(usize),
    Row(usize),
}

struct TensorState {
    data: Vec<f64>,
    dims: Vec<usize>,
    labels: Vec<Label>,
}

impl TensorState {
    /// Reorder axes so that new axis i is old axis perm[i].
    fn permute(&mut self, perm: &[usize]) {
        debug_assert_eq!(perm.len(), self.dims.len());
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return;
        }
        let old_strides = strides(&self.dims);
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let new_labels: Vec<Label> = perm.iter().map(|&p| self.labels[p]).collect();
        let step: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut out = vec![0.0; self.data.len()];
        // odometer over the output layout, tracking the input offset
        let ndim = new_dims.len();
        let mut digits = vec![0usize; ndim];
        let mut off = 0usize;
        for slot in out.iter_mut() {
            *slot = self.data[off];
            for ax in (0..ndim).rev() {
                digits[ax] += 1;
                off += step[ax];
                if digits[ax] < new_dims[ax] {
                    break;
                }
                off -= step[ax] * new_dims[ax];
                digits[ax] = 0;
            }
        }
        self.data = out;
        self.dims = new_dims;
        self.labels = new_labels;
    }

    /// Bring the axes currently labeled `wanted` to the front, in that order.
    fn move_to_front(&mut self, wanted: &[Label]) {
        let mut perm: Vec<usize> = wanted
            .iter()
            .map(|w| {
                self.labels
                    .iter()
                    .position(|l| l == w)
                    .expect("axis present")
            })
            .collect();
        for i in 0..self.labels.len() {
            if !perm.contains(&i) {
                perm.push(i);
            }
        }
        self.permute(&perm);
    }

    /// Multiply the front group (first `front_axes` axes) by `m`, replacing it
    /// with the given new axes.
    fn apply_matrix_front(&mut self, front_axes: usize, m: &DMatrix<f64>, new: &[(Label, usize)]) {
        let c_tot: usize = self.dims[..front_axes].iter().product();
        let rest: usize = self.dims[front_axes..].iter().product();
        debug_assert_eq!(m.ncols(), c_tot);
        let r_tot = m.nrows();
        let mut out = vec![0.0; r_tot * rest];
        multiply_slab(&self.data, &mut out, &m.transpose(), rest);
        self.data = out;
        let mut dims = Vec::with_capacity(new.len() + self.dims.len() - front_axes);
        let mut labels = Vec::with_capacity(dims.capacity());
        for &(l, d) in new {
            labels.push(l);
            dims.push(d);
        }
        dims.extend_from_slice(&self.dims[front_axes..]);
        labels.extend_from_slice(&self.labels[front_axes..]);
        debug_assert_eq!(dims.iter().product::<usize>(), self.data.len());
        self.dims = dims;
        self.labels = labels;
    }

    /// Multiply one axis (at position `axis`) by a small square matrix.
    fn apply_matrix_mode(&mut self, axis: usize, m: &DMatrix<f64>) {
        let q = self.dims[axis];
        debug_assert_eq!(m.nrows(), q);
        debug_assert_eq!(m.ncols(), q);
        let pre: usize = self.dims[..axis].iter().product();
        let post: usize = self.dims[axis + 1..].iter().product();
        let mut out = vec![0.0; self.data.len()];
        let slab = q * post;
        let mt = m.transpose();
        for i in 0..pre {
            multiply_slab(
                &self.data[i * slab..(i + 1) * slab],
                &mut out[i * slab..(i + 1) * slab],
                &mt,
                post,
            );
        }
        self.data = out;
    }
}

/// `out = M · X` where X is the input slab viewed row-major as
/// (M.ncols() x rest) and `mt` is M transposed. Row-major slabs are
/// transposed column-major views, so this is one gemm `Xᵀ · Mᵀ` on
/// contiguous memory.
fn multiply_slab(input: &[f64], out: &mut [f64], mt: &DMatrix<f64>, rest: usize) {
    use nalgebra::{DMatrixView, DMatrixViewMut};
    let z = DMatrixView::from_slice(input, rest, mt.nrows());
    let mut w = DMatrixViewMut::from_slice(out, rest, mt.ncols());
    w.gemm(1.0, &z, mt, 0.0);
}

fn apply_factor(f: &Factor, st: &mut TensorState, row_dims: &[usize]) {
    match f {
        Factor::Dense {
            matrix,
            row_axes,
            col_axes,
        } => {
            let wanted: Vec<Label> = col_axes.iter().map(|&a| Label::Col(a)).collect();
            st.move_to_front(&wanted);
            let new: Vec<(Label, usize)> = row_axes
                .iter()
                .map(|&a| (Label::Row(a), row_dims[a]))
                .collect();
            st.apply_matrix_front(col_axes.len(), matrix, &new);
        }
        Factor::WeightScaled {
            basis,
            row_axes,
            col_axes,
            weights,
        } => {
            let c = col_axes.len();
            if c == 0 {
                for x in &mut st.data {
                    *x *= weights[0];
                }
                return;
            }
            let wanted: Vec<Label> = col_axes.iter().map(|&a| Label::Col(a)).collect();
            st.move_to_front(&wanted);
            let b = basis.matrix();
            let bt = b.transpose();
            for axis in 0..c {
                st.apply_matrix_mode(axis, &bt);
            }
            // scale by the weight of the joint basis pattern on the front group
            let q = basis.q();
            let group: usize = st.dims[..c].iter().product();
            let rest: usize = st.dims[c..].iter().product();
            for p in 0..group {
                let mut weight = 0usize;
                let mut v = p;
                for _ in 0..c {
                    if v % q != 0 {
                        weight += 1;
                    }
                    v /= q;
                }
                let w = weights[weight];
                let row = &mut st.data[p * rest..(p + 1) * rest];
                if w == 1.0 {
                    continue;
                }
                for x in row {
                    *x *= w;
                }
            }
            for axis in 0..c {
                st.apply_matrix_mode(axis, b);
            }
            // relabel the front group as the paired row axes
            for (i, &a) in row_axes.iter().enumerate() {
                st.labels[i] = Label::Row(a);
            }
        }
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Flat offsets contributed by a factor's local index into the full layout.
fn offset_table(local_dims: &[usize], axes: &[usize], full_strides: &[usize]) -> Vec<usize> {
    let total: usize = local_dims.iter().product();
    let mut table = vec![0usize; total];
    for (idx, slot) in table.iter_mut().enumerate() {
        let mut rem = idx;
        let mut off = 0usize;
        for j in (0..local_dims.len()).rev() {
            let d = rem % local_dims[j];
            rem /= local_dims[j];
            off += d * full_strides[axes[j]];
        }
        *slot = off;
    }
    table
}
