//! Assembly of the adversary matrix: the per-subset blocks, their stack, the
//! coefficient schedule, legal-column restriction, the entrywise coordinate
//! masks, and the remapped stack whose norm bounds the masked norm.
//!
//! Layout conventions, fixed once for all modules: subsets of coordinates are
//! enumerated lexicographically; array members lexicographically; flat input
//! indices are base q with coordinate 0 most significant. A stacked operator
//! has row axes `[subset block, member, complement coordinates in increasing
//! order]` and column axes `[coordinate 0, .., coordinate n-1]`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hamming_scheme::{make_eigenbasis, EigenBasis, Factor, LinOp, StructuredOperator};
use crate::orthogonal_array::{ArrayAssignment, OrthogonalArray};
use crate::util;

/// Coefficients weighting the complement-weight grades of each block.
///
/// The canonical schedule is `alpha_m = max(2 - m / n^(k/(k+1)), 0) *
/// n^(k(1-k)/(2(k+1)))` for m = 0..=n-k, and zero beyond.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSchedule {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

/// The canonical schedule for the given problem size.
pub fn build_alphas(n: usize, k: usize) -> AlphaSchedule {
    assert!(n >= k && k >= 1, "need n >= k >= 1");
    let nf = n as f64;
    let kf = k as f64;
    let r = nf.powf(kf / (kf + 1.0));
    let scale = nf.powf(kf * (1.0 - kf) / (2.0 * (kf + 1.0)));
    let values = (0..=n - k)
        .map(|m| (2.0 - m as f64 / r).max(0.0) * scale)
        .collect();
    AlphaSchedule { n, k, values }
}

impl AlphaSchedule {
    /// A schedule with explicit values (length n-k+1); used for experiments
    /// with non-canonical coefficients.
    pub fn from_values(n: usize, k: usize, values: Vec<f64>) -> Result<AlphaSchedule> {
        if n < k || k < 1 {
            return Err(Error::InvalidParameter(format!(
                "need n >= k >= 1, got n={n}, k={k}"
            )));
        }
        if values.len() != n - k + 1 {
            return Err(Error::InvalidParameter(format!(
                "need {} values, got {}",
                n - k + 1,
                values.len()
            )));
        }
        Ok(AlphaSchedule { n, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `alpha_m`, zero beyond the stored range.
    pub fn alpha(&self, m: usize) -> f64 {
        self.values.get(m).copied().unwrap_or(0.0)
    }

    /// Stored values `alpha_0 ..= alpha_{n-k}`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_alpha(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Consecutive differences `alpha_m - alpha_{m+1}` for m = 0..n-k-1;
    /// these are the coefficients of the blocks missing the masked
    /// coordinate (the jump past the stored range never enters because the
    /// matching projector on one dimension less vanishes).
    pub fn diffs(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[0] - w[1]).collect()
    }

    pub fn max_diff_squared(&self) -> f64 {
        self.diffs().iter().map(|d| d * d).fold(0.0, f64::max)
    }
}

/// Full problem description: size, alphabet, array assignment and schedule.
#[derive(Clone, Debug)]
pub struct AdversaryInstance {
    n: usize,
    k: usize,
    q: usize,
    assignment: ArrayAssignment,
    alphas: AlphaSchedule,
    subsets: Vec<Vec<usize>>,
    basis: Arc<EigenBasis>,
}

impl AdversaryInstance {
    /// Validates sizes and every referenced array, and attaches the canonical
    /// coefficient schedule.
    pub fn new(n: usize, k: usize, q: usize, assignment: ArrayAssignment) -> Result<Self> {
        if k < 1 || n < k {
            return Err(Error::InvalidParameter(format!(
                "need n >= k >= 1, got n={n}, k={k}"
            )));
        }
        if q < 2 {
            return Err(Error::InvalidParameter(format!("need q >= 2, got q={q}")));
        }
        if assignment.q() != Some(q) {
            return Err(Error::InvalidParameter(
                "assignment alphabet differs from q".into(),
            ));
        }
        assignment.validate(n, k)?;
        util::checked_pow(q, n).ok_or(Error::TooLarge {
            entries: u128::MAX,
            cap: usize::MAX as u128,
        })?;
        let alphas = build_alphas(n, k);
        let subsets = util::k_subsets(n, k);
        let basis = Arc::new(make_eigenbasis(q)?);
        Ok(AdversaryInstance {
            n,
            k,
            q,
            assignment,
            alphas,
            subsets,
            basis,
        })
    }

    pub fn with_alphas(mut self, alphas: AlphaSchedule) -> Result<Self> {
        if alphas.n() != self.n || alphas.k() != self.k {
            return Err(Error::InvalidParameter("schedule size mismatch".into()));
        }
        self.alphas = alphas;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn assignment(&self) -> &ArrayAssignment {
        &self.assignment
    }

    pub fn alphas(&self) -> &AlphaSchedule {
        &self.alphas
    }

    /// k-subsets of coordinates in lexicographic order; block s of the stack
    /// belongs to `subsets()[s]`.
    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    /// Rows of the stacked matrix: C(n,k) * q^(n-1).
    pub fn row_count(&self) -> usize {
        self.subsets.len() * util::checked_pow(self.q, self.n - 1).expect("q^(n-1) fits")
    }

    pub fn col_count(&self) -> usize {
        util::checked_pow(self.q, self.n).expect("q^n fits")
    }

    /// The input string labeling a row, as a flat base-q index: the member
    /// tuple on the block's subset, the complement digits elsewhere.
    pub fn row_input(&self, row: usize) -> usize {
        let block_rows = util::checked_pow(self.q, self.n - 1).unwrap();
        let s = row / block_rows;
        let rem = row % block_rows;
        let comp_size = util::checked_pow(self.q, self.n - self.k).unwrap();
        let member_idx = rem / comp_size;
        let z = rem % comp_size;
        let subset = &self.subsets[s];
        let member = &self.assignment.array_for(subset).unwrap().members()[member_idx];
        let mut digits = vec![0u32; self.n];
        for (j, &c) in subset.iter().enumerate() {
            digits[c] = member[j];
        }
        let zd = util::decode_base_q(z, self.n - self.k, self.q);
        let mut zi = 0usize;
        for (c, digit) in digits.iter_mut().enumerate() {
            if !subset.contains(&c) {
                *digit = zd[zi];
                zi += 1;
            }
        }
        util::encode_base_q(&digits, self.q)
    }

    /// Flat input index for every row of the stack.
    pub fn row_inputs(&self) -> Vec<usize> {
        (0..self.row_count()).map(|r| self.row_input(r)).collect()
    }

    fn complement(&self, subset: &[usize]) -> Vec<usize> {
        (0..self.n).filter(|c| !subset.contains(c)).collect()
    }
}

/// `sqrt(q)` times the rows of the below-maximal-weight projector on `[q]^k`
/// indexed by the array members, in canonical member order. Entry
/// `[t, y] = sqrt(q) * (1[t = y] - prod_i E1[t_i, y_i])`.
pub fn build_f(array: &OrthogonalArray) -> DMatrix<f64> {
    let q = array.q();
    let k = array.k();
    let qf = q as f64;
    let sq = qf.sqrt();
    let diag = 1.0 - 1.0 / qf;
    let off = -1.0 / qf;
    let cols = util::checked_pow(q, k).expect("q^k fits");
    let mut out = DMatrix::zeros(array.len(), cols);
    for (r, member) in array.members().iter().enumerate() {
        let mut digits = vec![0u32; k];
        for y in 0..cols {
            let mut prod = 1.0;
            let mut equal = true;
            for (j, &d) in digits.iter().enumerate() {
                if d == member[j] {
                    prod *= diag;
                } else {
                    prod *= off;
                    equal = false;
                }
            }
            let id = if equal { 1.0 } else { 0.0 };
            out[(r, y)] = sq * (id - prod);
            for j in (0..k).rev() {
                digits[j] += 1;
                if (digits[j] as usize) < q {
                    break;
                }
                digits[j] = 0;
            }
        }
    }
    out
}

/// The image of the block matrix under the coordinate remap at the given
/// position within the subset: the below-maximal-weight projector is replaced
/// by the uniform projector at that position and the complement projector at
/// the others. Entry `[t, y] = sqrt(q) * (1/q) * prod_{j != p} E1[t_j, y_j]`.
fn build_f_mapped(array: &OrthogonalArray, pos_in_subset: usize) -> DMatrix<f64> {
    let q = array.q();
    let k = array.k();
    let qf = q as f64;
    let sq = qf.sqrt();
    let diag = 1.0 - 1.0 / qf;
    let off = -1.0 / qf;
    let cols = util::checked_pow(q, k).expect("q^k fits");
    let mut out = DMatrix::zeros(array.len(), cols);
    for (r, member) in array.members().iter().enumerate() {
        let mut digits = vec![0u32; k];
        for y in 0..cols {
            let mut prod = 1.0 / qf;
            for (j, &d) in digits.iter().enumerate() {
                if j == pos_in_subset {
                    continue;
                }
                prod *= if d == member[j] { diag } else { off };
            }
            out[(r, y)] = sq * prod;
            for j in (0..k).rev() {
                digits[j] += 1;
                if (digits[j] as usize) < q {
                    break;
                }
                digits[j] = 0;
            }
        }
    }
    out
}

fn block_row_dims(inst: &AdversaryInstance) -> Vec<usize> {
    let member_count = util::checked_pow(inst.q(), inst.k() - 1).unwrap();
    let mut dims = vec![member_count];
    dims.extend(std::iter::repeat_n(inst.q(), inst.n() - inst.k()));
    dims
}

/// One block of the stack for a single subset: the array block acting on the
/// subset coordinates tensored with the schedule-weighted projector
/// combination on the complement.
pub fn build_gtilde(inst: &AdversaryInstance, subset_idx: usize) -> Result<StructuredOperator> {
    let subset = inst
        .subsets()
        .get(subset_idx)
        .ok_or_else(|| Error::InvalidParameter(format!("subset index {subset_idx}")))?
        .clone();
    let comp = inst.complement(&subset);
    let row_dims = block_row_dims(inst);
    let col_dims = vec![inst.q(); inst.n()];
    let mut op = StructuredOperator::new(row_dims, col_dims);
    let f = build_f(inst.assignment().array_for(&subset)?);
    let weights = inst.alphas().values().to_vec();
    op.push_term(
        1.0,
        vec![
            Factor::weight_scaled(
                inst.basis().clone(),
                (1..=comp.len()).collect(),
                comp,
                weights,
            ),
            Factor::dense(f, vec![0], subset),
        ],
    )?;
    Ok(op)
}

fn one_hot_column(len: usize, idx: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(len, 1);
    m[(idx, 0)] = 1.0;
    m
}

/// The full stack: blocks in lexicographic subset order on the block row axis.
pub fn build_gamma_tilde(inst: &AdversaryInstance) -> Result<StructuredOperator> {
    let mut row_dims = vec![inst.subsets().len()];
    row_dims.extend(block_row_dims(inst));
    let col_dims = vec![inst.q(); inst.n()];
    let mut op = StructuredOperator::new(row_dims, col_dims);
    for (s, subset) in inst.subsets().iter().enumerate() {
        let comp = inst.complement(subset);
        let f = build_f(inst.assignment().array_for(subset)?);
        let weights = inst.alphas().values().to_vec();
        op.push_term(
            1.0,
            vec![
                Factor::weight_scaled(
                    inst.basis().clone(),
                    (2..=comp.len() + 1).collect(),
                    comp,
                    weights,
                ),
                Factor::dense(f, vec![1], subset.clone()),
                Factor::dense(one_hot_column(inst.subsets().len(), s), vec![0], vec![]),
            ],
        )?;
    }
    Ok(op)
}

/// The stack remapped at one coordinate so that its entrywise product with
/// the coordinate mask equals the original's: blocks containing the
/// coordinate get the mapped array block; blocks missing it telescope into
/// difference coefficients with the uniform projector at that coordinate.
///
/// `coord` is 0-based; the canonical call uses coordinate 0.
pub fn build_gamma_tilde_1(inst: &AdversaryInstance, coord: usize) -> Result<StructuredOperator> {
    if coord >= inst.n() {
        return Err(Error::InvalidParameter(format!(
            "coordinate {coord} out of range for n={}",
            inst.n()
        )));
    }
    let q = inst.q();
    let mut row_dims = vec![inst.subsets().len()];
    row_dims.extend(block_row_dims(inst));
    let col_dims = vec![q; inst.n()];
    let mut op = StructuredOperator::new(row_dims, col_dims);
    let inv = 1.0 / q as f64;
    let e0 = DMatrix::from_element(q, q, inv);
    for (s, subset) in inst.subsets().iter().enumerate() {
        let comp = inst.complement(subset);
        let block_sel = Factor::dense(one_hot_column(inst.subsets().len(), s), vec![0], vec![]);
        if let Some(pos) = subset.iter().position(|&c| c == coord) {
            let f_mapped = build_f_mapped(inst.assignment().array_for(subset)?, pos);
            let weights = inst.alphas().values().to_vec();
            op.push_term(
                1.0,
                vec![
                    Factor::weight_scaled(
                        inst.basis().clone(),
                        (2..=comp.len() + 1).collect(),
                        comp,
                        weights,
                    ),
                    Factor::dense(f_mapped, vec![1], subset.clone()),
                    block_sel,
                ],
            )?;
        } else {
            // row axis of the masked coordinate within this block's layout
            let pos_in_comp = comp.iter().position(|&c| c == coord).unwrap();
            let rest: Vec<usize> = comp.iter().copied().filter(|&c| c != coord).collect();
            let rest_row_axes: Vec<usize> = comp
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != coord)
                .map(|(j, _)| j + 2)
                .collect();
            let f = build_f(inst.assignment().array_for(subset)?);
            let diffs = inst.alphas().diffs();
            op.push_term(
                1.0,
                vec![
                    Factor::weight_scaled(inst.basis().clone(), rest_row_axes, rest, diffs),
                    Factor::dense(e0.clone(), vec![pos_in_comp + 2], vec![coord]),
                    Factor::dense(f, vec![1], subset.clone()),
                    block_sel,
                ],
            )?;
        }
    }
    Ok(op)
}

/// Bitset over the q^n column labels marking the inputs on which the function
/// evaluates to 0.
#[derive(Clone, Debug)]
pub struct LegalColumnMask {
    bits: Vec<u64>,
    legal_count: usize,
    total: usize,
}

impl LegalColumnMask {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn legal_count(&self) -> usize {
        self.legal_count
    }

    pub fn legal_fraction(&self) -> f64 {
        self.legal_count as f64 / self.total as f64
    }

    pub fn is_legal(&self, idx: usize) -> bool {
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn legal_indices(&self) -> Vec<usize> {
        (0..self.total).filter(|&i| self.is_legal(i)).collect()
    }
}

#[cfg(test)]
impl LegalColumnMask {
    pub(crate) fn all_legal_for_tests(total: usize) -> Self {
        LegalColumnMask {
            bits: vec![u64::MAX; total.div_ceil(64)],
            legal_count: total,
            total,
        }
    }
}

/// Enumerate all q^n columns and flag each by the function value. Errors if
/// the enumeration exceeds the configured column cap.
pub fn legal_mask(inst: &AdversaryInstance) -> Result<LegalColumnMask> {
    let total = inst.col_count();
    let cap = util::column_cap();
    if total > cap {
        return Err(Error::TooLarge {
            entries: total as u128,
            cap: cap as u128,
        });
    }
    let q = inst.q();
    let n = inst.n();
    let arrays: Vec<&OrthogonalArray> = inst
        .subsets()
        .iter()
        .map(|s| inst.assignment().array_for(s).unwrap())
        .collect();
    let mut bits = vec![0u64; total.div_ceil(64)];
    let mut digits = vec![0u32; n];
    let mut legal_count = 0usize;
    for y in 0..total {
        let mut hit = false;
        for (subset, array) in inst.subsets().iter().zip(&arrays) {
            let mut idx = 0usize;
            for &c in subset {
                idx = idx * q + digits[c] as usize;
            }
            if array.contains_flat(idx) {
                hit = true;
                break;
            }
        }
        if !hit {
            bits[y / 64] |= 1 << (y % 64);
            legal_count += 1;
        }
        for j in (0..n).rev() {
            digits[j] += 1;
            if (digits[j] as usize) < q {
                break;
            }
            digits[j] = 0;
        }
    }
    Ok(LegalColumnMask {
        bits,
        legal_count,
        total,
    })
}

/// A column-restricted view of an operator: matvecs embed the reduced vector
/// into the full column space with zeros on the removed columns.
pub struct RestrictedOperator {
    inner: StructuredOperator,
    legal: Vec<usize>,
}

impl RestrictedOperator {
    pub fn inner(&self) -> &StructuredOperator {
        &self.inner
    }

    pub fn legal_columns(&self) -> &[usize] {
        &self.legal
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let full = self.inner.dense()?;
        Ok(full.select_columns(self.legal.iter()))
    }
}

impl LinOp for RestrictedOperator {
    fn nrows(&self) -> usize {
        self.inner.row_dim()
    }
    fn ncols(&self) -> usize {
        self.legal.len()
    }
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.legal.len());
        let mut full = vec![0.0; self.inner.col_dim()];
        for (&c, &x) in self.legal.iter().zip(v) {
            full[c] = x;
        }
        self.inner.matvec(&full)
    }
    fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        let full = self.inner.rmatvec(u);
        self.legal.iter().map(|&c| full[c]).collect()
    }
}

/// Drop the masked-out columns. Rejects an all-illegal mask (the restricted
/// matrix must be non-zero) and mismatched dimensions.
pub fn restrict_columns(
    op: StructuredOperator,
    mask: &LegalColumnMask,
) -> Result<RestrictedOperator> {
    if mask.total() != op.col_dim() {
        return Err(Error::DimensionMismatch(format!(
            "mask covers {} columns, operator has {}",
            mask.total(),
            op.col_dim()
        )));
    }
    if mask.legal_count() == 0 {
        return Err(Error::Degenerate("every column is illegal".into()));
    }
    Ok(RestrictedOperator {
        inner: op,
        legal: mask.legal_indices(),
    })
}

/// Entrywise coordinate mask on a dense matrix: keep entries whose row and
/// column input labels differ at the coordinate, zero the rest. Labels are
/// flat base-q input indices.
pub fn delta_hadamard(
    matrix: &DMatrix<f64>,
    row_inputs: &[usize],
    col_inputs: &[usize],
    n: usize,
    q: usize,
    coord: usize,
) -> Result<DMatrix<f64>> {
    if coord >= n {
        return Err(Error::InvalidParameter(format!(
            "coordinate {coord} out of range for n={n}"
        )));
    }
    if row_inputs.len() != matrix.nrows() || col_inputs.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "labels {}x{} vs matrix {}x{}",
            row_inputs.len(),
            col_inputs.len(),
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let row_digit: Vec<u32> = row_inputs
        .iter()
        .map(|&x| util::digit_at(x, coord, n, q))
        .collect();
    let col_digit: Vec<u32> = col_inputs
        .iter()
        .map(|&y| util::digit_at(y, coord, n, q))
        .collect();
    let mut out = matrix.clone();
    for c in 0..out.ncols() {
        for r in 0..out.nrows() {
            if row_digit[r] == col_digit[c] {
                out[(r, c)] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Dense restricted matrix together with the input labels needed for the
/// coordinate masks and the symmetric reduction.
pub struct RectangularAdversary {
    pub matrix: DMatrix<f64>,
    /// Flat input index per row (rows repeat an input once per containing subset).
    pub row_inputs: Vec<usize>,
    /// Flat input index per (legal) column.
    pub col_inputs: Vec<usize>,
    pub n: usize,
    pub q: usize,
}

/// Dense restricted matrix with labels, for the masked norms and the
/// symmetric reduction. Dense mode only.
pub fn build_gamma_rectangular(inst: &AdversaryInstance) -> Result<RectangularAdversary> {
    let gt = build_gamma_tilde(inst)?;
    let mask = legal_mask(inst)?;
    let restricted = restrict_columns(gt, &mask)?;
    let matrix = restricted.dense()?;
    Ok(RectangularAdversary {
        matrix,
        row_inputs: inst.row_inputs(),
        col_inputs: restricted.legal_columns().to_vec(),
        n: inst.n(),
        q: inst.q(),
    })
}
