//! Orthogonal arrays of length k over the alphabet {0, .., q-1}, their two
//! canonical families (k-sum and element distinctness), exhaustive
//! verification of the unique-completion property, and the induced boolean
//! function on `[q]^n`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::util;

/// A size q^(k-1) subset of `[q]^k` where any k-1 coordinates determine the
/// remaining one uniquely. Members are stored sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrthogonalArray {
    k: usize,
    q: usize,
    members: Vec<Vec<u32>>,
    membership: Vec<u64>,
}

impl OrthogonalArray {
    /// Tuples over the cyclic group Z_q summing to t.
    pub fn ksum(q: usize, k: usize, t: u32) -> Result<OrthogonalArray> {
        if q < 2 || k < 1 {
            return Err(Error::InvalidParameter(format!(
                "need q >= 2 and k >= 1, got q={q}, k={k}"
            )));
        }
        if t as usize >= q {
            return Err(Error::InvalidParameter(format!(
                "target {t} out of range for alphabet {q}"
            )));
        }
        let count = util::checked_pow(q, k - 1).ok_or(Error::TooLarge {
            entries: 0,
            cap: usize::MAX as u128,
        })?;
        let mut members = Vec::with_capacity(count);
        // lexicographic prefixes; the last symbol is the unique completion
        let mut prefix = vec![0u32; k - 1];
        for _ in 0..count {
            let sum: u32 = prefix.iter().fold(0, |acc, &x| (acc + x) % q as u32);
            let last = (t + q as u32 - sum) % q as u32;
            let mut tuple = prefix.clone();
            tuple.push(last);
            members.push(tuple);
            for j in (0..k - 1).rev() {
                prefix[j] += 1;
                if (prefix[j] as usize) < q {
                    break;
                }
                prefix[j] = 0;
            }
        }
        Ok(Self::from_sorted_members(members, k, q))
    }

    /// The diagonal pairs {(a, a)}; length-2 array for element distinctness.
    pub fn distinctness(q: usize) -> Result<OrthogonalArray> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!("need q >= 2, got q={q}")));
        }
        let members = (0..q as u32).map(|a| vec![a, a]).collect();
        Ok(Self::from_sorted_members(members, 2, q))
    }

    /// Build from arbitrary tuples (sorting and deduplicating); callers that
    /// ingest untrusted data should run [`verify_oa`] on the result.
    pub fn from_members(mut members: Vec<Vec<u32>>, k: usize, q: usize) -> Result<OrthogonalArray> {
        for t in &members {
            if t.len() != k {
                return Err(Error::InvalidArray(format!(
                    "tuple {:?} does not have length {k}",
                    t
                )));
            }
            if t.iter().any(|&x| x as usize >= q) {
                return Err(Error::InvalidArray(format!(
                    "tuple {:?} has a symbol outside [0, {q})",
                    t
                )));
            }
        }
        members.sort();
        members.dedup();
        Ok(Self::from_sorted_members(members, k, q))
    }

    fn from_sorted_members(members: Vec<Vec<u32>>, k: usize, q: usize) -> OrthogonalArray {
        let total = util::checked_pow(q, k).expect("q^k fits usize");
        let mut membership = vec![0u64; total.div_ceil(64)];
        for m in &members {
            let idx = util::encode_base_q(m, q);
            membership[idx / 64] |= 1 << (idx % 64);
        }
        OrthogonalArray {
            k,
            q,
            members,
            membership,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Members in canonical (lexicographic) order.
    pub fn members(&self) -> &[Vec<u32>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, tuple: &[u32]) -> bool {
        debug_assert_eq!(tuple.len(), self.k);
        let idx = util::encode_base_q(tuple, self.q);
        self.contains_flat(idx)
    }

    /// Membership by flat base-q index of the tuple.
    pub fn contains_flat(&self, idx: usize) -> bool {
        self.membership[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn verify(&self) -> OaCheck {
        verify_oa(&self.members, self.k, self.q)
    }
}

/// Outcome of the exhaustive unique-completion check.
#[derive(Clone, Debug)]
pub struct OaCheck {
    pub ok: bool,
    pub violation: Option<OaViolation>,
}

#[derive(Clone, Debug)]
pub enum OaViolation {
    WrongSize {
        expected: usize,
        actual: usize,
    },
    Duplicate {
        tuple: Vec<u32>,
    },
    SymbolRange {
        tuple: Vec<u32>,
    },
    /// Erasing `coordinate` left `partial` with `count` completions (≠ 1).
    Completion {
        coordinate: usize,
        partial: Vec<u32>,
        count: usize,
    },
}

impl fmt::Display for OaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OaViolation::WrongSize { expected, actual } => {
                write!(f, "expected {expected} tuples, found {actual}")
            }
            OaViolation::Duplicate { tuple } => write!(f, "duplicate tuple {tuple:?}"),
            OaViolation::SymbolRange { tuple } => {
                write!(f, "tuple {tuple:?} has a symbol out of range")
            }
            OaViolation::Completion {
                coordinate,
                partial,
                count,
            } => write!(
                f,
                "coordinate {coordinate}: partial tuple {partial:?} has {count} completions"
            ),
        }
    }
}

/// Exhaustive check that `members` forms an orthogonal array of length k:
/// correct size and, for every coordinate, every assignment of the other k-1
/// coordinates has exactly one completion.
pub fn verify_oa(members: &[Vec<u32>], k: usize, q: usize) -> OaCheck {
    let fail = |violation| OaCheck {
        ok: false,
        violation: Some(violation),
    };

    for t in members {
        if t.len() != k || t.iter().any(|&x| x as usize >= q) {
            return fail(OaViolation::SymbolRange { tuple: t.clone() });
        }
    }
    let expected = match util::checked_pow(q, k - 1) {
        Some(e) => e,
        None => {
            return fail(OaViolation::WrongSize {
                expected: usize::MAX,
                actual: members.len(),
            })
        }
    };
    if members.len() != expected {
        return fail(OaViolation::WrongSize {
            expected,
            actual: members.len(),
        });
    }
    let mut sorted: Vec<&Vec<u32>> = members.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return fail(OaViolation::Duplicate {
                tuple: w[0].clone(),
            });
        }
    }
    // For each coordinate, erasing it must hit every partial tuple exactly
    // once; with |T| = q^(k-1) distinct members, "no partial repeated" is
    // equivalent to that.
    for i in 0..k {
        let mut seen = vec![false; expected];
        for t in members {
            let mut idx = 0usize;
            for (j, &x) in t.iter().enumerate() {
                if j != i {
                    idx = idx * q + x as usize;
                }
            }
            if seen[idx] {
                let mut partial = t.clone();
                partial.remove(i);
                return fail(OaViolation::Completion {
                    coordinate: i,
                    partial,
                    count: 2,
                });
            }
            seen[idx] = true;
        }
    }
    OaCheck {
        ok: true,
        violation: None,
    }
}

/// Assignment of an orthogonal array to each k-subset of coordinates.
#[derive(Clone, Debug)]
pub enum ArrayAssignment {
    /// One array shared by every subset.
    Uniform(OrthogonalArray),
    /// Arrays keyed by the sorted subset.
    PerSubset(BTreeMap<Vec<usize>, OrthogonalArray>),
}

impl ArrayAssignment {
    pub fn k(&self) -> Option<usize> {
        match self {
            ArrayAssignment::Uniform(a) => Some(a.k()),
            ArrayAssignment::PerSubset(m) => m.values().next().map(|a| a.k()),
        }
    }

    pub fn q(&self) -> Option<usize> {
        match self {
            ArrayAssignment::Uniform(a) => Some(a.q()),
            ArrayAssignment::PerSubset(m) => m.values().next().map(|a| a.q()),
        }
    }

    pub fn array_for(&self, subset: &[usize]) -> Result<&OrthogonalArray> {
        match self {
            ArrayAssignment::Uniform(a) => Ok(a),
            ArrayAssignment::PerSubset(m) => m.get(subset).ok_or_else(|| {
                Error::InvalidParameter(format!("no array assigned to subset {subset:?}"))
            }),
        }
    }

    /// Check every referenced array: consistent k and q, passes verify_oa,
    /// and (per-subset mode) covers all k-subsets of the coordinates.
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        let check_one = |a: &OrthogonalArray| -> Result<()> {
            if a.k() != k {
                return Err(Error::InvalidArray(format!(
                    "array has length {}, expected {k}",
                    a.k()
                )));
            }
            let chk = a.verify();
            if !chk.ok {
                return Err(Error::InvalidArray(
                    chk.violation.map(|v| v.to_string()).unwrap_or_default(),
                ));
            }
            Ok(())
        };
        match self {
            ArrayAssignment::Uniform(a) => check_one(a),
            ArrayAssignment::PerSubset(_) => {
                let q = self
                    .q()
                    .ok_or_else(|| Error::InvalidArray("per-subset assignment is empty".into()))?;
                for subset in util::k_subsets(n, k) {
                    let a = self.array_for(&subset)?;
                    if a.q() != q {
                        return Err(Error::InvalidArray(
                            "arrays disagree on alphabet size".into(),
                        ));
                    }
                    check_one(a)?;
                }
                Ok(())
            }
        }
    }
}

/// The k-orthogonal-array function: 1 iff some k-subset projection of x lies
/// in its assigned array. Brute force over all C(n, k) subsets.
pub fn evaluate_f(x: &[u32], assignment: &ArrayAssignment, n: usize, k: usize) -> Result<bool> {
    if x.len() != n || n < k || k < 1 {
        return Err(Error::InvalidParameter(format!(
            "input length {} with n={n}, k={k}",
            x.len()
        )));
    }
    let q = assignment
        .q()
        .ok_or_else(|| Error::InvalidArray("empty assignment".into()))?;
    if x.iter().any(|&s| s as usize >= q) {
        return Err(Error::InvalidParameter("symbol out of range".into()));
    }
    let mut proj = vec![0u32; k];
    for subset in util::k_subsets(n, k) {
        for (j, &c) in subset.iter().enumerate() {
            proj[j] = x[c];
        }
        if assignment.array_for(&subset)?.contains(&proj) {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn ksum_small_examples() {
        let a = OrthogonalArray::ksum(3, 2, 0).unwrap();
        assert_eq!(a.members(), &[vec![0, 0], vec![1, 2], vec![2, 1]]);

        let a = OrthogonalArray::ksum(2, 3, 1).unwrap();
        assert_eq!(a.len(), 4);
        for m in a.members() {
            assert_eq!(m.iter().sum::<u32>() % 2, 1);
        }

        let a = OrthogonalArray::ksum(9, 2, 5).unwrap();
        assert_eq!(a.len(), 9);
        assert!(a.verify().ok);

        assert!(OrthogonalArray::ksum(4, 2, 4).is_err());
    }

    #[test]
    fn distinctness_small_examples() {
        let a = OrthogonalArray::distinctness(2).unwrap();
        assert_eq!(a.members(), &[vec![0, 0], vec![1, 1]]);
        assert!(OrthogonalArray::distinctness(3).unwrap().verify().ok);
        let a = OrthogonalArray::distinctness(5).unwrap();
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn verify_rejects_bad_sets() {
        // wrong size
        let chk = verify_oa(&[vec![0, 0], vec![0, 1], vec![1, 0]], 2, 2);
        assert!(!chk.ok);
        assert!(matches!(chk.violation, Some(OaViolation::WrongSize { .. })));

        // shared second symbol: completion fails
        let chk = verify_oa(&[vec![0, 0], vec![1, 0]], 2, 2);
        assert!(!chk.ok);
        assert!(matches!(
            chk.violation,
            Some(OaViolation::Completion { .. })
        ));

        // the known-good family passes
        assert!(verify_oa(OrthogonalArray::ksum(3, 2, 0).unwrap().members(), 2, 3).ok);
    }

    #[test]
    fn completion_map_is_a_bijection() {
        for (q, k, t) in [(4usize, 2usize, 1u32), (3, 3, 2), (5, 2, 0)] {
            let a = OrthogonalArray::ksum(q, k, t).unwrap();
            for i in 0..k {
                let mut seen = HashSet::new();
                for m in a.members() {
                    let mut partial = m.clone();
                    partial.remove(i);
                    assert!(seen.insert(partial), "repeat after erasing {i}");
                }
                assert_eq!(seen.len(), a.len());
            }
        }
    }

    #[test]
    fn evaluate_f_examples() {
        let assign = ArrayAssignment::Uniform(OrthogonalArray::ksum(3, 2, 0).unwrap());
        assert!(evaluate_f(&[1, 2, 0], &assign, 3, 2).unwrap());
        // brute force over the three pairs: (1,1), (1,0), (1,0) never sum to 0 mod 3
        assert!(!evaluate_f(&[1, 1, 0], &assign, 3, 2).unwrap());

        let d = ArrayAssignment::Uniform(OrthogonalArray::distinctness(2).unwrap());
        assert!(!evaluate_f(&[0, 1], &d, 2, 2).unwrap());
        assert!(evaluate_f(&[1, 1], &d, 2, 2).unwrap());

        assert!(evaluate_f(&[0, 1], &d, 3, 2).is_err());
    }

    proptest! {
        #[test]
        fn evaluate_f_permutation_invariant(
            x in proptest::collection::vec(0u32..4, 4),
            swap in (0usize..4, 0usize..4),
        ) {
            // the uniform k-sum assignment is fully permutation symmetric
            let assign = ArrayAssignment::Uniform(OrthogonalArray::ksum(4, 2, 1).unwrap());
            let base = evaluate_f(&x, &assign, 4, 2).unwrap();
            let mut y = x.clone();
            y.swap(swap.0, swap.1);
            prop_assert_eq!(base, evaluate_f(&y, &assign, 4, 2).unwrap());
        }

        #[test]
        fn verify_rejects_any_single_replacement(
            q in 2usize..6,
            k in 2usize..4,
            t in 0u32..2,
            victim in 0usize..64,
            donor in 0usize..64,
        ) {
            // replacing one member by a copy of another always breaks the
            // unique-completion property
            let a = OrthogonalArray::ksum(q, k, t % q as u32).unwrap();
            let mut members = a.members().to_vec();
            let v = victim % members.len();
            let d = donor % members.len();
            prop_assume!(v != d);
            members[v] = members[d].clone();
            prop_assert!(!verify_oa(&members, k, q).ok);
        }
    }
}
