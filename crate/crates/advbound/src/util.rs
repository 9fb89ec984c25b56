//! Small combinatorial and indexing helpers shared across modules.

use std::sync::OnceLock;

/// Binomial coefficient as an exact integer; panics on overflow of u128.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Binomial coefficient in f64, for closed-form bound evaluation at large n.
pub fn binomial_f64(n: f64, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i as f64) / (i + 1) as f64;
    }
    if acc < 0.0 {
        0.0
    } else {
        acc
    }
}

/// All k-element subsets of {0, .., n-1} in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // advance to the next subset in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// `base^exp` checked against usize range.
pub fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

/// Decode a flat index into base-q digits, coordinate 0 most significant.
pub fn decode_base_q(mut idx: usize, n: usize, q: usize) -> Vec<u32> {
    let mut digits = vec![0u32; n];
    for j in (0..n).rev() {
        digits[j] = (idx % q) as u32;
        idx /= q;
    }
    digits
}

/// Encode base-q digits into a flat index, coordinate 0 most significant.
pub fn encode_base_q(digits: &[u32], q: usize) -> usize {
    let mut idx = 0usize;
    for &d in digits {
        idx = idx * q + d as usize;
    }
    idx
}

/// Digit of a flat index at a given coordinate.
pub fn digit_at(idx: usize, coord: usize, n: usize, q: usize) -> u32 {
    let shift = n - 1 - coord;
    let mut v = idx;
    for _ in 0..shift {
        v /= q;
    }
    (v % q) as u32
}

const DEFAULT_DENSE_CAP: usize = 1 << 26;
const DEFAULT_COLUMN_CAP: usize = 1 << 24;

/// Entry-count cap for dense materialization; override with ADVBOUND_DENSE_CAP.
pub fn dense_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| env_cap("ADVBOUND_DENSE_CAP", DEFAULT_DENSE_CAP))
}

/// Column-enumeration cap for structured runs; override with ADVBOUND_COLUMN_CAP.
pub fn column_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| env_cap("ADVBOUND_COLUMN_CAP", DEFAULT_COLUMN_CAP))
}

fn env_cap(var: &str, default: usize) -> usize {
    std::env::var(var)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(default)
}
