//! Command harness: configure an instance, run the verification suite or a
//! scaling sweep, and emit machine-readable reports.
//!
//! Exit codes: 0 all checks pass, 1 a certified inequality failed, 2 invalid
//! configuration or input, 3 an iterative norm did not converge.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversary_core::AdversaryInstance;
use crate::error::{Error, Result};
use crate::orthogonal_array::{verify_oa, ArrayAssignment, OrthogonalArray};
use crate::reduction::{symmetrize, MaskedNorm};
use crate::spectral::{
    adversary_value, certified_ratio_lower_bound, lemma_bounds, spectral_norm_dense,
    AdversaryValueReport, ComputeMode, LemmaReport, SpectralOpts,
};
use crate::util;
use crate::{adversary_core, hamming_scheme, spectral};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// One run's configuration; echoed verbatim into the report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    /// "ksum", "distinctness" or "file".
    pub array: String,
    /// k-sum target.
    pub t: u32,
    /// "dense", "structured" or "auto".
    pub mode: String,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub array_file: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 3,
            k: 2,
            q: 9,
            array: "ksum".into(),
            t: 0,
            mode: "auto".into(),
            tol: 1e-8,
            max_iter: 10_000,
            seed: 42,
            array_file: None,
        }
    }
}

impl RunConfig {
    pub fn opts(&self) -> SpectralOpts {
        SpectralOpts {
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
    }

    fn assignment(&self) -> Result<ArrayAssignment> {
        let array = match self.array.as_str() {
            "ksum" => OrthogonalArray::ksum(self.q, self.k, self.t)?,
            "distinctness" => {
                if self.k != 2 {
                    return Err(Error::InvalidParameter(
                        "the distinctness array has length 2; pass k=2".into(),
                    ));
                }
                OrthogonalArray::distinctness(self.q)?
            }
            "file" => {
                let path = self.array_file.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("array=file needs --array-file".into())
                })?;
                let members = parse_array_file(Path::new(path), self.q, self.k)?;
                OrthogonalArray::from_members(members, self.k, self.q)?
            }
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown array family '{other}'"
                )))
            }
        };
        Ok(ArrayAssignment::Uniform(array))
    }

    /// Resolve "auto": dense iff the stacked matrix fits the entry cap.
    fn resolve_mode(&self, inst: &AdversaryInstance) -> Result<ComputeMode> {
        let entries = inst.row_count() as u128 * inst.col_count() as u128;
        let cap = util::dense_cap() as u128;
        match self.mode.as_str() {
            "dense" => {
                if entries > cap {
                    return Err(Error::TooLarge { entries, cap });
                }
                Ok(ComputeMode::Dense)
            }
            "structured" => Ok(ComputeMode::Structured),
            "auto" => Ok(if entries <= cap {
                ComputeMode::Dense
            } else {
                ComputeMode::Structured
            }),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

/// One tuple per line, space-separated symbols in [0, q).
fn parse_array_file(path: &Path, q: usize, k: usize) -> Result<Vec<Vec<u32>>> {
    let text = fs::read_to_string(path)?;
    let mut members = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tuple = Vec::with_capacity(k);
        for tok in line.split_whitespace() {
            let sym: u32 = tok.parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad symbol '{tok}'", lineno + 1))
            })?;
            if sym as usize >= q {
                return Err(Error::InvalidParameter(format!(
                    "line {}: symbol {sym} outside [0, {q})",
                    lineno + 1
                )));
            }
            tuple.push(sym);
        }
        if tuple.len() != k {
            return Err(Error::InvalidParameter(format!(
                "line {}: expected {k} symbols, found {}",
                lineno + 1,
                tuple.len()
            )));
        }
        members.push(tuple);
    }
    Ok(members)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub construct_ms: u64,
    pub lemma_ms: u64,
    pub adversary_ms: u64,
    pub reduction_ms: u64,
    pub total_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReductionReport {
    pub sigma: f64,
    pub norm_gamma: f64,
    pub norm_gamma_prime: f64,
    pub norm_preserved: bool,
    pub transfer_value: f64,
    pub transfer_ok: bool,
    pub masked: Vec<MaskedEntry>,
    pub masked_ok: bool,
    pub zero_pattern_ok: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaskedEntry {
    pub coord: usize,
    pub norm_prime: f64,
    pub norm_orig: f64,
    pub ok: bool,
    pub negative_extreme: bool,
}

impl ReductionReport {
    pub fn pass(&self) -> bool {
        self.norm_preserved && self.transfer_ok && self.masked_ok && self.zero_pattern_ok
    }
}

/// Full verification report: config echo, certified inequalities, measured
/// adversary value and reduction certificate (dense mode), timings.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub version: String,
    pub config: RunConfig,
    pub mode: ComputeMode,
    pub lemma: LemmaReport,
    pub adversary: Option<AdversaryValueReport>,
    pub reduction: Option<ReductionReport>,
    pub timings: Timings,
    pub pass: bool,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        let converged = self.lemma.converged && self.adversary.as_ref().is_none_or(|a| a.converged);
        if !converged {
            EXIT_NOT_CONVERGED
        } else if !self.pass {
            EXIT_CHECK_FAILED
        } else {
            EXIT_PASS
        }
    }
}

/// Run the whole verification suite for one configuration.
pub fn cmd_verify(config: &RunConfig) -> Result<Report> {
    let opts = config.opts();
    let started = Instant::now();
    let assignment = config.assignment()?;
    let inst = AdversaryInstance::new(config.n, config.k, config.q, assignment)?;
    let mode = config.resolve_mode(&inst)?;
    let construct_ms = started.elapsed().as_millis() as u64;

    let t_lemma = Instant::now();
    let lemma = lemma_bounds(&inst, mode, &opts)?;
    let lemma_ms = t_lemma.elapsed().as_millis() as u64;

    let mut adversary = None;
    let mut reduction = None;
    let mut adversary_ms = 0;
    let mut reduction_ms = 0;
    if mode == ComputeMode::Dense {
        let t_adv = Instant::now();
        adversary = Some(adversary_value(&inst, &opts)?);
        adversary_ms = t_adv.elapsed().as_millis() as u64;

        let t_red = Instant::now();
        reduction = Some(reduction_certificate(&inst)?);
        reduction_ms = t_red.elapsed().as_millis() as u64;
    }

    let mut pass = lemma.all_pass();
    if let (Some(adv), true) = (&adversary, pass) {
        pass = adv.ratio >= lemma.certified_ratio_lower_bound - 1e-9;
    }
    if let Some(red) = &reduction {
        pass = pass && red.pass();
    }

    let timings = Timings {
        construct_ms,
        lemma_ms,
        adversary_ms,
        reduction_ms,
        total_ms: started.elapsed().as_millis() as u64,
    };
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        mode,
        lemma,
        adversary,
        reduction,
        timings,
        pass,
    })
}

/// Fold the dense restricted matrix and certify the norm transfer relations.
/// Everything here goes through the exact decomposition; the transfer
/// tolerances are far below what an iterative estimate could certify.
pub fn reduction_certificate(inst: &AdversaryInstance) -> Result<ReductionReport> {
    let rect = adversary_core::build_gamma_rectangular(inst)?;
    let norm_gamma = spectral_norm_dense(&rect.matrix)?.value;
    let sym = symmetrize(&rect)?;
    let norm_gamma_prime = spectral_norm_dense(&sym.matrix)?.value;
    let norm_preserved = norm_gamma_prime >= norm_gamma - 1e-8;
    let transfer_ok = (sym.transfer_value - norm_gamma).abs() <= 1e-8;
    let mut masked = Vec::with_capacity(inst.n());
    let mut masked_ok = true;
    for coord in 0..inst.n() {
        let orig = adversary_core::delta_hadamard(
            &rect.matrix,
            &rect.row_inputs,
            &rect.col_inputs,
            rect.n,
            rect.q,
            coord,
        )?;
        let norm_orig = spectral_norm_dense(&orig)?.value;
        let MaskedNorm {
            norm,
            negative_extreme,
            ..
        } = sym.masked_norm(coord)?;
        let ok = norm <= norm_orig + 1e-8;
        masked_ok &= ok;
        masked.push(MaskedEntry {
            coord,
            norm_prime: norm,
            norm_orig,
            ok,
            negative_extreme,
        });
    }
    Ok(ReductionReport {
        sigma: sym.sigma,
        norm_gamma,
        norm_gamma_prime,
        norm_preserved,
        transfer_value: sym.transfer_value,
        transfer_ok,
        masked,
        masked_ok,
        zero_pattern_ok: sym.zero_pattern_ok(),
        degenerate: sym.degenerate,
    })
}

/// Alphabet-size rule for scaling sweeps.
#[derive(Clone, Copy, Debug)]
pub enum QRule {
    /// q = n^k per point.
    Nk,
    /// Fixed q for every point.
    Fixed(usize),
}

pub const SCALING_HEADER: &str =
    "n,k,q,mode,witness,norm_gamma,norm_gamma_tilde_1,max_delta_norm,ratio,certified_bound,legal_fraction,runtime_ms,pass";

/// One CSV row per point: certified quantities always, measured ratio when
/// dense-feasible. Per-point failures are recorded in-row and the sweep
/// continues.
pub fn cmd_scaling(
    k: usize,
    n_list: &[usize],
    q_rule: QRule,
    out: &Path,
    opts: &SpectralOpts,
) -> Result<()> {
    let mut csv = String::new();
    csv.push_str(SCALING_HEADER);
    csv.push('\n');
    for &n in n_list {
        let row = scaling_row(n, k, q_rule, opts);
        csv.push_str(&row);
        csv.push('\n');
    }
    fs::write(out, csv)?;
    Ok(())
}

fn scaling_row(n: usize, k: usize, q_rule: QRule, opts: &SpectralOpts) -> String {
    let started = Instant::now();
    let q = match q_rule {
        QRule::Nk => match util::checked_pow(n, k) {
            Some(q) => q,
            None => return format!("{n},{k},,,,,,,,,,,false"),
        },
        QRule::Fixed(q) => q,
    };
    match scaling_point(n, k, q, opts) {
        Ok(p) => {
            let ms = started.elapsed().as_millis();
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
            let witness = format!("{:.12e}", p.witness);
            let g1 = format!("{:.12e}", p.norm_gamma_tilde_1);
            let certified = format!("{:.12e}", p.certified_bound);
            let fraction = format!("{:.12e}", p.legal_fraction);
            format!(
                "{n},{k},{q},{mode},{witness},{g},{g1},{d},{r},{certified},{fraction},{ms},{pass}",
                mode = p.mode,
                g = fmt(p.norm_gamma),
                d = fmt(p.max_delta_norm),
                r = fmt(p.ratio),
                pass = p.pass,
            )
        }
        Err(e) => {
            let ms = started.elapsed().as_millis();
            let msg = e.to_string().replace(',', ";");
            format!("{n},{k},{q},error: {msg},,,,,,,,{ms},false")
        }
    }
}

struct ScalingPoint {
    mode: &'static str,
    witness: f64,
    norm_gamma: Option<f64>,
    norm_gamma_tilde_1: f64,
    max_delta_norm: Option<f64>,
    ratio: Option<f64>,
    certified_bound: f64,
    legal_fraction: f64,
    pass: bool,
}

fn scaling_point(n: usize, k: usize, q: usize, opts: &SpectralOpts) -> Result<ScalingPoint> {
    let assignment = ArrayAssignment::Uniform(OrthogonalArray::ksum(q, k, 0)?);
    let inst = AdversaryInstance::new(n, k, q, assignment)?;
    let entries = inst.row_count() as u128 * inst.col_count() as u128;
    let dense = entries <= util::dense_cap() as u128;

    let mask = adversary_core::legal_mask(&inst)?;
    let legal_fraction = mask.legal_fraction();
    let gt = adversary_core::build_gamma_tilde(&inst)?;
    let witness = spectral::witness_lower_bound(&gt, Some(&mask))?;
    let certified_bound = certified_ratio_lower_bound(inst.alphas(), n, k, legal_fraction);

    if dense {
        let lemma = lemma_bounds(&inst, ComputeMode::Dense, opts)?;
        let adv = adversary_value(&inst, opts)?;
        let pass = lemma.all_pass() && adv.ratio >= certified_bound - 1e-9;
        Ok(ScalingPoint {
            mode: "dense",
            witness,
            norm_gamma: Some(adv.norm_gamma),
            norm_gamma_tilde_1: lemma.norm_gamma_tilde_1,
            max_delta_norm: Some(adv.max_delta_norm),
            ratio: Some(adv.ratio),
            certified_bound,
            legal_fraction,
            pass,
        })
    } else {
        let gt1 = adversary_core::build_gamma_tilde_1(&inst, 0)?;
        let g1 = spectral::spectral_norm_iter_opts(&gt1, opts);
        let restricted = adversary_core::restrict_columns(gt, &mask)?;
        let g = spectral::spectral_norm_iter_opts(&restricted, opts);
        Ok(ScalingPoint {
            mode: "structured",
            witness,
            norm_gamma: Some(g.value.max(witness)),
            norm_gamma_tilde_1: g1.value,
            max_delta_norm: None,
            ratio: None,
            certified_bound,
            legal_fraction,
            pass: certified_bound > 0.0,
        })
    }
}

/// Verify a plain-text array file; exit 0 on pass, 1 on a failed check,
/// 2 on a parse error.
pub fn cmd_oa_check(file: &Path, q: usize, k: usize) -> i32 {
    let members = match parse_array_file(file, q, k) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("parse error: {e}");
            return EXIT_INVALID_CONFIG;
        }
    };
    let check = verify_oa(&members, k, q);
    if check.ok {
        println!(
            "ok: {} tuples form an orthogonal array of length {k} over [0, {q})",
            members.len()
        );
        EXIT_PASS
    } else {
        let reason = check
            .violation
            .map(|v| v.to_string())
            .unwrap_or_else(|| "unknown violation".into());
        println!("FAIL: {reason}");
        EXIT_CHECK_FAILED
    }
}

/// Print (or write) the deterministic eigenbasis for the given alphabet as
/// one row per line, space-separated full-precision floats.
pub fn cmd_basis_dump(q: usize, out: Option<&Path>) -> Result<()> {
    let basis = hamming_scheme::make_eigenbasis(q)?;
    let m = basis.matrix();
    let mut text = String::new();
    for r in 0..q {
        for c in 0..q {
            if c > 0 {
                text.push(' ');
            }
            write!(&mut text, "{:.17e}", m[(r, c)]).expect("write to string");
        }
        text.push('\n');
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Map an error to its exit code; configuration and input problems are 2.
pub fn exit_code_for_error(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch(_)
        | Error::TooLarge { .. }
        | Error::InvalidArray(_)
        | Error::Io(_) => EXIT_INVALID_CONFIG,
        Error::Degenerate(_) | Error::Numeric(_) => EXIT_CHECK_FAILED,
    }
}
