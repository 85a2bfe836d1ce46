//! Correction functions fitted from paired readings: least-squares
//! polynomials and lookup tables, their application, and before/after error
//! reports.

use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::circuit::Quantity;
use crate::config::{ConfigError, KvFile};
use crate::sync::{Pair, PairedObservations};

pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("rank deficient fit: {0}")]
    RankDeficient(String),
    #[error("under-determined fit: {0}")]
    UnderDetermined(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid method {0:?}; expected poly:N, lut:N or auto")]
    InvalidMethod(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
}

/// Polynomial in the normalised input `t = (d - center) / half_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    /// Constant term first.
    pub coeffs: Vec<f64>,
    pub center: f64,
    pub half_width: f64,
}

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, d: f64) -> f64 {
        let t = (d - self.center) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Coefficients of the same polynomial in the raw input `d`, constant
    /// term first.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut raw = vec![0.0; n];
        // (d - c)^k / h^k expanded binomially.
        for (k, &a) in self.coeffs.iter().enumerate() {
            let scale = a / self.half_width.powi(k as i32);
            let mut binom = 1.0;
            for (j, r) in raw.iter_mut().enumerate().take(k + 1) {
                *r += scale * binom * (-self.center).powi((k - j) as i32);
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        raw
    }
}

/// Piecewise-linear table, flat beyond the end breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub breakpoints: Vec<f64>,
    pub corrections: Vec<f64>,
}

impl LookupTable {
    pub fn new(breakpoints: Vec<f64>, corrections: Vec<f64>) -> Result<Self, CalibrationError> {
        if breakpoints.len() < 2 || breakpoints.len() != corrections.len() {
            return Err(CalibrationError::InvalidModel(
                "a table needs at least 2 breakpoints, each with a correction".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CalibrationError::InvalidModel(
                "breakpoints must strictly increase".into(),
            ));
        }
        if breakpoints.iter().chain(&corrections).any(|v| !v.is_finite()) {
            return Err(CalibrationError::InvalidModel("table values must be finite".into()));
        }
        Ok(LookupTable {
            breakpoints,
            corrections,
        })
    }

    pub fn eval(&self, d: f64) -> f64 {
        let b = &self.breakpoints;
        let c = &self.corrections;
        if d <= b[0] {
            return c[0];
        }
        // Segment whose left end is the last breakpoint ≤ d, so a query at a
        // breakpoint returns its correction exactly.
        let i = b.partition_point(|&x| x <= d) - 1;
        if i + 1 == b.len() {
            return c[i];
        }
        let t = (d - b[i]) / (b[i + 1] - b[i]);
        c[i] + t * (c[i + 1] - c[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationModel {
    Polynomial(Polynomial),
    LookupTable(LookupTable),
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel::Polynomial(Polynomial {
            coeffs: vec![0.0, 1.0],
            center: 0.0,
            half_width: 1.0,
        })
    }

    pub fn apply(&self, dut_value: f64) -> f64 {
        match self {
            CalibrationModel::Polynomial(p) => p.eval(dut_value),
            CalibrationModel::LookupTable(t) => t.eval(dut_value),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CalibrationModel::Polynomial(p) => format!("polynomial degree {}", p.degree()),
            CalibrationModel::LookupTable(t) => format!("lookup table {} entries", t.breakpoints.len()),
        }
    }
}

/// Fitting method selector, written `poly:N`, `lut:N` or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Poly(usize),
    Lut(usize),
    Auto,
}

impl Method {
    pub fn parse(text: &str) -> Result<Method, CalibrationError> {
        let bad = || CalibrationError::InvalidMethod(text.to_string());
        let text = text.trim();
        if text == "auto" {
            return Ok(Method::Auto);
        }
        let (kind, n) = text.split_once(':').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        match kind {
            "poly" if n <= MAX_DEGREE => Ok(Method::Poly(n)),
            "lut" if n >= 2 => Ok(Method::Lut(n)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Poly(d) => write!(f, "poly:{d}"),
            Method::Lut(n) => write!(f, "lut:{n}"),
            Method::Auto => write!(f, "auto"),
        }
    }
}

fn distinct_duts(pairs: &[Pair]) -> usize {
    let mut d: Vec<f64> = pairs.iter().map(|p| p.dut_value).collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d.len()
}

/// Least-squares polynomial of `ref` on `dut`, solved by Householder QR on
/// the Vandermonde matrix of the inputs mapped onto `[-1, 1]`.
pub fn fit_polynomial(pairs: &[Pair], degree: usize) -> Result<CalibrationModel, CalibrationError> {
    if degree > MAX_DEGREE {
        return Err(CalibrationError::InvalidModel(format!(
            "degree {degree} exceeds {MAX_DEGREE}"
        )));
    }
    let m = degree + 1;
    if pairs.len() < m {
        return Err(CalibrationError::UnderDetermined(format!(
            "degree {degree} needs at least {m} pairs, got {}",
            pairs.len()
        )));
    }
    let distinct = distinct_duts(pairs);
    if distinct < m {
        return Err(CalibrationError::RankDeficient(format!(
            "degree {degree} needs {m} distinct device readings, got {distinct}"
        )));
    }
    let (lo, hi) = pairs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.dut_value), hi.max(p.dut_value))
    });
    let center = 0.5 * (lo + hi);
    let half_width = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

    let n = pairs.len();
    let a = DMatrix::from_fn(n, m, |i, k| ((pairs[i].dut_value - center) / half_width).powi(k as i32));
    let b = DVector::from_iterator(n, pairs.iter().map(|p| p.ref_value));
    let qr = a.qr();
    let r = qr.r();
    let max_diag = r.diagonal().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = max_diag * n as f64 * f64::EPSILON;
    if let Some(k) = r.diagonal().iter().position(|x| x.abs() <= tol) {
        return Err(CalibrationError::RankDeficient(format!(
            "column {k} of the degree-{degree} design matrix is numerically dependent"
        )));
    }
    let qtb = qr.q().transpose() * b;
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| CalibrationError::RankDeficient("singular triangular factor".into()))?;
    Ok(CalibrationModel::Polynomial(Polynomial {
        coeffs: coeffs.iter().copied().collect(),
        center,
        half_width,
    }))
}

/// Table with up to `n_entries` equal-count bins over the sorted device
/// readings. Equal readings never straddle bins. Each breakpoint is the mean
/// reading of its bin and each correction the mean reference.
pub fn build_lut(pairs: &[Pair], n_entries: usize) -> Result<CalibrationModel, CalibrationError> {
    if n_entries < 2 {
        return Err(CalibrationError::InvalidModel("a table needs at least 2 entries".into()));
    }
    if pairs.len() < n_entries {
        return Err(CalibrationError::UnderDetermined(format!(
            "{n_entries} entries need at least as many pairs, got {}",
            pairs.len()
        )));
    }
    let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|p| (p.dut_value, p.ref_value)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Runs of equal device readings.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].0 != sorted[start].0 {
            groups.push((start, i));
            start = i;
        }
    }
    if groups.len() < 2 {
        return Err(CalibrationError::RankDeficient(
            "a table needs at least 2 distinct device readings".into(),
        ));
    }

    let n = sorted.len();
    let mut bins: Vec<(usize, usize)> = Vec::new();
    let mut bin_start = 0;
    for &(_, end) in &groups {
        let k = bins.len() + 1;
        if end * n_entries >= k * n {
            bins.push((bin_start, end));
            bin_start = end;
        }
    }
    if bin_start < n {
        bins.push((bin_start, n));
    }
    if bins.len() < 2 {
        let (last_start, _) = *groups.last().expect("two groups");
        bins = vec![(0, last_start), (last_start, n)];
    }

    let mean = |s: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
    let breakpoints = bins.iter().map(|&(a, b)| mean(&sorted[a..b], |p| p.0)).collect();
    let corrections = bins.iter().map(|&(a, b)| mean(&sorted[a..b], |p| p.1)).collect();
    Ok(CalibrationModel::LookupTable(LookupTable::new(breakpoints, corrections)?))
}

pub fn sum_squared_residuals(model: &CalibrationModel, pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|p| (model.apply(p.dut_value) - p.ref_value).powi(2))
        .sum()
}

/// Entries used for the table that polynomial fits are measured against.
pub const SELECTION_LUT_ENTRIES: usize = 64;
/// A polynomial is chosen when its residual is within this factor of the
/// table's.
pub const SELECTION_TOLERANCE: f64 = 1.05;

/// Lowest-degree polynomial (up to 3) whose residual is within 5% of a
/// 64-entry table's; otherwise the table.
pub fn select_model(pairs: &[Pair]) -> Result<(CalibrationModel, Method), CalibrationError> {
    let entries = SELECTION_LUT_ENTRIES.min(pairs.len());
    let lut = build_lut(pairs, entries)?;
    let lut_ssr = sum_squared_residuals(&lut, pairs);
    for degree in 0..=3 {
        let Ok(poly) = fit_polynomial(pairs, degree) else {
            continue;
        };
        if sum_squared_residuals(&poly, pairs) <= SELECTION_TOLERANCE * lut_ssr {
            return Ok((poly, Method::Poly(degree)));
        }
    }
    Ok((lut, Method::Lut(entries)))
}

pub fn fit(pairs: &[Pair], method: Method) -> Result<(CalibrationModel, Method), CalibrationError> {
    match method {
        Method::Poly(d) => Ok((fit_polynomial(pairs, d)?, method)),
        Method::Lut(n) => Ok((build_lut(pairs, n)?, method)),
        Method::Auto => select_model(pairs),
    }
}

/// Every fifth step (step index ≡ 4 mod 5) is held out of training.
pub fn is_held_out(step: usize) -> bool {
    step % 5 == 4
}

pub fn split_holdout(pairs: &[Pair]) -> (Vec<Pair>, Vec<Pair>) {
    pairs.iter().partition(|p| !is_held_out(p.step))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    /// Mean absolute error, percent of full scale.
    pub mean_pct_fs: f64,
    /// Worst absolute error in engineering units.
    pub max_abs: f64,
    pub rms: f64,
    pub n: usize,
}

fn stats(errors: impl Iterator<Item = f64>, full_scale: f64) -> ErrorStats {
    let (mut sum, mut sq, mut max, mut n) = (0.0, 0.0, 0.0f64, 0usize);
    for e in errors {
        sum += e.abs();
        sq += e * e;
        max = max.max(e.abs());
        n += 1;
    }
    if n == 0 {
        return ErrorStats {
            mean_pct_fs: 0.0,
            max_abs: 0.0,
            rms: 0.0,
            n: 0,
        };
    }
    ErrorStats {
        mean_pct_fs: sum / n as f64 / full_scale * 100.0,
        max_abs: max,
        rms: (sq / n as f64).sqrt(),
        n,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub pre: ErrorStats,
    pub post: ErrorStats,
    pub holdout: bool,
}

impl ErrorReport {
    pub fn reduction(&self) -> f64 {
        if self.post.mean_pct_fs == 0.0 {
            f64::INFINITY
        } else {
            self.pre.mean_pct_fs / self.post.mean_pct_fs
        }
    }
}

/// Before error over all pairs; after error over the held-out pairs when
/// `holdout` is set, otherwise over all pairs.
pub fn evaluate(model: &CalibrationModel, pairs: &[Pair], full_scale: f64, holdout: bool) -> ErrorReport {
    assert!(full_scale > 0.0, "full scale must be positive");
    let pre = stats(pairs.iter().map(|p| p.dut_value - p.ref_value), full_scale);
    let post = stats(
        pairs
            .iter()
            .filter(|p| !holdout || is_held_out(p.step))
            .map(|p| model.apply(p.dut_value) - p.ref_value),
        full_scale,
    );
    ErrorReport { pre, post, holdout }
}

/// A fitted model with the report and settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: CalibrationModel,
    pub method: Method,
    pub requested: Method,
    pub report: ErrorReport,
    pub quantity: Quantity,
    pub full_scale: f64,
    pub n_train: usize,
}

/// Fit on the training split (or all pairs without holdout) and evaluate.
pub fn calibrate(obs: &PairedObservations, method: Method, holdout: bool) -> Result<Calibration, CalibrationError> {
    let (train, _) = if holdout {
        split_holdout(&obs.pairs)
    } else {
        (obs.pairs.clone(), Vec::new())
    };
    let (model, chosen) = fit(&train, method)?;
    let report = evaluate(&model, &obs.pairs, obs.full_scale, holdout);
    Ok(Calibration {
        model,
        method: chosen,
        requested: method,
        report,
        quantity: obs.quantity,
        full_scale: obs.full_scale,
        n_train: train.len(),
    })
}

impl CalibrationModel {
    pub fn to_kv(&self) -> KvFile {
        let mut f = KvFile::new();
        match self {
            CalibrationModel::Polynomial(p) => {
                f.set("variant", "polynomial");
                f.set("degree", p.degree());
                f.set("center", p.center);
                f.set("half_width", p.half_width);
                for (k, c) in p.coeffs.iter().enumerate() {
                    f.set(format!("coeff[{k}]"), c);
                }
                for (k, c) in p.raw_coefficients().iter().enumerate() {
                    f.set(format!("raw_coeff[{k}]"), c);
                }
            }
            CalibrationModel::LookupTable(t) => {
                f.set("variant", "lookup_table");
                f.set("entries", t.breakpoints.len());
                f.set("interpolation", "linear_flat_ends");
                for (i, (b, c)) in t.breakpoints.iter().zip(&t.corrections).enumerate() {
                    f.set(format!("breakpoint[{i}]"), b);
                    f.set(format!("correction[{i}]"), c);
                }
            }
        }
        f
    }

    pub fn from_kv(f: &KvFile) -> Result<CalibrationModel, CalibrationError> {
        match f.require("variant")? {
            "polynomial" => {
                let coeffs = f.indexed_f64("coeff")?;
                let degree: usize = f.parse_value("degree")?;
                if coeffs.len() != degree + 1 || degree > MAX_DEGREE {
                    return Err(CalibrationError::InvalidModel(format!(
                        "degree {degree} with {} coefficients",
                        coeffs.len()
                    )));
                }
                let half_width = f.f64("half_width")?;
                if half_width <= 0.0 {
                    return Err(ConfigError::invalid("half_width", "must be positive").into());
                }
                Ok(CalibrationModel::Polynomial(Polynomial {
                    coeffs,
                    center: f.f64("center")?,
                    half_width,
                }))
            }
            "lookup_table" => Ok(CalibrationModel::LookupTable(LookupTable::new(
                f.indexed_f64("breakpoint")?,
                f.indexed_f64("correction")?,
            )?)),
            other => Err(ConfigError::invalid("variant", format!("unknown variant {other:?}")).into()),
        }
    }
}

impl Calibration {
    /// Model file: the model followed by fit settings and any provenance
    /// entries (such as input file hashes).
    pub fn model_text(&self, provenance: &[(String, String)]) -> String {
        let mut f = self.model.to_kv();
        f.set("fit.method", self.method);
        f.set("fit.requested", self.requested);
        f.set("fit.holdout", self.report.holdout);
        f.set("fit.n_train", self.n_train);
        f.set("fit.input_normalization", "minmax_to_unit_interval");
        for (k, v) in provenance {
            f.set(format!("source.{k}"), v);
        }
        f.to_text()
    }

    pub fn report_text(&self) -> String {
        let r = &self.report;
        let mut f = KvFile::new();
        f.set("quantity", self.quantity.as_str());
        f.set("unit", self.quantity.unit());
        f.set("full_scale", self.full_scale);
        f.set("method", self.method);
        f.set("model", self.model.describe());
        f.set("holdout", r.holdout);
        f.set("n_pairs", r.pre.n);
        f.set("n_train", self.n_train);
        f.set("n_post", r.post.n);
        f.set("pre_pct_fs", format!("{:.6}", r.pre.mean_pct_fs));
        f.set("post_pct_fs", format!("{:.6}", r.post.mean_pct_fs));
        f.set("pre_max", format!("{:.6}", r.pre.max_abs));
        f.set("post_max", format!("{:.6}", r.post.max_abs));
        f.set("pre_rms", format!("{:.6}", r.pre.rms));
        f.set("post_rms", format!("{:.6}", r.post.rms));
        f.set("reduction", format!("{:.3}", r.reduction()));
        f.to_text()
    }

    /// Per-pair residuals for plotting.
    pub fn residuals_csv(&self, pairs: &[Pair]) -> String {
        let mut out = String::with_capacity(64 * (pairs.len() + 1));
        out.push_str("step,dut_value,ref_value,corrected,error_before,error_after,held_out\n");
        for p in pairs {
            let corrected = self.model.apply(p.dut_value);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.step,
                p.dut_value,
                p.ref_value,
                corrected,
                p.dut_value - p.ref_value,
                corrected - p.ref_value,
                u8::from(is_held_out(p.step))
            );
        }
        out
    }
}

pub fn load_model(path: &Path) -> Result<CalibrationModel, CalibrationError> {
    let f = KvFile::load(path)?;
    CalibrationModel::from_kv(&f)
}
