//! Generation metrics, property filters, external scorer adapters, and
//! multivariate statistics.
//!
//! Scores follow the docking convention: lower (more negative) is better.
//! "Top fraction" therefore means the most negative slice.

use crate::molgraph::{
    canonical_key, fingerprint, is_valid, tanimoto, MolecularGraph, DEFAULT_BITS,
};
use nalgebra::{DMatrix, DVector};
use std::collections::HashSet;
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("score column {0:?} is missing")]
    MissingColumn(String),
    #[error("empty input")]
    EmptyInput,
    #[error("fraction {fraction} outside (0, 1]")]
    BadFraction { fraction: f64 },
    #[error("adapter returned {found} lines for {expected} molecules")]
    LengthMismatch { expected: usize, found: usize },
    #[error("adapter output line {line} is not a number: {content:?}")]
    BadScoreLine { line: usize, content: String },
    #[error("command template must contain {{input}} and {{output}} placeholders")]
    BadTemplate,
    #[error("pooled covariance is singular; pass a ridge (e.g. 1e-8) to regularize")]
    SingularCovariance,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("sample dimensions differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// score tables
// ---------------------------------------------------------------------------

/// Rectangular score table: one row per molecule, named columns, explicit
/// missing values.
#[derive(Debug, Clone, Default)]
pub struct ScoreMatrix {
    columns: Vec<String>,
    /// values[row][col]
    values: Vec<Vec<Option<f64>>>,
}

impl ScoreMatrix {
    pub fn new(n_rows: usize) -> Self {
        ScoreMatrix {
            columns: Vec::new(),
            values: vec![Vec::new(); n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn add_column(&mut self, name: &str, column: Vec<Option<f64>>) -> Result<(), StatsError> {
        if column.len() != self.values.len() {
            return Err(StatsError::LengthMismatch {
                expected: self.values.len(),
                found: column.len(),
            });
        }
        self.columns.push(name.to_string());
        for (row, v) in self.values.iter_mut().zip(column) {
            row.push(v);
        }
        Ok(())
    }

    fn column_index(&self, name: &str) -> Result<usize, StatsError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| StatsError::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>, StatsError> {
        let idx = self.column_index(name)?;
        Ok(self.values.iter().map(|row| row[idx]).collect())
    }

    pub fn get(&self, row: usize, name: &str) -> Result<Option<f64>, StatsError> {
        let idx = self.column_index(name)?;
        Ok(self.values[row][idx])
    }
}

// ---------------------------------------------------------------------------
// generation metrics
// ---------------------------------------------------------------------------

/// Validity, uniqueness and novelty of a generated batch. Uniqueness and
/// novelty are computed over the valid subset (the uniqueness denominator
/// choice is stated in report output) and absent when no molecule is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_total: usize,
    pub n_valid: usize,
    pub validity: f64,
    /// Unique canonical keys / valid molecules.
    pub uniqueness: Option<f64>,
    /// Fraction of valid molecules with max Tanimoto to the reference < 0.4.
    pub novelty: Option<f64>,
}

pub const NOVELTY_MAX_SIMILARITY: f64 = 0.4;

pub fn compute_metrics(mols: &[MolecularGraph], reference: &[MolecularGraph]) -> MetricsReport {
    let n_total = mols.len();
    let valid: Vec<&MolecularGraph> = mols.iter().filter(|m| is_valid(m).is_valid()).collect();
    let n_valid = valid.len();
    let validity = if n_total == 0 {
        0.0
    } else {
        n_valid as f64 / n_total as f64
    };
    if n_valid == 0 {
        return MetricsReport {
            n_total,
            n_valid,
            validity,
            uniqueness: None,
            novelty: None,
        };
    }
    let keys: HashSet<u64> = valid.iter().map(|m| canonical_key(m)).collect();
    let uniqueness = keys.len() as f64 / n_valid as f64;
    let ref_prints: Vec<_> = reference
        .iter()
        .map(|m| fingerprint(m, DEFAULT_BITS).expect("default width is a power of two"))
        .collect();
    let novel = valid
        .iter()
        .filter(|m| {
            let fp = fingerprint(m, DEFAULT_BITS).expect("default width is a power of two");
            ref_prints
                .iter()
                .map(|r| tanimoto(&fp, r).expect("equal widths"))
                .fold(0.0_f64, f64::max)
                < NOVELTY_MAX_SIMILARITY
        })
        .count();
    MetricsReport {
        n_total,
        n_valid,
        validity,
        uniqueness: Some(uniqueness),
        novelty: Some(novel as f64 / n_valid as f64),
    }
}

// ---------------------------------------------------------------------------
// filters
// ---------------------------------------------------------------------------

/// Property filters for generated molecules. Each filter is optional;
/// disabled filters reject nothing. `sa_min` applies to normalized synthetic
/// accessibility (higher = easier to make).
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Keep drug-likeness ≥ this (column `qed`).
    pub qed_min: Option<f64>,
    /// Keep normalized synthetic accessibility ≥ this (column `sa`).
    pub sa_min: Option<f64>,
    /// Keep max Tanimoto to known actives < this.
    pub max_known_similarity: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            qed_min: Some(0.5),
            sa_min: Some(0.44),
            max_known_similarity: Some(0.4),
        }
    }
}

/// Map a raw 1–10 synthetic-accessibility score (lower = easier) onto the
/// normalized 0–1 scale (higher = easier) the filter threshold refers to.
pub fn normalize_sa_raw(raw: f64) -> f64 {
    (10.0 - raw) / 9.0
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterRejections {
    pub qed: usize,
    pub sa: usize,
    pub similarity: usize,
}

/// Order-preserving subset of molecule indices passing every enabled filter.
/// A missing score rejects the molecule under that filter (missing is never
/// treated as zero). Enabled score filters require their column to exist.
pub fn apply_filters(
    mols: &[MolecularGraph],
    scores: &ScoreMatrix,
    known_actives: &[MolecularGraph],
    cfg: &FilterConfig,
) -> Result<(Vec<usize>, FilterRejections), StatsError> {
    let qed = match cfg.qed_min {
        Some(_) => Some(scores.column("qed")?),
        None => None,
    };
    let sa = match cfg.sa_min {
        Some(_) => Some(scores.column("sa")?),
        None => None,
    };
    let active_prints: Vec<_> = known_actives
        .iter()
        .map(|m| fingerprint(m, DEFAULT_BITS).expect("default width is a power of two"))
        .collect();
    let mut kept = Vec::new();
    let mut rejections = FilterRejections::default();
    for (i, mol) in mols.iter().enumerate() {
        if let (Some(min), Some(col)) = (cfg.qed_min, &qed) {
            if !col[i].is_some_and(|v| v >= min) {
                rejections.qed += 1;
                continue;
            }
        }
        if let (Some(min), Some(col)) = (cfg.sa_min, &sa) {
            if !col[i].is_some_and(|v| v >= min) {
                rejections.sa += 1;
                continue;
            }
        }
        if let Some(max_sim) = cfg.max_known_similarity {
            let fp = fingerprint(mol, DEFAULT_BITS).expect("default width is a power of two");
            let sim = active_prints
                .iter()
                .map(|r| tanimoto(&fp, r).expect("equal widths"))
                .fold(0.0_f64, f64::max);
            if sim >= max_sim {
                rejections.similarity += 1;
                continue;
            }
        }
        kept.push(i);
    }
    Ok((kept, rejections))
}

// ---------------------------------------------------------------------------
// proxy scorers (test-scale stand-ins, not publication grade)
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ring_count(m: &MolecularGraph) -> usize {
    // cyclomatic number of a connected graph; fragments add their own cycles
    m.bonds().len() + 1 - m.n_atoms().min(m.bonds().len() + 1)
}

/// Drug-likeness proxy: logistic in heavy-atom and ring count.
pub fn proxy_qed(m: &MolecularGraph) -> f64 {
    sigmoid(0.35 * m.n_atoms() as f64 + 0.8 * ring_count(m) as f64 - 4.0)
}

/// Normalized synthetic-accessibility proxy: logistic in branching degree.
pub fn proxy_sa(m: &MolecularGraph) -> f64 {
    let branching: f64 = (0..m.n_atoms())
        .map(|a| (m.neighbors(a).len() as f64 - 2.0).max(0.0))
        .sum::<f64>()
        / m.n_atoms().max(1) as f64;
    sigmoid(2.0 - 3.0 * branching)
}

// ---------------------------------------------------------------------------
// external scorer adapter
// ---------------------------------------------------------------------------

/// Result of one adapter invocation: per-molecule scores (missing on
/// timeout/failure) plus any diagnostics explaining the gaps.
#[derive(Debug, Clone)]
pub struct ScoreColumn {
    pub values: Vec<Option<f64>>,
    pub diagnostics: Vec<String>,
}

/// Run an external scoring command. The template must contain `{input}` and
/// `{output}`; molecules are written one SMILES per line to the input file
/// and the command must write one real per line (same order) to the output
/// file. Timeouts and nonzero exits produce missing scores with diagnostics
/// rather than failing the run; malformed output lines and length mismatches
/// are contract violations and error out.
pub fn external_score(
    template: &str,
    smiles: &[String],
    timeout: Duration,
) -> Result<ScoreColumn, StatsError> {
    if !(template.contains("{input}") && template.contains("{output}")) {
        return Err(StatsError::BadTemplate);
    }
    let missing = |diag: String| ScoreColumn {
        values: vec![None; smiles.len()],
        diagnostics: vec![diag],
    };
    let dir = tempfile::tempdir()?;
    let input_path = dir.path().join("molecules.smi");
    let output_path = dir.path().join("scores.txt");
    let mut input = std::fs::File::create(&input_path)?;
    for s in smiles {
        writeln!(input, "{s}")?;
    }
    drop(input);
    let command = template
        .replace("{input}", &input_path.to_string_lossy())
        .replace("{output}", &output_path.to_string_lossy());
    let mut child = std::process::Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()?;
    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                child.kill().ok();
                child.wait().ok();
                return Ok(missing(format!("adapter timed out after {timeout:?}")));
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    if !status.success() {
        return Ok(missing(format!("adapter exited with {status}")));
    }
    let text = match std::fs::read_to_string(&output_path) {
        Ok(t) => t,
        Err(e) => return Ok(missing(format!("adapter wrote no output file: {e}"))),
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != smiles.len() {
        return Err(StatsError::LengthMismatch {
            expected: smiles.len(),
            found: lines.len(),
        });
    }
    let mut values = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| StatsError::BadScoreLine {
                line: i + 1,
                content: line.to_string(),
            })?;
        values.push(Some(v));
    }
    Ok(ScoreColumn {
        values,
        diagnostics: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// summary statistics
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation of the best (most negative) ⌈f·n⌉
/// scores.
pub fn top_fraction_stats(scores: &[f64], fraction: f64) -> Result<(f64, f64), StatsError> {
    if scores.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(StatsError::BadFraction { fraction });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (fraction * sorted.len() as f64).ceil() as usize;
    let slice = &sorted[..k];
    let mean = slice.iter().sum::<f64>() / k as f64;
    let std = if k < 2 {
        0.0
    } else {
        (slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    };
    Ok((mean, std))
}

fn sample_mean(sample: &[Vec<f64>], p: usize) -> DVector<f64> {
    let mut mu = DVector::zeros(p);
    for row in sample {
        for j in 0..p {
            mu[j] += row[j];
        }
    }
    mu.scale(1.0 / sample.len() as f64)
}

fn scatter(sample: &[Vec<f64>], mu: &DVector<f64>, p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for row in sample {
        let dev = DVector::from_iterator(p, (0..p).map(|j| row[j] - mu[j]));
        s += &dev * dev.transpose();
    }
    s
}

fn pooled_covariance(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    ridge: Option<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let p = a[0].len();
    for row in a.iter().chain(b) {
        if row.len() != p {
            return Err(StatsError::DimMismatch { a: row.len(), b: p });
        }
    }
    let (na, nb) = (a.len(), b.len());
    if na + nb < p + 2 {
        return Err(StatsError::TooFewSamples {
            needed: p + 2,
            found: na + nb,
        });
    }
    let mu_a = sample_mean(a, p);
    let mu_b = sample_mean(b, p);
    let mut pooled =
        (scatter(a, &mu_a, p) + scatter(b, &mu_b, p)).scale(1.0 / (na + nb - 2) as f64);
    if let Some(lambda) = ridge {
        for i in 0..p {
            pooled[(i, i)] += lambda;
        }
    }
    Ok((mu_a, mu_b, pooled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotellingResult {
    pub t2: f64,
    pub f: f64,
    pub p_value: f64,
}

/// Two-sample Hotelling T² with pooled covariance and its F-distribution
/// p-value. `ridge` (e.g. 1e-8) stabilizes a near-singular covariance.
pub fn hotelling_t2(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    ridge: Option<f64>,
) -> Result<HotellingResult, StatsError> {
    let (mu_a, mu_b, pooled) = pooled_covariance(a, b, ridge)?;
    let p = mu_a.len();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let inv = pooled
        .try_inverse()
        .ok_or(StatsError::SingularCovariance)?;
    let diff = &mu_a - &mu_b;
    let t2 = (na * nb / (na + nb)) * (diff.transpose() * &inv * &diff)[(0, 0)];
    let t2 = t2.max(0.0);
    let d1 = p as f64;
    let d2 = na + nb - d1 - 1.0;
    if d2 <= 0.0 {
        return Err(StatsError::TooFewSamples {
            needed: p + 2,
            found: a.len() + b.len(),
        });
    }
    let f = (d2 / ((na + nb - 2.0) * d1)) * t2;
    let p_value = f_tail(f, d1, d2);
    Ok(HotellingResult { t2, f, p_value })
}

/// Mahalanobis distance between sample centroids under pooled covariance.
pub fn mahalanobis_between(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    ridge: Option<f64>,
) -> Result<f64, StatsError> {
    let (mu_a, mu_b, pooled) = pooled_covariance(a, b, ridge)?;
    let inv = pooled
        .try_inverse()
        .ok_or(StatsError::SingularCovariance)?;
    let diff = &mu_a - &mu_b;
    Ok((diff.transpose() * &inv * &diff)[(0, 0)].max(0.0).sqrt())
}

/// Fraction of rows meeting every (column, threshold) rule simultaneously
/// (value ≤ threshold; a missing value fails the rule).
pub fn threshold_proportion(
    scores: &ScoreMatrix,
    thresholds: &[(String, f64)],
) -> Result<f64, StatsError> {
    let columns: Vec<Vec<Option<f64>>> = thresholds
        .iter()
        .map(|(name, _)| scores.column(name))
        .collect::<Result<_, _>>()?;
    if scores.n_rows() == 0 {
        return Err(StatsError::EmptyInput);
    }
    let hits = (0..scores.n_rows())
        .filter(|&row| {
            columns
                .iter()
                .zip(thresholds)
                .all(|(col, (_, limit))| col[row].is_some_and(|v| v <= *limit))
        })
        .count();
    Ok(hits as f64 / scores.n_rows() as f64)
}

/// Sample Pearson correlation with a two-sided p-value via the t transform.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DimMismatch { a: x.len(), b: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { needed: 3, found: n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let nu = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t2 = r * r * nu / (1.0 - r * r);
        // two-sided: P(|T| > t) for T ~ t(ν)
        regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t2))
    };
    Ok((r, p))
}

// ---------------------------------------------------------------------------
// special functions (hand-rolled: the F and t tails go through the
// regularized incomplete beta evaluated by continued fraction)
// ---------------------------------------------------------------------------

/// Upper tail P(F > f) for F ~ F(d1, d2).
pub fn f_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz method).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}
