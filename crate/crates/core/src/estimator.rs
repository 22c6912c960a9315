//! Deconvolution wavelet estimator of `p = m f_X` at a point and the
//! Goldenshluger-Lepski choice of the resolution index.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deconv::{default_sup_grid, DeconvContext, PointKernel};
use crate::error::{Error, Result};
use crate::wavelet::ResolutionIndex;

/// Observations `(W_u, Y_u)`, `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    w: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(w: Vec<f64>, y: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("covariate dimension must be at least 1".into()));
        }
        if w.len() != y.len() * dim {
            return Err(Error::Data(format!(
                "{} covariate values do not form {} rows of dimension {dim}",
                w.len(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {}", y.len())));
        }
        if let Some(i) = w.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat position {i}")));
        }
        Ok(Dataset { w, y, dim })
    }

    /// One-dimensional covariates.
    pub fn univariate(w: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(w, y, 1)
    }

    /// Reads a CSV with a header and columns `W_1, ..., W_d, Y`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::Data("expected at least two columns (W..., Y)".into()));
        }
        let mut w = Vec::new();
        let mut y = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            if rec.len() != width {
                return Err(Error::Data(format!(
                    "line {line}: expected {width} fields, found {}",
                    rec.len()
                )));
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!("line {line}, column {}: `{field}` is not a number", c + 1))
                })?;
                if c + 1 == width {
                    y.push(v);
                } else {
                    w.push(v);
                }
            }
        }
        Self::new(w, y, width - 1)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w_row(&self, u: usize) -> &[f64] {
        &self.w[u * self.dim..(u + 1) * self.dim]
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Smallest and largest covariate value over all axes.
    pub fn w_range(&self) -> (f64, f64) {
        self.w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Same covariates with responses multiplied by `factor`.
    pub fn scaled_responses(&self, factor: f64) -> Self {
        Dataset { w: self.w.clone(), y: self.y.iter().map(|v| v * factor).collect(), dim: self.dim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Penalties exactly as in the oracle inequality.
    Theoretical,
    /// `sigma_hat^2` in place of `sigma_tilde^2` and `c_j = 2 max|Y| ||T_j|| / 3`.
    Practical,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Theoretical => "theoretical",
            Variant::Practical => "practical",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "theoretical" | "theory" => Ok(Variant::Theoretical),
            "practical" => Ok(Variant::Practical),
            other => Err(Error::Config(format!("unknown estimator variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub epsilon: f64,
    /// Standard deviation of the regression noise.
    pub s: f64,
    /// Bound on `||m||_inf`.
    pub m_sup: f64,
    pub variant: Variant,
    /// Replaces the sample-size rule for the index set by `S_j <= max_total_level`.
    pub max_total_level: Option<u32>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            gamma: 0.5,
            gamma_tilde: 1.0,
            epsilon: 0.1,
            s: 0.15,
            m_sup: 0.5,
            variant: Variant::Practical,
            max_total_level: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("gamma", self.gamma)?;
        pos("gamma_tilde", self.gamma_tilde)?;
        pos("epsilon", self.epsilon)?;
        if !(self.s >= 0.0 && self.m_sup >= 0.0) {
            return Err(Error::Config("s and m_sup must be nonnegative".into()));
        }
        if self.variant == Variant::Theoretical && !(self.m_sup > 0.0 && self.s > 0.0) {
            return Err(Error::Config(
                "theoretical variant needs positive m_sup and s".into(),
            ));
        }
        Ok(())
    }

    /// True when `gamma <= nu + 1` or `gamma_tilde <= 2 (nu + 2)`, i.e. outside
    /// the range covered by the oracle inequality (risk exponent 1).
    pub fn outside_theory(&self, nu: f64) -> bool {
        self.gamma <= nu + 1.0 || self.gamma_tilde <= 2.0 * (nu + 2.0)
    }
}

/// Everything computed for one resolution index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDiagnostics {
    pub j: ResolutionIndex,
    pub p_hat: f64,
    pub sigma_hat_sq: f64,
    pub sigma_tilde_sq: f64,
    pub big_c: f64,
    pub small_c: f64,
    pub sup_norm: f64,
    pub gamma: f64,
    pub gamma_star: f64,
    pub r_hat: f64,
}

/// Outcome of the resolution selection at one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub j_hat: ResolutionIndex,
    pub p_hat: f64,
    /// One entry per index of the candidate set, in coarse-to-fine order.
    pub diagnostics: Vec<IndexDiagnostics>,
    pub outside_theory: bool,
}

impl Selection {
    pub fn get(&self, j: &ResolutionIndex) -> Option<&IndexDiagnostics> {
        self.diagnostics.iter().find(|d| &d.j == j)
    }
}

/// `U_u = Y_u T_j(W_u)`.
pub fn u_values(data: &Dataset, kernel: &PointKernel) -> Result<Vec<f64>> {
    (0..data.n())
        .map(|u| Ok(data.y()[u] * kernel.eval(data.w_row(u))?))
        .collect()
}

pub fn u_values_at(data: &Dataset, ctx: &DeconvContext, j: &ResolutionIndex, x: &[f64]) -> Result<Vec<f64>> {
    u_values(data, &ctx.kernel_at(j, x)?)
}

/// `p_hat_j(x)`, the mean of the `U` values.
pub fn p_hat(data: &Dataset, ctx: &DeconvContext, j: &ResolutionIndex, x: &[f64]) -> Result<f64> {
    let u = u_values_at(data, ctx, j, x)?;
    Ok(mean(&u))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/(n(n-1))) sum_{l<v} (U_l - U_v)^2`, evaluated as the unbiased
/// sample variance (two-pass for accuracy).
pub fn sigma_hat_sq(u: &[f64]) -> Result<f64> {
    let n = u.len();
    if n < 2 {
        return Err(Error::Data(format!("variance needs at least 2 values, got {n}")));
    }
    let m = mean(u);
    let ss: f64 = u.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(ss / (n - 1) as f64)
}

/// `(C_j, c_j)` for a kernel of sup norm `sup_norm`.
pub fn penalty_constants(config: &EstimatorConfig, sup_norm: f64, n: usize, max_abs_y: f64) -> Result<(f64, f64)> {
    let log_n = (n as f64).ln();
    if config.variant == Variant::Theoretical && config.m_sup <= 0.0 {
        return Err(Error::Config("theoretical variant needs m_sup > 0".into()));
    }
    let big_c = (config.m_sup + config.s * (2.0 * config.gamma_tilde * log_n).sqrt()) * sup_norm;
    let small_c = match config.variant {
        Variant::Theoretical => 16.0 * (2.0 * config.m_sup + config.s) * sup_norm,
        Variant::Practical => 2.0 * max_abs_y * sup_norm / 3.0,
    };
    Ok((big_c, small_c))
}

/// Inflated variance `sigma_hat^2 + 2 C sqrt(2 gt sigma_hat^2 log n / n) + 8 gt C^2 log n / n`.
pub fn sigma_tilde_sq(sigma_hat_sq: f64, big_c: f64, gamma_tilde: f64, n: usize) -> f64 {
    inflate(sigma_hat_sq, big_c, gamma_tilde, (n as f64).ln() / n as f64)
}

/// The inflation with `r = log n / n` given directly.
fn inflate(sigma_hat_sq: f64, big_c: f64, gamma_tilde: f64, r: f64) -> f64 {
    sigma_hat_sq + 2.0 * big_c * (2.0 * gamma_tilde * sigma_hat_sq * r).sqrt() + 8.0 * gamma_tilde * big_c * big_c * r
}

/// `Gamma_gamma(j) = sqrt(2 gamma (1+eps) var log n / n) + c_j gamma log n / n`.
pub fn gamma_of_j(variance: f64, small_c: f64, gamma: f64, epsilon: f64, n: usize) -> f64 {
    let r = (n as f64).ln() / n as f64;
    (2.0 * gamma * (1.0 + epsilon) * variance * r).sqrt() + small_c * gamma * r
}

/// `floor(n / ln^2 n)`.
pub fn level_budget(n: usize) -> u64 {
    let ln = (n as f64).ln();
    (n as f64 / (ln * ln)).floor() as u64
}

/// All `j` in `N^d` with `2^{S_j} <= floor(n / ln^2 n)` (or `S_j <=` the
/// override), sorted by total level then lexicographically.
pub fn enumerate_j(n: usize, dim: usize, max_total_level: Option<u32>) -> Result<Vec<ResolutionIndex>> {
    let max_total = match max_total_level {
        Some(t) => t,
        None => {
            if n < 8 {
                return Err(Error::Data(format!("the index set needs n >= 8, got {n}")));
            }
            let budget = level_budget(n);
            if budget < 1 {
                return Err(Error::Data(format!("empty index set for n = {n}")));
            }
            63 - budget.leading_zeros()
        }
    };
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    fill(&mut cur, 0, max_total, &mut out);
    out.sort_by(|a, b| a.coarse_cmp(b));
    Ok(out)
}

fn fill(cur: &mut Vec<u32>, axis: usize, left: u32, out: &mut Vec<ResolutionIndex>) {
    if axis == cur.len() {
        out.push(ResolutionIndex::new(cur.clone()));
        return;
    }
    for v in 0..=left {
        cur[axis] = v;
        fill(cur, axis + 1, left - v, out);
    }
    cur[axis] = 0;
}

/// Per-index quantities that do not depend on `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub j: ResolutionIndex,
    pub p_hat: f64,
    pub sigma_hat_sq: f64,
    pub sup_norm: f64,
}

/// Computes `p_hat`, `sigma_hat^2` and `||T_j||_inf` for every index.
pub fn index_stats(
    data: &Dataset,
    ctx: &DeconvContext,
    x: &[f64],
    indices: &[ResolutionIndex],
) -> Result<Vec<IndexStats>> {
    if x.len() != data.dim() || ctx.dim() != data.dim() {
        return Err(Error::Data(format!(
            "dimension mismatch: point {}, data {}, noise model {}",
            x.len(),
            data.dim(),
            ctx.dim()
        )));
    }
    indices
        .par_iter()
        .map(|j| {
            let kernel = ctx.kernel_at(j, x)?;
            let u = u_values(data, &kernel)?;
            Ok(IndexStats {
                j: j.clone(),
                p_hat: mean(&u),
                sigma_hat_sq: sigma_hat_sq(&u)?,
                sup_norm: kernel.sup_norm(&default_sup_grid(j))?,
            })
        })
        .collect()
}

/// Penalties and the selection rule applied to precomputed statistics.
pub fn select_from_stats(
    stats: &[IndexStats],
    config: &EstimatorConfig,
    n: usize,
    max_abs_y: f64,
    nu: f64,
) -> Result<Selection> {
    config.validate()?;
    if stats.is_empty() {
        return Err(Error::Run("no candidate resolution indices".into()));
    }
    let mut diags: Vec<IndexDiagnostics> = stats
        .iter()
        .map(|s| {
            let (big_c, small_c) = penalty_constants(config, s.sup_norm, n, max_abs_y)?;
            let sigma_tilde = sigma_tilde_sq(s.sigma_hat_sq, big_c, config.gamma_tilde, n);
            let var = match config.variant {
                Variant::Theoretical => sigma_tilde,
                Variant::Practical => s.sigma_hat_sq,
            };
            Ok(IndexDiagnostics {
                j: s.j.clone(),
                p_hat: s.p_hat,
                sigma_hat_sq: s.sigma_hat_sq,
                sigma_tilde_sq: sigma_tilde,
                big_c,
                small_c,
                sup_norm: s.sup_norm,
                gamma: gamma_of_j(var, small_c, config.gamma, config.epsilon, n),
                gamma_star: 0.0,
                r_hat: 0.0,
            })
        })
        .collect::<Result<_>>()?;

    let pos: HashMap<ResolutionIndex, usize> =
        diags.iter().enumerate().map(|(i, d)| (d.j.clone(), i)).collect();
    let lookup = |j: &ResolutionIndex| -> Result<usize> {
        pos.get(j).copied().ok_or_else(|| Error::MissingIndex(j.levels().to_vec()))
    };
    let m = diags.len();
    // meet[a][b] = position of j_a ∧ j_b
    let mut meet = vec![vec![0usize; m]; m];
    for a in 0..m {
        for b in 0..m {
            meet[a][b] = lookup(&diags[a].j.meet(&diags[b].j))?;
        }
    }
    let g: Vec<f64> = diags.iter().map(|d| d.gamma).collect();
    let p: Vec<f64> = diags.iter().map(|d| d.p_hat).collect();
    for a in 0..m {
        // Gamma(j, j') = Gamma(j) + Gamma(j ∧ j')
        let gamma_star = (0..m).map(|b| g[a] + g[meet[a][b]]).fold(f64::NEG_INFINITY, f64::max);
        let excess = (0..m)
            .map(|b| (p[meet[a][b]] - p[b]).abs() - (g[b] + g[meet[b][a]]))
            .fold(0.0, f64::max);
        diags[a].gamma_star = gamma_star;
        diags[a].r_hat = excess + gamma_star;
    }
    let best = (0..m)
        .min_by(|&a, &b| {
            diags[a]
                .r_hat
                .total_cmp(&diags[b].r_hat)
                .then_with(|| diags[a].j.coarse_cmp(&diags[b].j))
        })
        .unwrap();
    Ok(Selection {
        j_hat: diags[best].j.clone(),
        p_hat: diags[best].p_hat,
        diagnostics: diags,
        outside_theory: config.outside_theory(nu),
    })
}

/// Full selection at `x` over the index set implied by `n` and the config.
pub fn select_j_hat(data: &Dataset, ctx: &DeconvContext, x: &[f64], config: &EstimatorConfig) -> Result<Selection> {
    config.validate()?;
    let indices = enumerate_j(data.n(), data.dim(), config.max_total_level)?;
    let stats = index_stats(data, ctx, x, &indices)?;
    select_from_stats(&stats, config, data.n(), data.max_abs_y(), ctx.noise().ill_posedness())
}

/// Largest per-axis level in the index set, i.e. the tables a context needs.
pub fn required_level(n: usize, dim: usize, max_total_level: Option<u32>) -> Result<u32> {
    Ok(enumerate_j(n, dim, max_total_level)?
        .iter()
        .map(|j| j.max_level())
        .max()
        .unwrap_or(0))
}
