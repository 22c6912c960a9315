use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{reliability_ratio_reported, Scenario};
use crate::deconv::{CovariateWindow, DeconvContext, TableCache};
use crate::density::{ratio, DeconvDensity, DensityConfig};
use crate::error::{Error, Result};
use crate::estimator::{enumerate_j, index_stats, select_from_stats, Dataset, EstimatorConfig, IndexStats};
use crate::wavelet::{ResolutionIndex, WaveletBasis};

/// Share of failed replications above which a run is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

pub const SCHEMA_VERSION: u32 = 1;

/// One replication at one evaluation point. Failed rows carry `error` and
/// NaN estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub design: String,
    pub sigma: f64,
    pub n: usize,
    pub replication: u64,
    pub x0: f64,
    pub j_hat: Option<ResolutionIndex>,
    pub p_hat: f64,
    pub j_oracle: Option<ResolutionIndex>,
    pub p_oracle: f64,
    pub p_true: f64,
    pub f_hat: f64,
    pub bandwidth: f64,
    pub m_hat: f64,
    pub m_true: f64,
    pub abs_err_m: f64,
    pub abs_err_p: f64,
    pub abs_err_p_oracle: f64,
    pub floor_active: bool,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(scenario: &Scenario, replication: u64, x0: f64, err: &Error) -> Self {
        ResultRow {
            scenario: scenario.id.clone(),
            design: scenario.design.label(),
            sigma: scenario.sigma(),
            n: scenario.n,
            replication,
            x0,
            j_hat: None,
            p_hat: f64::NAN,
            j_oracle: None,
            p_oracle: f64::NAN,
            p_true: scenario.p_true(x0),
            f_hat: f64::NAN,
            bandwidth: f64::NAN,
            m_hat: f64::NAN,
            m_true: scenario.function.eval(x0),
            abs_err_m: f64::NAN,
            abs_err_p: f64::NAN,
            abs_err_p_oracle: f64::NAN,
            floor_active: false,
            error: Some(err.to_string()),
        }
    }
}

const ROW_HEADER: [&str; 20] = [
    "scenario",
    "design",
    "sigma",
    "n",
    "replication",
    "x0",
    "j_hat",
    "p_hat",
    "j_oracle",
    "p_oracle",
    "p_true",
    "f_hat",
    "bandwidth",
    "m_hat",
    "m_true",
    "abs_err_m",
    "abs_err_p",
    "abs_err_p_oracle",
    "floor_active",
    "error",
];

/// Round-trip decimal with 17 significant digits.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Levels joined by `;`, a plain integer in one dimension.
pub fn format_index(j: &Option<ResolutionIndex>) -> String {
    j.as_ref()
        .map(|j| j.levels().iter().map(u32::to_string).collect::<Vec<_>>().join(";"))
        .unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.design.clone(),
            format_real(r.sigma),
            r.n.to_string(),
            r.replication.to_string(),
            format_real(r.x0),
            format_index(&r.j_hat),
            format_real(r.p_hat),
            format_index(&r.j_oracle),
            format_real(r.p_oracle),
            format_real(r.p_true),
            format_real(r.f_hat),
            format_real(r.bandwidth),
            format_real(r.m_hat),
            format_real(r.m_true),
            format_real(r.abs_err_m),
            format_real(r.abs_err_p),
            format_real(r.abs_err_p_oracle),
            r.floor_active.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of one scenario, ordered by replication then evaluation point.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub rows: Vec<ResultRow>,
    pub runtime_seconds: f64,
}

impl RunOutput {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.failures() as f64 / self.rows.len() as f64
        }
    }

    /// `Err` when more than [`MAX_FAILURE_FRACTION`] of the rows failed.
    pub fn check_failures(&self) -> Result<()> {
        if self.failure_fraction() > MAX_FAILURE_FRACTION {
            return Err(Error::Run(format!(
                "{} of {} replications failed in scenario {}",
                self.failures(),
                self.rows.len(),
                self.scenario.id
            )));
        }
        Ok(())
    }

    pub fn mae(&self, x0: f64) -> Result<f64> {
        mae(&self.rows, x0)
    }
}

/// Mean of `|m_hat - m(x0)|` over the successful rows at `x0`.
pub fn mae(rows: &[ResultRow], x0: f64) -> Result<f64> {
    let errs: Vec<f64> = rows.iter().filter(|r| r.is_ok() && r.x0 == x0).map(|r| r.abs_err_m).collect();
    if errs.is_empty() {
        return Err(Error::Run(format!("no successful replications at x0 = {x0}")));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// `argmin_j |p_hat_j - p|`; ties go to the coarsest index.
pub fn oracle_index(stats: &[IndexStats], p_true: f64) -> Result<&IndexStats> {
    stats
        .iter()
        .min_by(|a, b| {
            (a.p_hat - p_true)
                .abs()
                .total_cmp(&(b.p_hat - p_true).abs())
                .then_with(|| a.j.coarse_cmp(&b.j))
        })
        .ok_or_else(|| Error::Run("no candidate resolution indices".into()))
}

/// Contexts with windows widened for extreme samples, shared by replications.
struct Widened<'a> {
    base: &'a DeconvContext,
    cache: Option<TableCache>,
    built: Mutex<HashMap<(u64, u64), Arc<DeconvContext>>>,
}

impl<'a> Widened<'a> {
    fn new(base: &'a DeconvContext) -> Self {
        Widened { base, cache: TableCache::from_env(), built: Mutex::new(HashMap::new()) }
    }

    fn get(&self, data: &Dataset) -> Result<Arc<DeconvContext>> {
        let (lo, hi) = data.w_range();
        let window: CovariateWindow = self.base.window().covering(lo, hi);
        let key = (window.w.0.to_bits(), window.w.1.to_bits());
        let mut built = self.built.lock().map_err(|_| Error::Run("poisoned context cache".into()))?;
        if let Some(ctx) = built.get(&key) {
            return Ok(ctx.clone());
        }
        log::info!("widening deconvolution tables to {:?}", window.w);
        let ctx = Arc::new(self.base.widened(lo, hi, self.cache.as_ref())?);
        built.insert(key, ctx.clone());
        Ok(ctx)
    }

    /// Runs `f` on the base context, retrying once on a widened one after a
    /// table range miss.
    fn run<T>(&self, data: &Dataset, f: impl Fn(&DeconvContext) -> Result<T>) -> Result<T> {
        match f(self.base) {
            Err(Error::Range { .. }) => f(&*self.get(data)?),
            other => other,
        }
    }
}

/// Context for a scenario: coif5 unless `basis` is given, default window,
/// levels up to what the index set needs.
pub fn scenario_context(
    scenario: &Scenario,
    config: &EstimatorConfig,
    basis: Option<WaveletBasis>,
) -> Result<DeconvContext> {
    scenario.validate()?;
    let basis = match basis {
        Some(b) => b,
        None => "coif5".parse()?,
    };
    let max_level = enumerate_j(scenario.n, 1, config.max_total_level)?
        .iter()
        .map(|j| j.max_level())
        .max()
        .unwrap_or(0);
    DeconvContext::new(basis, scenario.noise.clone(), max_level, CovariateWindow::default())
}

/// All replications of a scenario with the estimator and density settings.
pub fn run_monte_carlo(
    scenario: &Scenario,
    est_config: &EstimatorConfig,
    dens_config: &DensityConfig,
    ctx: &DeconvContext,
) -> Result<RunOutput> {
    scenario.validate()?;
    est_config.validate()?;
    let start = Instant::now();
    let indices = enumerate_j(scenario.n, 1, est_config.max_total_level)?;
    let widened = Widened::new(ctx);
    let nu = scenario.noise.ill_posedness();
    let per_rep: Vec<Vec<ResultRow>> = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let data = match scenario.generate(rep) {
                Ok(d) => d,
                Err(e) => return scenario.points.iter().map(|&x| ResultRow::failed(scenario, rep, x, &e)).collect(),
            };
            let density = DeconvDensity::new(&data, &scenario.noise, dens_config, 1.0);
            scenario
                .points
                .iter()
                .map(|&x0| {
                    let row = density.as_ref().map_err(|e| Error::Run(e.to_string())).and_then(|density| {
                        let stats = widened.run(&data, |c| index_stats(&data, c, &[x0], &indices))?;
                        replication_row(scenario, rep, x0, &data, &stats, density, est_config, nu)
                    });
                    row.unwrap_or_else(|e| ResultRow::failed(scenario, rep, x0, &e))
                })
                .collect()
        })
        .collect();
    let rows: Vec<ResultRow> = per_rep.into_iter().flatten().collect();
    for r in rows.iter().filter(|r| !r.is_ok()) {
        log::warn!("{} rep {} x0={}: {}", r.scenario, r.replication, r.x0, r.error.as_deref().unwrap_or(""));
    }
    Ok(RunOutput { scenario: scenario.clone(), rows, runtime_seconds: start.elapsed().as_secs_f64() })
}

#[allow(clippy::too_many_arguments)]
fn replication_row(
    scenario: &Scenario,
    rep: u64,
    x0: f64,
    data: &Dataset,
    stats: &[IndexStats],
    density: &DeconvDensity,
    config: &EstimatorConfig,
    nu: f64,
) -> Result<ResultRow> {
    let sel = select_from_stats(stats, config, data.n(), data.max_abs_y(), nu)?;
    let p_true = scenario.p_true(x0);
    let m_true = scenario.function.eval(x0);
    let oracle = oracle_index(stats, p_true)?;
    let dens = density.select(&[x0])?;
    let (m_hat, denom) = ratio(sel.p_hat, dens.f_hat, data.n());
    Ok(ResultRow {
        scenario: scenario.id.clone(),
        design: scenario.design.label(),
        sigma: scenario.sigma(),
        n: scenario.n,
        replication: rep,
        x0,
        j_hat: Some(sel.j_hat),
        p_hat: sel.p_hat,
        j_oracle: Some(oracle.j.clone()),
        p_oracle: oracle.p_hat,
        p_true,
        f_hat: dens.f_hat,
        bandwidth: dens.bandwidth,
        m_hat,
        m_true,
        abs_err_m: (m_hat - m_true).abs(),
        abs_err_p: (sel.p_hat - p_true).abs(),
        abs_err_p_oracle: (oracle.p_hat - p_true).abs(),
        floor_active: denom > dens.f_hat,
        error: None,
    })
}

/// Aggregates of one (design, sigma, x0) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub design: String,
    pub sigma: f64,
    pub x0: f64,
    pub replications: usize,
    pub failures: usize,
    pub mae: Option<f64>,
    pub mae_p: Option<f64>,
    pub mae_p_oracle: Option<f64>,
    pub median_abs_err_p: Option<f64>,
    pub median_abs_err_p_oracle: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

/// Key of the `mae` map: `design|sigma|x0`, e.g. `u|0.075|0.25`.
pub fn cell_key(design: &str, sigma: f64, x0: f64) -> String {
    format!("{design}|{sigma}|{x0}")
}

/// JSON summary of one or more runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenarios: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub mae: BTreeMap<String, f64>,
    pub reliability_ratios: BTreeMap<String, f64>,
    pub rows: usize,
    pub failures: usize,
    pub runtime_seconds: f64,
}

impl RunSummary {
    pub fn from_runs(runs: &[RunOutput]) -> Self {
        let mut cells = Vec::new();
        let mut mae_map = BTreeMap::new();
        let mut ratios = BTreeMap::new();
        for run in runs {
            let s = &run.scenario;
            ratios.insert(
                format!("{}|{}", s.design.label(), s.sigma()),
                reliability_ratio_reported(&s.design, s.sigma()),
            );
            for &x0 in &s.points {
                let at: Vec<&ResultRow> = run.rows.iter().filter(|r| r.x0 == x0).collect();
                let ok: Vec<&&ResultRow> = at.iter().filter(|r| r.is_ok()).collect();
                let col = |f: fn(&ResultRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let cell = CellSummary {
                    scenario: s.id.clone(),
                    design: s.design.label(),
                    sigma: s.sigma(),
                    x0,
                    replications: at.len(),
                    failures: at.len() - ok.len(),
                    mae: mean(&col(|r| r.abs_err_m)),
                    mae_p: mean(&col(|r| r.abs_err_p)),
                    mae_p_oracle: mean(&col(|r| r.abs_err_p_oracle)),
                    median_abs_err_p: median(&col(|r| r.abs_err_p)),
                    median_abs_err_p_oracle: median(&col(|r| r.abs_err_p_oracle)),
                };
                if let Some(m) = cell.mae {
                    mae_map.insert(cell_key(&cell.design, cell.sigma, x0), m);
                }
                cells.push(cell);
            }
        }
        RunSummary {
            schema_version: SCHEMA_VERSION,
            scenarios: runs.iter().map(|r| r.scenario.id.clone()).collect(),
            cells,
            mae: mae_map,
            reliability_ratios: ratios,
            rows: runs.iter().map(|r| r.rows.len()).sum(),
            failures: runs.iter().map(RunOutput::failures).sum(),
            runtime_seconds: runs.iter().map(|r| r.runtime_seconds).sum(),
        }
    }
}

/// Per-replication outcome of a gamma scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScanRow {
    pub gamma: f64,
    pub replication: u64,
    pub j_hat: Option<ResolutionIndex>,
    pub p_hat: f64,
    pub abs_err_p: f64,
    pub error: Option<String>,
}

/// Mean `|p_hat_{j_hat} - p(x0)|` at one gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub risk: f64,
    pub mean_level: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    pub scenario: String,
    pub x0: f64,
    pub points: Vec<GammaPoint>,
    pub rows: Vec<GammaScanRow>,
    /// Largest ratio between the risks of neighbouring grid points.
    pub max_adjacent_ratio: f64,
    /// Gammas of the pair attaining it.
    pub jump_between: Option<(f64, f64)>,
    pub jump_detected: bool,
    pub failures: usize,
}

/// Ratio between neighbouring risks at which a scan is flagged as jumping.
pub const JUMP_RATIO: f64 = 1.5;

/// Pointwise risk of the selected estimate at `x0` for each gamma; the
/// gamma-free statistics are computed once per replication.
pub fn gamma_scan(
    scenario: &Scenario,
    grid: &[f64],
    x0: f64,
    config: &EstimatorConfig,
    ctx: &DeconvContext,
) -> Result<GammaScan> {
    scenario.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("empty gamma grid".into()));
    }
    if grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("gamma grid must be positive and strictly increasing".into()));
    }
    let indices = enumerate_j(scenario.n, 1, config.max_total_level)?;
    let widened = Widened::new(ctx);
    let nu = scenario.noise.ill_posedness();
    let p_true = scenario.p_true(x0);
    let per_rep: Vec<Vec<GammaScanRow>> = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let stats = scenario.generate(rep).and_then(|data| {
                let s = widened.run(&data, |c| index_stats(&data, c, &[x0], &indices))?;
                Ok((data.n(), data.max_abs_y(), s))
            });
            grid.iter()
                .map(|&gamma| {
                    let sel = stats.as_ref().map_err(|e| Error::Run(e.to_string())).and_then(|(n, ymax, s)| {
                        select_from_stats(s, &EstimatorConfig { gamma, ..config.clone() }, *n, *ymax, nu)
                    });
                    match sel {
                        Ok(sel) => GammaScanRow {
                            gamma,
                            replication: rep,
                            abs_err_p: (sel.p_hat - p_true).abs(),
                            p_hat: sel.p_hat,
                            j_hat: Some(sel.j_hat),
                            error: None,
                        },
                        Err(e) => GammaScanRow {
                            gamma,
                            replication: rep,
                            j_hat: None,
                            p_hat: f64::NAN,
                            abs_err_p: f64::NAN,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<GammaScanRow> = per_rep.into_iter().flatten().collect();
    let points: Vec<GammaPoint> = grid
        .iter()
        .map(|&gamma| {
            let ok: Vec<&GammaScanRow> = rows.iter().filter(|r| r.gamma == gamma && r.error.is_none()).collect();
            let k = ok.len().max(1) as f64;
            GammaPoint {
                gamma,
                risk: if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| r.abs_err_p).sum::<f64>() / k },
                mean_level: ok.iter().filter_map(|r| r.j_hat.as_ref()).map(|j| f64::from(j.total())).sum::<f64>() / k,
                replications: ok.len(),
            }
        })
        .collect();
    let mut max_ratio = 1.0;
    let mut jump_between = None;
    for w in points.windows(2) {
        let (a, b) = (w[0].risk, w[1].risk);
        if a > 0.0 && b > 0.0 {
            let r = (a / b).max(b / a);
            if r > max_ratio {
                max_ratio = r;
                jump_between = Some((w[0].gamma, w[1].gamma));
            }
        }
    }
    Ok(GammaScan {
        scenario: scenario.id.clone(),
        x0,
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        points,
        rows,
        max_adjacent_ratio: max_ratio,
        jump_between,
        jump_detected: max_ratio >= JUMP_RATIO,
    })
}

impl GammaScan {
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "risk", "mean_level", "replications"])?;
        for p in &self.points {
            w.write_record([format_real(p.gamma), format_real(p.risk), format_real(p.mean_level), p.replications.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma", "replication", "j_hat", "p_hat", "abs_err_p", "error"])?;
        for r in &self.rows {
            w.write_record([
                format_real(r.gamma),
                r.replication.to_string(),
                format_index(&r.j_hat),
                format_real(r.p_hat),
                format_real(r.abs_err_p),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
