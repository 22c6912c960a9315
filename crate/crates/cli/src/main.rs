use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use deconvreg::deconv::{CovariateWindow, DeconvContext, NoiseModel, TableCache, CACHE_DIR_ENV};
use deconvreg::density::{estimate_m, DensityConfig};
use deconvreg::estimator::{required_level, Dataset, EstimatorConfig, Variant};
use deconvreg::simlab::{
    doppler, format_real, gamma_scan, reliability_ratio, reliability_ratio_reported, run_monte_carlo,
    scenario_context, write_rows_csv, Design, GammaScan, ResultRow, RunOutput, RunSummary, Scenario,
    PRESET_SIGMAS, SCHEMA_VERSION,
};
use deconvreg::wavelet::WaveletBasis;

/// Exit code when the run finished but some rows failed.
const EXIT_ROW_ERRORS: u8 = 2;

#[derive(Parser)]
#[command(name = "deconvreg", version, about = "Adaptive wavelet regression with errors in covariates")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the regression function at one point from a CSV of (W_1..W_d, Y).
    Estimate(EstimateArgs),
    /// Monte Carlo run of one scenario.
    Simulate(SimulateArgs),
    /// Pointwise risk as a function of the penalty constant gamma.
    GammaScan(GammaScanArgs),
    /// Regenerate table and figure data.
    Reproduce(ReproduceArgs),
    /// Inspect or empty the deconvolution table cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
        /// Cache directory; defaults to $DECONVREG_CACHE_DIR.
        #[arg(long, global = true)]
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value = "practical")]
    variant: Variant,
    #[arg(long, default_value = "coif5")]
    wavelet: String,
    /// Cap on the total resolution level of the index set.
    #[arg(long)]
    max_level: Option<u32>,
}

impl EstimatorArgs {
    fn config(&self) -> EstimatorConfig {
        EstimatorConfig { gamma: self.gamma, variant: self.variant, max_total_level: self.max_level, ..Default::default() }
    }

    fn basis(&self) -> Result<WaveletBasis> {
        Ok(self.wavelet.parse()?)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Estimation point, comma-separated for d > 1.
    #[arg(long)]
    x: String,
    /// dirac, laplace:<scale> or gamma:<shape>:<scale>; comma-separated per axis.
    #[arg(long)]
    noise: String,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Regression noise sd (theoretical variant).
    #[arg(long, default_value_t = 0.15)]
    s: f64,
    /// Bound on |m| (theoretical variant).
    #[arg(long, default_value_t = 0.5)]
    m_sup: f64,
    /// Fixed density bandwidth instead of the data-driven choice.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Preset name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut s = load_scenario(&self.scenario)?;
        if let Some(r) = self.reps {
            s.replications = r;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GammaScanArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long, default_value = "0.05:2:0.05")]
    grid: String,
    #[arg(long)]
    x: f64,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Tables to produce (1, 3).
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    tables: Vec<u32>,
    /// Figure data to produce (1 to 5).
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    figures: Vec<u32>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "0.05:2:0.05")]
    gamma_grid: String,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Number of cached tables and their total size.
    Stats,
    /// Delete every cached table.
    Clear,
}

#[derive(Serialize)]
struct ErrorEntry {
    scenario: String,
    replication: u64,
    x0: f64,
    gamma: Option<f64>,
    error: String,
}

#[derive(Serialize)]
struct ErrorManifest {
    schema_version: u32,
    errors: Vec<ErrorEntry>,
}

impl ErrorManifest {
    fn from_rows(rows: &[ResultRow]) -> Self {
        let errors = rows
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| ErrorEntry {
                    scenario: r.scenario.clone(),
                    replication: r.replication,
                    x0: r.x0,
                    gamma: None,
                    error: e.clone(),
                })
            })
            .collect();
        ErrorManifest { schema_version: SCHEMA_VERSION, errors }
    }

    fn from_scan(scan: &GammaScan) -> Self {
        let errors = scan
            .rows
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| ErrorEntry {
                    scenario: scan.scenario.clone(),
                    replication: r.replication,
                    x0: scan.x0,
                    gamma: Some(r.gamma),
                    error: e.clone(),
                })
            })
            .collect();
        ErrorManifest { schema_version: SCHEMA_VERSION, errors }
    }
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    schema_version: u32,
    scenario: &'a str,
    x0: f64,
    replications: usize,
    max_adjacent_ratio: f64,
    jump_between: Option<(f64, f64)>,
    jump_detected: bool,
    failures: usize,
    points: &'a [deconvreg::simlab::GammaPoint],
}

impl<'a> ScanSummary<'a> {
    fn new(scan: &'a GammaScan, replications: usize) -> Self {
        ScanSummary {
            schema_version: SCHEMA_VERSION,
            scenario: &scan.scenario,
            x0: scan.x0,
            replications,
            max_adjacent_ratio: scan.max_adjacent_ratio,
            jump_between: scan.jump_between,
            jump_detected: scan.jump_detected,
            failures: scan.failures,
            points: &scan.points,
        }
    }
}

#[derive(Serialize)]
struct ReproduceManifest {
    schema_version: u32,
    status: &'static str,
    replications: usize,
    seed: Option<u64>,
    files: Vec<String>,
    errors: Vec<ErrorEntry>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let res = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::GammaScan(a) => run_gamma_scan(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Cache { action, dir } => cache(action, dir),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ROW_ERRORS),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_scenario(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()));
    }
    Ok(Scenario::preset(name)?)
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad coordinate `{p}` in --x")))
        .collect()
}

/// `lo:hi:step` (inclusive) or `a,b,c`.
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number `{p}` in grid `{s}`")))
            .collect::<Result<_>>()?;
        let (lo, hi, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || hi < lo {
            bail!("grid `{s}` needs step > 0 and hi >= lo");
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect());
    }
    if parts.len() != 1 {
        bail!("grid `{s}` is neither lo:hi:step nor a list");
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number `{p}` in grid `{s}`")))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<bool> {
    let data = Dataset::from_csv_path(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let x = parse_point(&a.x)?;
    if x.len() != data.dim() {
        bail!("--x has {} coordinates but the data has {} covariates", x.len(), data.dim());
    }
    let noise: NoiseModel = a.noise.parse()?;
    let noise = noise.for_dim(data.dim())?;
    let basis = a.est.basis()?;
    let config = EstimatorConfig { s: a.s, m_sup: a.m_sup, ..a.est.config() };
    config.validate()?;
    let (lo, hi) = data.w_range();
    let mut window = CovariateWindow::default().covering(lo, hi);
    let (xlo, xhi) = x.iter().fold((0.0f64, 1.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    window.x = (xlo, xhi);
    let level = required_level(data.n(), data.dim(), config.max_total_level)?;
    let ctx = DeconvContext::new(basis, noise, level, window)?;
    let dens = DensityConfig { bandwidths: a.bandwidth.map(|h| vec![h]), ..Default::default() };
    let report = estimate_m(&data, &ctx, &x, &config, &dens)?;
    if report.outside_theory {
        warn!("gamma = {} lies outside the range covered by the risk bound", config.gamma);
    }
    match &a.out {
        Some(p) => {
            write_json(p, &report)?;
            info!("m_hat = {} (j_hat = {}), report in {}", report.m_hat, report.j_hat, p.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(true)
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let scenario = a.scenario.load()?;
    let config = a.est.config();
    fs::create_dir_all(&a.out_dir)?;
    let ctx = scenario_context(&scenario, &config, Some(a.est.basis()?))?;
    info!("running {} ({} replications)", scenario.id, scenario.replications);
    let run = run_monte_carlo(&scenario, &config, &DensityConfig::default(), &ctx)?;
    write_rows_csv(create(&a.out_dir.join("results.csv"))?, &run.rows)?;
    write_json(&a.out_dir.join("summary.json"), &RunSummary::from_runs(std::slice::from_ref(&run)))?;
    if let Err(e) = run.check_failures() {
        warn!("{e}");
    }
    finish_rows(&a.out_dir, &run.rows)
}

/// Writes `errors.json` when any row failed; `Ok(false)` in that case.
fn finish_rows(dir: &Path, rows: &[ResultRow]) -> Result<bool> {
    let manifest = ErrorManifest::from_rows(rows);
    if manifest.errors.is_empty() {
        return Ok(true);
    }
    warn!("{} of {} rows failed, see errors.json", manifest.errors.len(), rows.len());
    write_json(&dir.join("errors.json"), &manifest)?;
    Ok(false)
}

fn run_gamma_scan(a: GammaScanArgs) -> Result<bool> {
    let scenario = a.scenario.load()?;
    let grid = parse_grid(&a.grid)?;
    let config = a.est.config();
    fs::create_dir_all(&a.out_dir)?;
    let ctx = scenario_context(&scenario, &config, Some(a.est.basis()?))?;
    info!("gamma scan of {} at x0 = {} over {} values", scenario.id, a.x, grid.len());
    let scan = gamma_scan(&scenario, &grid, a.x, &config, &ctx)?;
    scan.write_curve_csv(create(&a.out_dir.join("gamma-curve.csv"))?)?;
    scan.write_rows_csv(create(&a.out_dir.join("gamma-rows.csv"))?)?;
    write_json(&a.out_dir.join("gamma-summary.json"), &ScanSummary::new(&scan, scenario.replications))?;
    let manifest = ErrorManifest::from_scan(&scan);
    if manifest.errors.is_empty() {
        return Ok(true);
    }
    write_json(&a.out_dir.join("errors.json"), &manifest)?;
    Ok(false)
}

fn write_table1(path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["design", "design_name", "sigma", "ratio", "reported"])?;
    for s in Scenario::presets() {
        let sigma = s.sigma();
        w.write_record([
            s.design.label(),
            s.design.to_string(),
            format_real(sigma),
            format_real(reliability_ratio(&s.design, sigma)),
            format!("{:.2}", reliability_ratio_reported(&s.design, sigma)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_table3(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["design", "sigma", "x0", "replications", "failures", "mae"])?;
    for c in &summary.cells {
        w.write_record([
            c.design.clone(),
            format_real(c.sigma),
            format_real(c.x0),
            c.replications.to_string(),
            c.failures.to_string(),
            c.mae.map(format_real).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_doppler_curve(path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "m"])?;
    let points = 1000;
    for i in 0..=points {
        let x = i as f64 / points as f64;
        w.write_record([format_real(x), format_real(doppler(x))])?;
    }
    w.flush()?;
    Ok(())
}

/// First replication of every design at the smaller noise level.
fn write_noisy_samples(path: &Path, seed: Option<u64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["design", "sigma", "x", "w", "y"])?;
    for mut s in Scenario::presets().into_iter().filter(|s| s.sigma() == PRESET_SIGMAS[0]) {
        if let Some(seed) = seed {
            s.seed = seed;
        }
        let data = s.generate(0)?;
        let x = s.latent_covariates(0);
        for i in 0..data.n() {
            w.write_record([
                s.design.label(),
                format_real(s.sigma()),
                format_real(x[i]),
                format_real(data.w()[i]),
                format_real(data.y()[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn reproduce(a: ReproduceArgs) -> Result<bool> {
    if let Some(t) = a.tables.iter().find(|t| ![1, 3].contains(*t)) {
        bail!("unknown table {t} (available: 1, 3)");
    }
    if let Some(f) = a.figures.iter().find(|f| !(1..=5).contains(*f)) {
        bail!("unknown figure {f} (available: 1 to 5)");
    }
    fs::create_dir_all(&a.out_dir)?;
    let config = a.est.config();
    let basis = a.est.basis()?;
    let mut files = Vec::new();
    let mut errors = Vec::new();
    let dir = &a.out_dir;

    if a.tables.contains(&1) {
        write_table1(&dir.join("table-1.csv"))?;
        files.push("table-1.csv".to_string());
    }
    if a.figures.contains(&1) {
        write_doppler_curve(&dir.join("figure-1.csv"))?;
        files.push("figure-1.csv".to_string());
    }
    if a.figures.contains(&2) {
        write_noisy_samples(&dir.join("figure-2.csv"), a.seed)?;
        files.push("figure-2.csv".to_string());
    }

    let need_mc = a.tables.contains(&3) || a.figures.contains(&4) || a.figures.contains(&5);
    if need_mc {
        let mut runs: Vec<RunOutput> = Vec::new();
        for mut s in Scenario::presets() {
            s.replications = a.reps;
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            info!("running {} ({} replications)", s.id, s.replications);
            let ctx = scenario_context(&s, &config, Some(basis.clone()))?;
            let run = run_monte_carlo(&s, &config, &DensityConfig::default(), &ctx)?;
            if let Err(e) = run.check_failures() {
                warn!("{e}");
            }
            runs.push(run);
        }
        let rows: Vec<ResultRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
        errors.extend(ErrorManifest::from_rows(&rows).errors);
        let summary = RunSummary::from_runs(&runs);
        write_rows_csv(create(&dir.join("results.csv"))?, &rows)?;
        write_json(&dir.join("summary.json"), &summary)?;
        files.extend(["results.csv".to_string(), "summary.json".to_string()]);
        if a.tables.contains(&3) {
            write_table3(&dir.join("table-3.csv"), &summary)?;
            files.push("table-3.csv".to_string());
        }
        for (fig, x0) in [(4, 0.25), (5, 0.90)] {
            if a.figures.contains(&fig) {
                let at: Vec<ResultRow> = rows.iter().filter(|r| r.x0 == x0).cloned().collect();
                let name = format!("figure-{fig}.csv");
                write_rows_csv(create(&dir.join(&name))?, &at)?;
                files.push(name);
            }
        }
    }

    if a.figures.contains(&3) {
        let mut s = Scenario::doppler_cell(Design::beta(2.0, 2.0)?, PRESET_SIGMAS[0]);
        s.replications = a.reps;
        if let Some(seed) = a.seed {
            s.seed = seed;
        }
        let grid = parse_grid(&a.gamma_grid)?;
        info!("gamma scan of {} over {} values", s.id, grid.len());
        let ctx = scenario_context(&s, &config, Some(basis.clone()))?;
        let scan = gamma_scan(&s, &grid, 0.25, &config, &ctx)?;
        scan.write_curve_csv(create(&dir.join("figure-3.csv"))?)?;
        scan.write_rows_csv(create(&dir.join("figure-3-rows.csv"))?)?;
        write_json(&dir.join("figure-3.json"), &ScanSummary::new(&scan, s.replications))?;
        files.extend(["figure-3.csv", "figure-3-rows.csv", "figure-3.json"].map(String::from));
        errors.extend(ErrorManifest::from_scan(&scan).errors);
    }

    let ok = errors.is_empty();
    if !ok {
        warn!("{} failed rows, see manifest.json", errors.len());
    }
    let manifest = ReproduceManifest {
        schema_version: SCHEMA_VERSION,
        status: if ok { "ok" } else { "partial" },
        replications: a.reps,
        seed: a.seed,
        files,
        errors,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(ok)
}

fn cache(action: CacheAction, dir: Option<PathBuf>) -> Result<bool> {
    let cache = match dir {
        Some(d) => TableCache::new(d),
        None => match TableCache::from_env() {
            Some(c) => c,
            None => bail!("no cache directory: pass --dir or set {CACHE_DIR_ENV}"),
        },
    };
    match action {
        CacheAction::Stats => {
            let (count, bytes) = cache.stats()?;
            println!("{}: {count} tables, {bytes} bytes", cache.dir().display());
        }
        CacheAction::Clear => {
            let removed = cache.clear()?;
            println!("{}: removed {removed} tables", cache.dir().display());
        }
    }
    Ok(true)
}
