//! Simulation scenarios, data generation and Monte Carlo experiments.

mod projection;
mod run;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::deconv::{NoiseComponent, NoiseModel};
use crate::error::{Error, Result};
use crate::estimator::Dataset;

pub use projection::{projection_coefficient, true_projection, Projection};
pub use run::{
    cell_key, format_index, format_real, gamma_scan, mae, median, oracle_index, run_monte_carlo, scenario_context,
    write_rows_csv, CellSummary, GammaPoint, GammaScan, GammaScanRow, ResultRow, RunOutput, RunSummary, JUMP_RATIO,
    MAX_FAILURE_FRACTION, SCHEMA_VERSION,
};

/// Doppler test signal `sqrt(x(1-x)) sin(2 pi 1.05 / (x + 0.05))`.
pub fn doppler(x: f64) -> f64 {
    (x * (1.0 - x)).max(0.0).sqrt() * (2.0 * std::f64::consts::PI * 1.05 / (x + 0.05)).sin()
}

/// Regression function `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegressionFn {
    Doppler,
    Constant { value: f64 },
    /// `|x - center|`, Lipschitz with a kink.
    Kink { center: f64 },
}

impl RegressionFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RegressionFn::Doppler => doppler(x),
            RegressionFn::Constant { value } => value,
            RegressionFn::Kink { center } => (x - center).abs(),
        }
    }

    /// Upper bound on `|m|` over `[0, 1]`.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            RegressionFn::Doppler => 0.5,
            RegressionFn::Constant { value } => value.abs(),
            RegressionFn::Kink { center } => center.abs().max((1.0 - center).abs()),
        }
    }
}

/// Law of the unobserved covariate `X` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Design {
    Uniform,
    /// Shape parameters must be positive multiples of 1/2.
    Beta { a: f64, b: f64 },
}

/// `Gamma(x)` for positive multiples of 1/2.
fn gamma_half_integer(x: f64) -> Option<f64> {
    let twice = 2.0 * x;
    if !(x > 0.0) || (twice - twice.round()).abs() > 1e-12 {
        return None;
    }
    let mut v = if twice.round() as i64 % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut z = if twice.round() as i64 % 2 == 0 { 1.0 } else { 0.5 };
    while z < x - 1e-12 {
        v *= z;
        z += 1.0;
    }
    Some(v)
}

impl Design {
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if gamma_half_integer(a).is_none() || gamma_half_integer(b).is_none() {
            return Err(Error::Config(format!(
                "Beta shapes must be positive multiples of 1/2, got ({a}, {b})"
            )));
        }
        Ok(Design::Beta { a, b })
    }

    /// Short label used in preset names and result keys.
    pub fn label(&self) -> String {
        match *self {
            Design::Uniform => "u".into(),
            Design::Beta { a, b } => format!("beta{}{}", compact(a), compact(b)),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match *self {
            Design::Uniform => 1.0,
            Design::Beta { a, b } => {
                let g = |v| gamma_half_integer(v).expect("validated Beta shape");
                let norm = g(a + b) / (g(a) * g(b));
                norm * x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Design::Uniform => 1.0 / 12.0,
            Design::Beta { a, b } => a * b / ((a + b) * (a + b) * (a + b + 1.0)),
        }
    }

    /// Beta draws use the ratio of two Gamma variables.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Design::Uniform => rng.random::<f64>(),
            Design::Beta { a, b } => {
                let ga = Gamma::new(a, 1.0).expect("validated shape").sample(rng);
                let gb = Gamma::new(b, 1.0).expect("validated shape").sample(rng);
                ga / (ga + gb)
            }
        }
    }
}

/// `0.5 -> "05"`, `2 -> "2"`.
fn compact(v: f64) -> String {
    format!("{v}").replace('.', "")
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Design::Uniform => f.write_str("U[0,1]"),
            Design::Beta { a, b } => write!(f, "Beta({a},{b})"),
        }
    }
}

impl FromStr for Design {
    type Err = Error;

    /// `u`, `uniform`, `beta22`, `beta052`, `beta:2:2`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u" | "uniform" => Ok(Design::Uniform),
            "beta22" => Design::beta(2.0, 2.0),
            "beta052" => Design::beta(0.5, 2.0),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["beta", a, b] => {
                        let p = |v: &str| {
                            v.parse::<f64>()
                                .map_err(|_| Error::Config(format!("bad Beta shape `{v}`")))
                        };
                        Design::beta(p(a)?, p(b)?)
                    }
                    _ => Err(Error::Config(format!("unknown design `{s}`"))),
                }
            }
        }
    }
}

/// `Var X / (Var X + Var delta)` for Laplace noise of scale `sigma`.
pub fn reliability_ratio(design: &Design, sigma: f64) -> f64 {
    let v = design.variance();
    v / (v + 2.0 * sigma * sigma)
}

/// The ratio truncated (not rounded) to two decimals.
pub fn reliability_ratio_reported(design: &Design, sigma: f64) -> f64 {
    (reliability_ratio(design, sigma) * 100.0 + 1e-9).floor() / 100.0
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub function: RegressionFn,
    pub design: Design,
    pub n: usize,
    /// Standard deviation of the Gaussian regression noise.
    pub s: f64,
    pub noise: NoiseModel,
    pub points: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
}

pub const PRESET_SIGMAS: [f64; 2] = [0.075, 0.10];

impl Scenario {
    /// Doppler cell with Laplace covariate noise, as in the presets.
    pub fn doppler_cell(design: Design, sigma: f64) -> Self {
        Scenario {
            id: format!("paper-{}-{}", design.label(), sigma_label(sigma)),
            function: RegressionFn::Doppler,
            design,
            n: 1024,
            s: 0.15,
            noise: NoiseModel::isotropic(NoiseComponent::Laplace { scale: sigma }, 1),
            points: vec![0.25, 0.90],
            replications: 100,
            seed: 20_240_601,
        }
    }

    pub fn preset_names() -> Vec<String> {
        Self::presets().into_iter().map(|s| s.id).collect()
    }

    /// The six Doppler cells (3 designs x 2 noise levels).
    pub fn presets() -> Vec<Scenario> {
        let designs = [Design::Uniform, Design::Beta { a: 2.0, b: 2.0 }, Design::Beta { a: 0.5, b: 2.0 }];
        designs
            .iter()
            .flat_map(|d| PRESET_SIGMAS.iter().map(move |&s| Scenario::doppler_cell(*d, s)))
            .collect()
    }

    pub fn preset(name: &str) -> Result<Scenario> {
        Self::presets()
            .into_iter()
            .find(|s| s.id == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario preset `{name}` (known: {})",
                    Self::preset_names().join(", ")
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("scenario needs n >= 8, got {}", self.n)));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::Config(format!("regression noise sd must be >= 0, got {}", self.s)));
        }
        if self.noise.dim() != 1 {
            return Err(Error::Config("scenarios are one-dimensional".into()));
        }
        if let Some(x) = self.points.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
            return Err(Error::Config(format!("evaluation point {x} not in (0, 1)")));
        }
        if let Design::Beta { a, b } = self.design {
            Design::beta(a, b)?;
        }
        Ok(())
    }

    /// Laplace scale of the covariate noise, 0 for noiseless covariates.
    pub fn sigma(&self) -> f64 {
        match self.noise.component(0) {
            NoiseComponent::Laplace { scale } => *scale,
            NoiseComponent::Gamma { scale, shape } => (shape * scale * scale).sqrt(),
            NoiseComponent::Dirac => 0.0,
        }
    }

    /// `p(x) = m(x) f_X(x)`.
    pub fn p_true(&self, x: f64) -> f64 {
        self.function.eval(x) * self.design.density(x)
    }

    /// `m(X)` and `f_X`-generated latent covariates, regression and covariate
    /// noise, drawn from the stream seeded with `seed ^ replication`.
    pub fn generate(&self, replication: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ replication);
        let x: Vec<f64> = (0..self.n).map(|_| self.design.sample(&mut rng)).collect();
        let normal = Normal::new(0.0, self.s).map_err(|e| Error::Config(e.to_string()))?;
        let y: Vec<f64> = x.iter().map(|&xi| self.function.eval(xi) + normal.sample(&mut rng)).collect();
        let comp = *self.noise.component(0);
        let w: Vec<f64> = x.iter().map(|&xi| xi + comp.sample(&mut rng)).collect();
        Dataset::univariate(w, y)
    }

    /// Latent covariates of a replication, for checking the noise law.
    pub fn latent_covariates(&self, replication: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ replication);
        (0..self.n).map(|_| self.design.sample(&mut rng)).collect()
    }
}

/// `0.075 -> "0075"`, `0.1 -> "0100"`.
pub fn sigma_label(sigma: f64) -> String {
    format!("{:04}", (sigma * 1000.0).round() as i64)
}
