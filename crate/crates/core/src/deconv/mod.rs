//! Covariate-noise models and the deconvolved wavelet `D_j phi`.
//!
//! For one axis and scale `j` the deconvolved scaling function is
//!
//! ```text
//! d_j(w) = (2 pi)^{-1} ∫ e^{-itw} conj(F(phi)(t)) / psi(2^j t) dt
//! ```
//!
//! where `psi` is the Fourier transform of the noise density under the
//! convention `F(f)(t) = ∫ e^{-ity} f(y) dy`. The `(2 pi)^{-1}` factor makes
//! `d_j = phi` for noiseless covariates, so that `E[Y d_j(2^j W - k)]`
//! reproduces the projection coefficient exactly.

mod cache;
mod kernel;
mod table;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{TableCache, CACHE_DIR_ENV};
pub use kernel::{default_sup_grid, eval_dj_phi, AxisGrid, CovariateWindow, DeconvContext, PointKernel};
pub use table::{tabulate_dj, DeconvTable, QuadratureSettings, TABLE_STEP};

/// Noise law of a single covariate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseComponent {
    /// Centered Laplace with density `exp(-|x|/scale) / (2 scale)`.
    Laplace { scale: f64 },
    /// Gamma with density proportional to `x^{shape-1} exp(-x/scale)` on `x > 0`.
    Gamma { shape: f64, scale: f64 },
    /// No noise.
    Dirac,
}

impl NoiseComponent {
    pub fn laplace(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(NoiseComponent::Laplace { scale })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::Config(format!(
                "Gamma shape and scale must be positive, got ({shape}, {scale})"
            )));
        }
        Ok(NoiseComponent::Gamma { shape, scale })
    }

    /// `psi(t) = E[e^{-it delta}]`.
    pub fn ft(&self, t: f64) -> Complex64 {
        match *self {
            NoiseComponent::Laplace { scale } => {
                Complex64::new(1.0 / (1.0 + scale * scale * t * t), 0.0)
            }
            NoiseComponent::Gamma { shape, scale } => {
                Complex64::new(1.0, scale * t).powf(-shape)
            }
            NoiseComponent::Dirac => Complex64::new(1.0, 0.0),
        }
    }

    /// `1 / psi(t)`, computed without forming `psi` where a closed form exists.
    pub fn inverse_ft(&self, t: f64) -> Complex64 {
        match *self {
            NoiseComponent::Laplace { scale } => Complex64::new(1.0 + scale * scale * t * t, 0.0),
            NoiseComponent::Gamma { shape, scale } => Complex64::new(1.0, scale * t).powf(shape),
            NoiseComponent::Dirac => Complex64::new(1.0, 0.0),
        }
    }

    /// Degree of ill-posedness `nu`.
    pub fn ill_posedness(&self) -> f64 {
        match *self {
            NoiseComponent::Laplace { .. } => 2.0,
            NoiseComponent::Gamma { shape, .. } => shape,
            NoiseComponent::Dirac => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseComponent::Laplace { scale } => 2.0 * scale * scale,
            NoiseComponent::Gamma { shape, scale } => shape * scale * scale,
            NoiseComponent::Dirac => 0.0,
        }
    }

    /// Draws one noise value. Laplace uses the inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseComponent::Laplace { scale } => {
                let mut u: f64 = rng.random::<f64>() - 0.5;
                while u == -0.5 {
                    u = rng.random::<f64>() - 0.5;
                }
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseComponent::Gamma { shape, scale } => {
                let g = rand_distr::Gamma::new(shape, scale).expect("validated gamma parameters");
                rng.sample(g)
            }
            NoiseComponent::Dirac => 0.0,
        }
    }

    /// Canonical key used for table caching.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NoiseComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseComponent::Laplace { scale } => write!(f, "laplace:{scale}"),
            NoiseComponent::Gamma { shape, scale } => write!(f, "gamma:{shape}:{scale}"),
            NoiseComponent::Dirac => f.write_str("dirac"),
        }
    }
}

impl FromStr for NoiseComponent {
    type Err = Error;

    /// `dirac`, `laplace:<scale>`, `gamma:<shape>:<scale>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{p}` in noise spec `{s}`")))
        };
        match parts.as_slice() {
            ["dirac"] | ["none"] => Ok(NoiseComponent::Dirac),
            ["laplace", scale] => NoiseComponent::laplace(num(scale)?),
            ["gamma", shape, scale] => NoiseComponent::gamma(num(shape)?, num(scale)?),
            _ => Err(Error::Config(format!("unrecognized noise spec `{s}`"))),
        }
    }
}

/// Product-form covariate noise, one component per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    components: Vec<NoiseComponent>,
}

impl NoiseModel {
    pub fn new(components: Vec<NoiseComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("noise model needs at least one axis".into()));
        }
        Ok(NoiseModel { components })
    }

    /// Same component on every one of `dim` axes.
    pub fn isotropic(component: NoiseComponent, dim: usize) -> Self {
        NoiseModel { components: vec![component; dim.max(1)] }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[NoiseComponent] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &NoiseComponent {
        &self.components[axis]
    }

    /// `psi_l(t)` for axis `l`.
    pub fn noise_ft(&self, axis: usize, t: f64) -> Complex64 {
        self.components[axis].ft(t)
    }

    /// Overall ill-posedness, the maximum over axes.
    pub fn ill_posedness(&self) -> f64 {
        self.components.iter().map(|c| c.ill_posedness()).fold(0.0, f64::max)
    }

    /// Broadcasts a one-axis model to `dim` axes; other mismatches are errors.
    pub fn for_dim(&self, dim: usize) -> Result<Self> {
        if self.dim() == dim {
            Ok(self.clone())
        } else if self.dim() == 1 {
            Ok(NoiseModel::isotropic(self.components[0], dim))
        } else {
            Err(Error::Config(format!(
                "noise model has {} axes but the data has {dim}",
                self.dim()
            )))
        }
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    /// Comma-separated per-axis specs, e.g. `laplace:0.075` or `laplace:0.1,dirac`.
    fn from_str(s: &str) -> Result<Self> {
        let components = s
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<NoiseComponent>>>()?;
        NoiseModel::new(components)
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}
