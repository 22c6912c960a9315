//! Deconvolution kernel density estimate of `f_X` with a Goldenshluger-Lepski
//! bandwidth, and the ratio estimator of `m`.
//!
//! The kernel has `F(K) = 1_{[-1,1]^d}`, so that
//! `f_hat_h(x) = (2 pi)^{-d} ∫_{[-1/h,1/h]^d} e^{i<t,x>} conj(c_n(t)) / psi(t) dt`
//! with `c_n(t) = n^{-1} sum_u e^{i<t,W_u>}`, which is what is integrated here.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::deconv::{DeconvContext, NoiseComponent, NoiseModel};
use crate::error::{Error, Result};
use crate::estimator::{select_j_hat, Dataset, EstimatorConfig, IndexDiagnostics};
use crate::quad::gauss_legendre;
use crate::wavelet::ResolutionIndex;

const NODES_PER_PANEL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Explicit bandwidths; when absent a geometric grid is derived from `n`.
    pub bandwidths: Option<Vec<f64>>,
    pub grid_size: usize,
    /// Constant in front of the variance proxy `V(h)`.
    pub kappa: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { bandwidths: None, grid_size: 20, kappa: 1.0 }
    }
}

impl DensityConfig {
    /// Bandwidths sorted increasingly.
    pub fn grid(&self, n: usize, nu: f64) -> Result<Vec<f64>> {
        let mut h = match &self.bandwidths {
            Some(h) => h.clone(),
            None => bandwidth_grid(n, nu, self.grid_size),
        };
        if h.is_empty() || h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("bandwidth grid must be nonempty and positive".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        h.sort_by(f64::total_cmp);
        h.dedup();
        Ok(h)
    }
}

/// `size` geometric points from `n^{-1/(2 nu + 1)} / 4` to 1.
pub fn bandwidth_grid(n: usize, nu: f64, size: usize) -> Vec<f64> {
    let lo = (n as f64).powf(-1.0 / (2.0 * nu + 1.0)) / 4.0;
    if size <= 1 {
        return vec![lo];
    }
    let ratio = (1.0 / lo).powf(1.0 / (size - 1) as f64);
    (0..size).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Frequency-axis quadrature with breakpoints at every cutoff `1/h`.
#[derive(Debug, Clone)]
struct AxisRule {
    /// `(t, weight, band)`: `band` is the index of the largest bandwidth whose
    /// cutoff still contains `t`; smaller bandwidths (larger cutoffs) too.
    nodes: Vec<(f64, f64, usize)>,
}

impl AxisRule {
    /// Nodes on `[0, a_max]` (or `[-a_max, a_max]` when `symmetric`), panels
    /// no wider than `max_width`.
    fn new(cutoffs: &[f64], max_width: f64, symmetric: bool) -> Self {
        let (gx, gw) = gauss_legendre(NODES_PER_PANEL);
        // `cutoffs` decrease (bandwidths increase); walk them upwards
        let cuts: Vec<f64> = cutoffs.iter().rev().copied().collect();
        let mut nodes = Vec::new();
        let mut left = 0.0;
        for (b, &right) in cuts.iter().enumerate() {
            // band index in terms of the increasing bandwidth list
            let band = cuts.len() - 1 - b;
            let panels = ((right - left) / max_width).ceil().max(1.0) as usize;
            let width = (right - left) / panels as f64;
            for p in 0..panels {
                let a = left + p as f64 * width;
                for (x, w) in gx.iter().zip(&gw) {
                    let t = a + 0.5 * width * (x + 1.0);
                    nodes.push((t, 0.5 * width * w, band));
                    if symmetric {
                        nodes.push((-t, 0.5 * width * w, band));
                    }
                }
            }
            left = right;
        }
        AxisRule { nodes }
    }
}

/// Deconvolution density estimates at all bandwidths of a grid, for any `x`.
#[derive(Debug, Clone)]
pub struct DeconvDensity {
    dim: usize,
    n: usize,
    bandwidths: Vec<f64>,
    /// Frequency nodes as flat `dim`-tuples, with their band and the value
    /// `weight * conj(c_n(t)) / psi(t)`.
    freqs: Vec<f64>,
    bands: Vec<usize>,
    values: Vec<Complex64>,
    /// `||K_h||_2` per bandwidth.
    l2_norms: Vec<f64>,
    kappa: f64,
    /// Largest `|x|` for which the quadrature resolution was planned.
    x_bound: f64,
}

/// Density estimates and the selected bandwidth at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySelection {
    pub bandwidth: f64,
    pub f_hat: f64,
    pub bandwidths: Vec<f64>,
    pub estimates: Vec<f64>,
    pub criterion: Vec<f64>,
}

impl DeconvDensity {
    /// Estimates for `x` in `[-x_bound, x_bound]^d`.
    pub fn new(data: &Dataset, noise: &NoiseModel, config: &DensityConfig, x_bound: f64) -> Result<Self> {
        let noise = noise.for_dim(data.dim())?;
        let dim = data.dim();
        let n = data.n();
        let bandwidths = config.grid(n, noise.ill_posedness())?;
        let cutoffs: Vec<f64> = bandwidths.iter().map(|h| 1.0 / h).collect();
        let w_max = data.w().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // phase e^{it(x - W)} turns by at most 2 radians per panel
        let spread = x_bound.abs() + w_max + 1.0;
        let max_width = 2.0 / spread;

        let first = AxisRule::new(&cutoffs, max_width, false);
        let full = AxisRule::new(&cutoffs, max_width, true);
        // conj symmetry of the integrand: first axis on [0, a] with weight 2
        let axes: Vec<&AxisRule> = (0..dim).map(|l| if l == 0 { &first } else { &full }).collect();

        let mut freqs = Vec::new();
        let mut bands = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0usize; dim];
        let mut t = vec![0.0; dim];
        'outer: loop {
            let mut weight = 2.0;
            let mut band = usize::MAX;
            let mut inv_psi = Complex64::new(1.0, 0.0);
            for l in 0..dim {
                let (tl, wl, bl) = axes[l].nodes[idx[l]];
                t[l] = tl;
                weight *= wl;
                band = band.min(bl);
                inv_psi *= noise.component(l).inverse_ft(tl);
            }
            let mut ecf = Complex64::new(0.0, 0.0);
            for u in 0..n {
                let phase: f64 = t.iter().zip(data.w_row(u)).map(|(a, b)| a * b).sum();
                ecf += Complex64::from_polar(1.0, phase);
            }
            ecf /= n as f64;
            freqs.extend_from_slice(&t);
            bands.push(band);
            values.push(ecf.conj() * inv_psi * weight);
            // odometer over the tensor grid
            for l in (0..dim).rev() {
                idx[l] += 1;
                if idx[l] < axes[l].nodes.len() {
                    continue 'outer;
                }
                idx[l] = 0;
            }
            break;
        }

        let l2_norms = bandwidths
            .iter()
            .map(|&h| {
                (0..dim)
                    .map(|l| kernel_l2_sq(noise.component(l), 1.0 / h))
                    .product::<f64>()
                    .sqrt()
            })
            .collect();
        Ok(DeconvDensity {
            dim,
            n,
            bandwidths,
            freqs,
            bands,
            values,
            l2_norms,
            kappa: config.kappa,
            x_bound: x_bound.abs(),
        })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// `||K_h||_2` for each bandwidth of the grid.
    pub fn l2_norms(&self) -> &[f64] {
        &self.l2_norms
    }

    /// `V(h) = ||K_h||_2 sqrt(log n / n)` for each bandwidth.
    pub fn variance_proxy(&self) -> Vec<f64> {
        let r = ((self.n as f64).ln() / self.n as f64).sqrt();
        self.l2_norms.iter().map(|v| v * r).collect()
    }

    /// `f_hat_h(x)` for every bandwidth of the grid (increasing `h`).
    pub fn estimates(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Data(format!("point has {} axes, data has {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| v.abs() > self.x_bound + 1e-12) {
            return Err(Error::Data(format!(
                "point {x:?} outside the planned range |x| <= {}",
                self.x_bound
            )));
        }
        let m = self.bandwidths.len();
        let mut per_band = vec![0.0; m];
        for (i, v) in self.values.iter().enumerate() {
            let t = &self.freqs[i * self.dim..(i + 1) * self.dim];
            let phase: f64 = t.iter().zip(x).map(|(a, b)| a * b).sum();
            per_band[self.bands[i]] += (Complex64::from_polar(1.0, phase) * v).re;
        }
        // a node in band b belongs to every bandwidth h_i with i <= b
        let norm = (2.0 * std::f64::consts::PI).powi(self.dim as i32);
        let mut out = vec![0.0; m];
        let mut acc = 0.0;
        for b in (0..m).rev() {
            acc += per_band[b];
            out[b] = acc / norm;
        }
        Ok(out)
    }

    pub fn estimate(&self, x: &[f64], h: f64) -> Result<f64> {
        let i = self
            .bandwidths
            .iter()
            .position(|v| *v == h)
            .ok_or_else(|| Error::Config(format!("bandwidth {h} is not on the grid")))?;
        Ok(self.estimates(x)?[i])
    }

    /// Minimizes `sup_{h' <= h} {|f_h - f_h'| - kappa V(h')}_+ + kappa V(h)`;
    /// ties go to the larger bandwidth.
    pub fn select(&self, x: &[f64]) -> Result<DensitySelection> {
        let f = self.estimates(x)?;
        let v = self.variance_proxy();
        let k = self.kappa;
        let criterion: Vec<f64> = (0..f.len())
            .map(|i| {
                let a = (0..=i).map(|p| (f[i] - f[p]).abs() - k * v[p]).fold(0.0, f64::max);
                a + k * v[i]
            })
            .collect();
        let mut best = 0;
        for i in 1..f.len() {
            if criterion[i] <= criterion[best] {
                best = i;
            }
        }
        Ok(DensitySelection {
            bandwidth: self.bandwidths[best],
            f_hat: f[best],
            bandwidths: self.bandwidths.clone(),
            estimates: f,
            criterion,
        })
    }
}

/// `||K_h||_2^2 = (1/pi) ∫_0^a |1/psi(t)|^2 dt` for one axis, `a = 1/h`.
pub fn kernel_l2_sq(noise: &NoiseComponent, a: f64) -> f64 {
    let (gx, gw) = gauss_legendre(NODES_PER_PANEL);
    let panels = a.ceil().max(1.0) as usize;
    let width = a / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let lo = p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            let t = lo + 0.5 * width * (x + 1.0);
            sum += 0.5 * width * w * noise.inverse_ft(t).norm_sqr();
        }
    }
    sum / std::f64::consts::PI
}

/// One-dimensional deconvolution kernel
/// `K_h(u) = (1/pi) Re ∫_0^{1/h} e^{itu} / psi(t) dt` by Gauss-Legendre.
pub fn deconv_kernel(noise: &NoiseComponent, h: f64, u: f64) -> f64 {
    let a = 1.0 / h;
    let (gx, gw) = gauss_legendre(NODES_PER_PANEL);
    let panels = (a * (u.abs() + 1.0) / 2.0).ceil().max(1.0) as usize;
    let width = a / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let lo = p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            let t = lo + 0.5 * width * (x + 1.0);
            sum += 0.5 * width * w * (Complex64::from_polar(1.0, t * u) * noise.inverse_ft(t)).re;
        }
    }
    sum / std::f64::consts::PI
}

/// `m_hat = p_hat / max(f_hat, n^{-1/2})`; returns `(m_hat, denominator)`.
pub fn ratio(p_hat: f64, f_hat: f64, n: usize) -> (f64, f64) {
    let denom = f_hat.max(1.0 / (n as f64).sqrt());
    (p_hat / denom, denom)
}

/// Everything reported for one estimation point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub x: Vec<f64>,
    pub n: usize,
    pub j_hat: ResolutionIndex,
    pub p_hat: f64,
    pub f_hat: f64,
    pub bandwidth: f64,
    pub denominator: f64,
    pub floor_active: bool,
    pub m_hat: f64,
    pub outside_theory: bool,
    pub diagnostics: Vec<IndexDiagnostics>,
}

/// Ratio estimate at `x` from an already built density estimator.
pub fn estimate_with(
    data: &Dataset,
    ctx: &DeconvContext,
    density: &DeconvDensity,
    x: &[f64],
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    let sel = select_j_hat(data, ctx, x, config)?;
    let dens = density.select(x)?;
    let (m_hat, denominator) = ratio(sel.p_hat, dens.f_hat, data.n());
    Ok(EstimateReport {
        x: x.to_vec(),
        n: data.n(),
        j_hat: sel.j_hat,
        p_hat: sel.p_hat,
        f_hat: dens.f_hat,
        bandwidth: dens.bandwidth,
        denominator,
        floor_active: denominator > dens.f_hat,
        m_hat,
        outside_theory: sel.outside_theory,
        diagnostics: sel.diagnostics,
    })
}

/// `m_hat(x) = p_hat_{j_hat}(x) / max(f_hat_X(x), n^{-1/2})`.
pub fn estimate_m(
    data: &Dataset,
    ctx: &DeconvContext,
    x: &[f64],
    config: &EstimatorConfig,
    density_config: &DensityConfig,
) -> Result<EstimateReport> {
    let bound = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let density = DeconvDensity::new(data, ctx.noise(), density_config, bound)?;
    estimate_with(data, ctx, &density, x, config)
}
