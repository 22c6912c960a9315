use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::TableCache;
use super::table::{
    noiseless_table, shared_spectra, tabulate_with_cache, DeconvTable, QuadratureSettings,
};
use super::{NoiseComponent, NoiseModel};
use crate::error::{Error, Result};
use crate::wavelet::{eval_phi_jk, ResolutionIndex, ScalingTable, WaveletBasis};

/// Ranges of noisy covariates `w` and estimation points `x` (per axis) that
/// the deconvolution tables must cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateWindow {
    pub w: (f64, f64),
    pub x: (f64, f64),
}

impl Default for CovariateWindow {
    fn default() -> Self {
        CovariateWindow { w: (-1.5, 2.5), x: (0.0, 1.0) }
    }
}

impl CovariateWindow {
    pub fn contains_w(&self, lo: f64, hi: f64) -> bool {
        lo >= self.w.0 && hi <= self.w.1
    }

    /// Smallest window containing `self` and `[lo, hi]` plus a half-unit
    /// margin, with endpoints on multiples of 1/2.
    pub fn covering(&self, lo: f64, hi: f64) -> Self {
        let lo = ((lo - 0.5) * 2.0).floor() / 2.0;
        let hi = ((hi + 0.5) * 2.0).ceil() / 2.0;
        CovariateWindow { w: (self.w.0.min(lo), self.w.1.max(hi)), x: self.x }
    }
}

/// Regular one-dimensional grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisGrid {
    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    /// Same range at half the step; contains every point of `self`.
    pub fn refined(&self) -> Self {
        AxisGrid { step: self.step / 2.0, ..*self }
    }
}

/// `[-0.5, 1.5]` at step `2^{-(max_l j_l + 4)}`.
pub fn default_sup_grid(j: &ResolutionIndex) -> AxisGrid {
    AxisGrid { lo: -0.5, hi: 1.5, step: 0.5f64.powi(j.max_level() as i32 + 4) }
}

/// `prod_l d_{j_l}(w_l)` from one table per axis.
pub fn eval_dj_phi(tables: &[&DeconvTable], w: &[f64]) -> Result<f64> {
    assert_eq!(tables.len(), w.len(), "one table per axis required");
    let mut prod = 1.0;
    for (t, &wl) in tables.iter().zip(w) {
        prod *= t.eval(wl)?;
    }
    Ok(prod)
}

/// Wavelet, noise and all deconvolution tables for levels `0..=max_level`.
#[derive(Debug, Clone)]
pub struct DeconvContext {
    basis: WaveletBasis,
    phi: Arc<ScalingTable>,
    noise: NoiseModel,
    window: CovariateWindow,
    settings: QuadratureSettings,
    max_level: u32,
    /// `tables[axis][j]`
    tables: Vec<Vec<Arc<DeconvTable>>>,
}

impl DeconvContext {
    /// Builds with default quadrature settings and the environment's table cache.
    pub fn new(
        basis: WaveletBasis,
        noise: NoiseModel,
        max_level: u32,
        window: CovariateWindow,
    ) -> Result<Self> {
        let cache = TableCache::from_env();
        Self::with_options(basis, noise, max_level, window, QuadratureSettings::default(), cache.as_ref())
    }

    pub fn with_options(
        basis: WaveletBasis,
        noise: NoiseModel,
        max_level: u32,
        window: CovariateWindow,
        settings: QuadratureSettings,
        cache: Option<&TableCache>,
    ) -> Result<Self> {
        basis.check_pairing(noise.ill_posedness())?;
        if !(window.w.1 > window.w.0 && window.x.1 >= window.x.0) {
            return Err(Error::Config(format!("degenerate covariate window {window:?}")));
        }
        let phi = Arc::new(ScalingTable::with_default_level(&basis));
        let mut built: HashMap<String, Vec<Arc<DeconvTable>>> = HashMap::new();
        for comp in noise.components() {
            let key = comp.key();
            if built.contains_key(&key) {
                continue;
            }
            let tables = build_levels(&basis, &phi, comp, max_level, &window, &settings, cache)?;
            built.insert(key, tables);
        }
        let tables = noise.components().iter().map(|c| built[&c.key()].clone()).collect();
        Ok(DeconvContext { basis, phi, noise, window, settings, max_level, tables })
    }

    /// Same configuration with a window covering `[lo, hi]`; `self` is
    /// returned unchanged when it already does.
    pub fn widened(&self, lo: f64, hi: f64, cache: Option<&TableCache>) -> Result<Self> {
        if self.window.contains_w(lo, hi) {
            return Ok(self.clone());
        }
        let window = self.window.covering(lo, hi);
        Self::with_options(
            self.basis.clone(),
            self.noise.clone(),
            self.max_level,
            window,
            self.settings,
            cache,
        )
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    pub fn scaling_table(&self) -> &ScalingTable {
        &self.phi
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn window(&self) -> &CovariateWindow {
        &self.window
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn table(&self, axis: usize, j: u32) -> Result<&DeconvTable> {
        self.tables
            .get(axis)
            .and_then(|t| t.get(j as usize))
            .map(|t| t.as_ref())
            .ok_or_else(|| {
                Error::Config(format!("no table for axis {axis} at level {j} (max {})", self.max_level))
            })
    }

    fn check_index(&self, j: &ResolutionIndex) -> Result<()> {
        if j.dim() != self.dim() {
            return Err(Error::Config(format!(
                "resolution index {j} has {} axes, context has {}",
                j.dim(),
                self.dim()
            )));
        }
        if j.max_level() > self.max_level {
            return Err(Error::Config(format!(
                "resolution index {j} exceeds tabulated level {}",
                self.max_level
            )));
        }
        Ok(())
    }

    /// `(D_j phi)(w) = prod_l d_{j_l}(w_l)`.
    pub fn dj_phi(&self, j: &ResolutionIndex, w: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        let tables: Vec<&DeconvTable> = j
            .levels()
            .iter()
            .enumerate()
            .map(|(l, &jl)| self.tables[l][jl as usize].as_ref())
            .collect();
        eval_dj_phi(&tables, w)
    }

    /// `T_j(w) = sum_k 2^{S_j/2} (D_j phi)(2^j w - k) phi_jk(x)`, summed term by
    /// term over the active shifts of `x`.
    pub fn eval_tj(&self, j: &ResolutionIndex, x: &[f64], w: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        let norm = 2f64.powf(j.total() as f64 / 2.0);
        let mut sum = 0.0;
        let mut arg = vec![0.0; w.len()];
        for k in self.basis.active_indices(j, x) {
            let phi = eval_phi_jk(&self.phi, j, &k, x);
            if phi == 0.0 {
                continue;
            }
            for (l, a) in arg.iter_mut().enumerate() {
                *a = (1u64 << j.levels()[l]) as f64 * w[l] - k[l] as f64;
            }
            sum += norm * self.dj_phi(j, &arg)? * phi;
        }
        Ok(sum)
    }

    /// Precomputes the `x`-dependent weights so that `T_j` can be evaluated
    /// at many `w` as a product of one-dimensional sums.
    pub fn kernel_at(&self, j: &ResolutionIndex, x: &[f64]) -> Result<PointKernel> {
        self.check_index(j)?;
        let ranges = self.basis.active_ranges(j, x);
        let axes = j
            .levels()
            .iter()
            .zip(x)
            .zip(ranges)
            .enumerate()
            .map(|(l, ((&jl, &xl), (klo, khi)))| {
                let scale = (1u64 << jl) as f64;
                let mut weights: Vec<(i64, f64)> = (klo..=khi)
                    .map(|k| (k, scale * self.phi.eval(scale * xl - k as f64)))
                    .collect();
                weights.retain(|(_, v)| *v != 0.0);
                AxisKernel {
                    scale,
                    k_first: weights.first().map_or(0, |w| w.0),
                    weights: weights.into_iter().map(|w| w.1).collect(),
                    table: Arc::clone(&self.tables[l][jl as usize]),
                }
            })
            .collect();
        Ok(PointKernel { axes })
    }

    /// `max |T_j(w)|` over the tensor grid `grid^d`.
    pub fn sup_norm_tj(&self, j: &ResolutionIndex, x: &[f64], grid: &AxisGrid) -> Result<f64> {
        self.kernel_at(j, x)?.sup_norm(grid)
    }
}

fn build_levels(
    basis: &WaveletBasis,
    phi: &ScalingTable,
    comp: &NoiseComponent,
    max_level: u32,
    window: &CovariateWindow,
    settings: &QuadratureSettings,
    cache: Option<&TableCache>,
) -> Result<Vec<Arc<DeconvTable>>> {
    let radius = basis.radius() as f64;
    let build = |j: u32| -> Result<Arc<DeconvTable>> {
        let s = (1u64 << j) as f64;
        let lo = s * window.w.0 - (s * window.x.1 + radius) - 1.0;
        let hi = s * window.w.1 - (s * window.x.0 - radius) + 1.0;
        if *comp == NoiseComponent::Dirac {
            return Ok(Arc::new(noiseless_table(phi, j, lo, hi)));
        }
        let key = format!("{}|{}|{j}|{lo:e}|{hi:e}|{settings:?}", basis.name(), comp.key());
        if let Some(cache) = cache {
            match cache.load(&key) {
                Ok(Some(t)) => return Ok(Arc::new(t)),
                Ok(None) => {}
                Err(e) => log::warn!("ignoring unreadable cached table: {e}"),
            }
        }
        let table = tabulate_with_cache(basis, comp, j, lo, hi, settings, shared_spectra())?;
        if let Some(cache) = cache {
            if let Err(e) = cache.store(&key, &table) {
                log::warn!("could not write table cache: {e}");
            }
        }
        Ok(Arc::new(table))
    };
    // the finest level needs the longest spectrum, which the others reuse
    let top = build(max_level)?;
    let mut rest = (0..max_level).into_par_iter().map(build).collect::<Result<Vec<_>>>()?;
    rest.push(top);
    Ok(rest)
}

/// `T_j(.)` for a fixed estimation point `x`.
#[derive(Debug, Clone)]
pub struct PointKernel {
    axes: Vec<AxisKernel>,
}

#[derive(Debug, Clone)]
struct AxisKernel {
    scale: f64,
    k_first: i64,
    /// `2^{j_l} phi(2^{j_l} x_l - k)` for consecutive `k` from `k_first`.
    weights: Vec<f64>,
    table: Arc<DeconvTable>,
}

impl AxisKernel {
    fn eval(&self, w: f64) -> Result<f64> {
        let base = self.scale * w - self.k_first as f64;
        let mut sum = 0.0;
        for (i, c) in self.weights.iter().enumerate() {
            sum += c * self.table.eval(base - i as f64)?;
        }
        Ok(sum)
    }
}

impl PointKernel {
    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        assert_eq!(w.len(), self.axes.len());
        let mut prod = 1.0;
        for (a, &wl) in self.axes.iter().zip(w) {
            prod *= a.eval(wl)?;
        }
        Ok(prod)
    }

    /// Number of shift vectors with nonzero `phi_jk(x)`.
    pub fn summand_count(&self) -> usize {
        self.axes.iter().map(|a| a.weights.len()).product()
    }

    /// Max of `|T_j|` over `grid^d`; exact for the grid because `T_j` factorizes.
    pub fn sup_norm(&self, grid: &AxisGrid) -> Result<f64> {
        let mut prod = 1.0;
        for a in &self.axes {
            let mut best: f64 = 0.0;
            for i in 0..grid.len() {
                best = best.max(a.eval(grid.point(i))?.abs());
            }
            prod *= best;
        }
        Ok(prod)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{load_wavelet, WaveletFamily};

    fn coif5() -> WaveletBasis {
        load_wavelet(WaveletFamily::Coiflet, 5).unwrap()
    }

    fn context(noise: &str, max_level: u32) -> DeconvContext {
        DeconvContext::with_options(
            coif5(),
            noise.parse().unwrap(),
            max_level,
            CovariateWindow::default(),
            QuadratureSettings::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn factorized_matches_literal_sum() {
        let ctx = context("laplace:0.075,dirac", 2);
        let x = [0.3, 0.7];
        for j in [ResolutionIndex::new(vec![2, 1]), ResolutionIndex::new(vec![0, 2])] {
            let k = ctx.kernel_at(&j, &x).unwrap();
            for w in [[0.1, 0.2], [-0.4, 1.3], [0.77, 0.5]] {
                let a = ctx.eval_tj(&j, &x, &w).unwrap();
                let b = k.eval(&w).unwrap();
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dirac_reduces_to_projection_kernel() {
        let ctx = context("dirac", 3);
        let j = ResolutionIndex::scalar(3);
        let x = [0.4];
        let w = [0.45];
        let direct: f64 = ctx
            .basis()
            .active_indices(&j, &x)
            .iter()
            .map(|k| eval_phi_jk(ctx.scaling_table(), &j, k, &x) * eval_phi_jk(ctx.scaling_table(), &j, k, &w))
            .sum();
        let t = ctx.eval_tj(&j, &x, &w).unwrap();
        assert!((t - direct).abs() < 1e-5, "{t} vs {direct}");
    }

    #[test]
    fn two_dimensional_factorization() {
        let ctx = context("laplace:0.1", 1);
        let ctx2 = DeconvContext::with_options(
            coif5(),
            "laplace:0.1,laplace:0.1".parse().unwrap(),
            1,
            CovariateWindow::default(),
            QuadratureSettings::default(),
            None,
        )
        .unwrap();
        let j = ResolutionIndex::new(vec![1, 0]);
        let w = [0.3, -2.0];
        let a = ctx2.dj_phi(&j, &w).unwrap();
        let b = ctx.dj_phi(&ResolutionIndex::scalar(1), &w[..1]).unwrap()
            * ctx.dj_phi(&ResolutionIndex::scalar(0), &w[1..]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_window_is_range_error() {
        let ctx = context("laplace:0.1", 1);
        let k = ctx.kernel_at(&ResolutionIndex::scalar(1), &[0.5]).unwrap();
        assert!(k.eval(&[2.0]).is_ok());
        assert!(matches!(k.eval(&[40.0]), Err(Error::Range { .. })));
        let wide = ctx.widened(-1.0, 40.0, None).unwrap();
        assert!(wide.window().contains_w(-1.0, 40.0));
        let k = wide.kernel_at(&ResolutionIndex::scalar(1), &[0.5]).unwrap();
        assert!(k.eval(&[40.0]).is_ok());
    }

    #[test]
    fn refined_grid_never_lowers_sup() {
        let ctx = context("laplace:0.075", 2);
        let j = ResolutionIndex::scalar(2);
        let g = default_sup_grid(&j);
        let a = ctx.sup_norm_tj(&j, &[0.25], &g).unwrap();
        let b = ctx.sup_norm_tj(&j, &[0.25], &g.refined()).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn summand_count_bounded() {
        let ctx = context("laplace:0.075,laplace:0.075", 2);
        let bound = (2 * ctx.basis().radius() + 1).pow(2) as usize;
        for x in [[0.0, 0.0], [0.5, 0.25], [0.9, 1.0]] {
            let j = ResolutionIndex::new(vec![2, 1]);
            assert!(ctx.kernel_at(&j, &x).unwrap().summand_count() <= bound);
            assert!(ctx.basis().active_indices(&j, &x).len() <= bound);
        }
    }
}
