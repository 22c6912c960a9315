use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::NoiseComponent;
use crate::error::{Error, Result};
use crate::wavelet::{ScalingTable, WaveletBasis};

/// Grid step of every deconvolution table, `2^-10`.
pub const TABLE_STEP: f64 = 1.0 / 1024.0;
const TABLE_STEP_LOG2: u32 = 10;

/// Controls the Fourier quadrature behind [`tabulate_dj`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// The frequency cutoff is `pi 2^m` with `m` in `[min_cutoff_log2, max_cutoff_log2]`.
    pub min_cutoff_log2: u32,
    pub max_cutoff_log2: u32,
    /// Target for `sup_{[T/2, T]} |F(phi)(t) / psi(2^j t)| * T`.
    pub tail_tolerance: f64,
    /// Extra room (in argument units) between the table and its periodic images.
    pub period_guard: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            min_cutoff_log2: 10,
            max_cutoff_log2: 13,
            tail_tolerance: 1e-8,
            period_guard: 16.0,
        }
    }
}

/// `d_j` tabulated on `origin + i * step`, valid for arguments in `[lo, hi]`.
///
/// Outside the stored nodes but inside `[lo, hi]` the function is zero
/// (used for compactly supported `d_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvTable {
    pub(crate) scale: u32,
    pub(crate) lo: f64,
    pub(crate) hi: f64,
    pub(crate) origin: f64,
    pub(crate) step: f64,
    pub(crate) values: Vec<f64>,
    /// Frequency truncation `T_int` actually used.
    pub(crate) cutoff: f64,
}

impl DeconvTable {
    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Argument interval the table is valid on.
    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn covers(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    /// Linear interpolation; arguments outside `[lo, hi]` are an error.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !self.covers(u) {
            return Err(Error::Range { value: u, lo: self.lo, hi: self.hi, scale: self.scale });
        }
        let pos = (u - self.origin) / self.step;
        let last = self.values.len() - 1;
        if !(pos >= 0.0 && pos <= last as f64) {
            return Ok(0.0);
        }
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        let frac = pos - i as f64;
        Ok(self.values[i] + frac * (self.values[i + 1] - self.values[i]))
    }
}

/// `conj(F(phi)(q dt))` for `q = 0 .. P 2^{m-1}`, `dt = 2 pi / P`.
#[derive(Debug, Default)]
pub(crate) struct SpectrumCache {
    entries: Mutex<HashMap<(String, u64, u32), Arc<Vec<Complex64>>>>,
}

/// Process-wide spectra, shared by every context built on the same basis.
pub(crate) fn shared_spectra() -> &'static SpectrumCache {
    static SHARED: OnceLock<SpectrumCache> = OnceLock::new();
    SHARED.get_or_init(SpectrumCache::default)
}

impl SpectrumCache {
    /// Returns samples at step `2 pi / period`, reusing any finer grid
    /// already computed (a finer grid contains the coarser one).
    pub(crate) fn get(&self, basis: &WaveletBasis, period: u64, cutoff_log2: u32) -> Arc<Vec<Complex64>> {
        let count = (period as usize) << (cutoff_log2 - 1);
        let name = basis.name();
        {
            let map = self.entries.lock().unwrap();
            let finer = map
                .iter()
                .filter(|((b, p, m), _)| {
                    *b == name && *p >= period && p % period == 0 && *m >= cutoff_log2
                })
                .min_by_key(|((_, p, _), _)| *p);
            if let Some(((_, p, _), samples)) = finer {
                let stride = (*p / period) as usize;
                if stride == 1 && samples.len() == count {
                    return Arc::clone(samples);
                }
                let sub: Vec<Complex64> = (0..count).map(|q| samples[q * stride]).collect();
                return Arc::new(sub);
            }
        }
        let dt = 2.0 * std::f64::consts::PI / period as f64;
        let mut samples = vec![Complex64::new(0.0, 0.0); count];
        samples
            .par_chunks_mut(4096)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (i, v) in chunk.iter_mut().enumerate() {
                    let q = c * 4096 + i;
                    *v = basis.fourier_phi(q as f64 * dt).conj();
                }
            });
        let samples = Arc::new(samples);
        self.entries
            .lock()
            .unwrap()
            .insert((name, period, cutoff_log2), Arc::clone(&samples));
        samples
    }
}

/// Smallest power-of-two period keeping the periodic images of `d_j` (whose
/// bulk sits on the wavelet support) away from `[lo, hi]`.
pub(crate) fn required_period(basis: &WaveletBasis, lo: f64, hi: f64, guard: f64) -> u64 {
    let (smin, smax) = (basis.support.0 as f64, basis.support.1 as f64);
    let need = (hi - smin).max(smax - lo).max(hi - lo) + guard;
    (need.ceil() as u64).next_power_of_two()
}

/// Aligns an argument interval to the table grid, widened by one step.
pub(crate) fn aligned_range(lo: f64, hi: f64) -> (f64, f64) {
    (
        ((lo / TABLE_STEP).floor() - 1.0) * TABLE_STEP,
        ((hi / TABLE_STEP).ceil() + 1.0) * TABLE_STEP,
    )
}

/// Tabulates `d_j` on the argument interval `[lo, hi]` by trapezoidal
/// Fourier quadrature, evaluated for all nodes at once with an FFT.
///
/// Fails with a pairing error when the noise is too ill-posed for the
/// wavelet's smoothness.
pub fn tabulate_dj(
    basis: &WaveletBasis,
    noise: &NoiseComponent,
    scale: u32,
    lo: f64,
    hi: f64,
    settings: &QuadratureSettings,
) -> Result<DeconvTable> {
    tabulate_with_cache(basis, noise, scale, lo, hi, settings, shared_spectra())
}

pub(crate) fn tabulate_with_cache(
    basis: &WaveletBasis,
    noise: &NoiseComponent,
    scale: u32,
    lo: f64,
    hi: f64,
    settings: &QuadratureSettings,
    cache: &SpectrumCache,
) -> Result<DeconvTable> {
    basis.check_pairing(noise.ill_posedness())?;
    if !(hi > lo) {
        return Err(Error::Config(format!("empty table range [{lo}, {hi}]")));
    }
    let (lo, hi) = aligned_range(lo, hi);
    let period = required_period(basis, lo, hi, settings.period_guard);
    let spectrum = cache.get(basis, period, settings.max_cutoff_log2);
    let dt = 2.0 * std::f64::consts::PI / period as f64;
    let dilation = (1u64 << scale) as f64;

    let integrand = |q: usize| -> Complex64 {
        spectrum[q] * noise.inverse_ft(dilation * q as f64 * dt)
    };

    // frequency cutoff: first pi 2^m whose upper octave is negligible
    let mut used = spectrum.len();
    for m in settings.min_cutoff_log2..=settings.max_cutoff_log2 {
        let q_end = (period as usize) << (m - 1);
        let tail = (q_end / 2..q_end)
            .map(|q| integrand(q).norm())
            .fold(0.0, f64::max);
        if tail * (q_end as f64 * dt) < settings.tail_tolerance {
            used = q_end;
            break;
        }
    }

    // fold onto N = period / step bins (aliasing in frequency), then FFT
    let bins = (period as usize) << TABLE_STEP_LOG2;
    let mut folded = vec![Complex64::new(0.0, 0.0); bins];
    for q in 0..used {
        let t = q as f64 * dt;
        let w = if q == 0 { 0.5 } else { 1.0 };
        folded[q % bins] += integrand(q) * Complex64::from_polar(w, -t * lo);
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(bins).process(&mut folded);

    let count = ((hi - lo) / TABLE_STEP).round() as usize + 1;
    let norm = dt / std::f64::consts::PI;
    let values = folded[..count].iter().map(|c| c.re * norm).collect();
    Ok(DeconvTable {
        scale,
        lo,
        hi: lo + (count - 1) as f64 * TABLE_STEP,
        origin: lo,
        step: TABLE_STEP,
        values,
        cutoff: used as f64 * dt,
    })
}

/// `d_j = phi` exactly when the axis is noiseless, so the cascade table is
/// reused instead of running the quadrature.
pub(crate) fn noiseless_table(phi: &ScalingTable, scale: u32, lo: f64, hi: f64) -> DeconvTable {
    let (lo, hi) = aligned_range(lo, hi);
    DeconvTable {
        scale,
        lo,
        hi,
        origin: phi.support().0,
        step: phi.step(),
        values: phi.values().to_vec(),
        cutoff: f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{load_wavelet, WaveletFamily};

    fn coif5() -> WaveletBasis {
        load_wavelet(WaveletFamily::Coiflet, 5).unwrap()
    }

    #[test]
    fn dirac_reproduces_phi() {
        let b = coif5();
        let phi = ScalingTable::with_default_level(&b);
        for j in [0u32, 3] {
            let t = tabulate_dj(&b, &NoiseComponent::Dirac, j, -14.0, 22.0, &Default::default()).unwrap();
            let worst = (0..t.len())
                .map(|i| (t.values()[i] - phi.eval(t.node(i))).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "j={j}: {worst}");
        }
    }

    #[test]
    fn laplace_matches_second_derivative_form() {
        let b = coif5();
        let phi = ScalingTable::with_default_level(&b);
        let sigma: f64 = 0.1;
        let noise = NoiseComponent::laplace(sigma).unwrap();
        let j = 3;
        let t = tabulate_dj(&b, &noise, j, -12.0, 21.0, &Default::default()).unwrap();
        let c = sigma * sigma * 4f64.powi(j as i32);
        let worst = (0..t.len())
            .map(|i| {
                let u = t.node(i);
                (t.values()[i] - (phi.eval(u) - c * phi.eval_second(u))).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn gamma_unit_shape_matches_first_derivative_form() {
        // (1 + i theta s)^{-1}  =>  d_j = phi - theta 2^j phi'
        let b = coif5();
        let phi = ScalingTable::with_default_level(&b);
        let theta = 0.05;
        let j = 2;
        let noise = NoiseComponent::gamma(1.0, theta).unwrap();
        // shape 1 needs decay > 2, which coif5 has
        let t = tabulate_dj(&b, &noise, j, -12.0, 21.0, &Default::default()).unwrap();
        let c = theta * 4.0;
        let worst = (0..t.len())
            .map(|i| {
                let u = t.node(i);
                (t.values()[i] - (phi.eval(u) - c * phi.eval_first(u))).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn step_halving_is_stable_at_origin() {
        let b = coif5();
        let noise = NoiseComponent::laplace(0.075).unwrap();
        let coarse = QuadratureSettings::default();
        let fine = QuadratureSettings { period_guard: coarse.period_guard + 64.0, ..coarse };
        let a = tabulate_dj(&b, &noise, 2, -12.0, 21.0, &coarse).unwrap();
        let c = tabulate_dj(&b, &noise, 2, -12.0, 21.0, &fine).unwrap();
        assert!(required_period(&b, -12.0, 21.0, fine.period_guard) > required_period(&b, -12.0, 21.0, coarse.period_guard));
        assert!((a.eval(0.0).unwrap() - c.eval(0.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn out_of_range_is_error() {
        let b = coif5();
        let t = tabulate_dj(&b, &NoiseComponent::Dirac, 0, -11.0, 20.0, &Default::default()).unwrap();
        assert!(t.eval(0.5).is_ok());
        assert!(matches!(t.eval(40.0), Err(Error::Range { .. })));
        assert!(matches!(t.eval(-40.0), Err(Error::Range { .. })));
    }

    #[test]
    fn pairing_error_for_rough_wavelet() {
        let b = load_wavelet(WaveletFamily::Daubechies, 4).unwrap();
        let noise = NoiseComponent::laplace(0.1).unwrap();
        let err = tabulate_dj(&b, &noise, 0, -5.0, 5.0, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::Pairing(_)));
    }
}
