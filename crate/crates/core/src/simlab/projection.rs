use rayon::prelude::*;

use crate::wavelet::ScalingTable;

/// `<f, phi_jk> = 2^{-j/2} ∫ f((v + k) / 2^j) phi(v) dv` for `f` vanishing
/// outside `support`.
///
/// Midpoint rule on the cells of the cascade grid, clipped to `support`, so
/// that `f` is never evaluated at an endpoint where it may be singular.
pub fn projection_coefficient<F>(phi: &ScalingTable, f: &F, support: (f64, f64), j: u32, k: i64) -> f64
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let scale = f64::from(1u32 << j);
    let (v_lo, v_hi) = (support.0 * scale - k as f64, support.1 * scale - k as f64);
    let values = phi.values();
    let h = phi.step();
    let mut sum = 0.0;
    for i in 0..values.len().saturating_sub(1) {
        let (a, b) = (phi.node(i), phi.node(i + 1));
        let (lo, hi) = (a.max(v_lo), b.min(v_hi));
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let t = (mid - a) / h;
        let phi_mid = values[i] * (1.0 - t) + values[i + 1] * t;
        if phi_mid != 0.0 {
            sum += (hi - lo) * phi_mid * f((mid + k as f64) / scale);
        }
    }
    sum / scale.sqrt()
}

/// `K_j f(x) = sum_k <f, phi_jk> phi_jk(x)` in one dimension.
pub fn true_projection<F>(phi: &ScalingTable, f: &F, support: (f64, f64), j: u32, x: f64) -> f64
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    let scale = f64::from(1u32 << j);
    let (smin, smax) = phi.support();
    let u = scale * x;
    // phi(u - k) != 0 and the shifted support meets `support`
    let k_lo = ((u - smax).floor() as i64 + 1).max((scale * support.0 - smax).floor() as i64);
    let k_hi = ((u - smin).ceil() as i64 - 1).min((scale * support.1 - smin).ceil() as i64);
    if k_hi < k_lo {
        return 0.0;
    }
    (k_lo..=k_hi)
        .into_par_iter()
        .map(|k| {
            let basis = phi.eval(u - k as f64);
            if basis == 0.0 {
                0.0
            } else {
                projection_coefficient(phi, f, support, j, k) * basis * scale.sqrt()
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Coefficients of `K_j f` over every `k` whose basis function meets the
/// support of `f`, evaluable anywhere.
#[derive(Debug, Clone)]
pub struct Projection<'a> {
    phi: &'a ScalingTable,
    j: u32,
    k_first: i64,
    coefficients: Vec<f64>,
}

impl<'a> Projection<'a> {
    pub fn new<F>(phi: &'a ScalingTable, f: &F, support: (f64, f64), j: u32) -> Self
    where
        F: Fn(f64) -> f64 + Sync + ?Sized,
    {
        let scale = f64::from(1u32 << j);
        let (smin, smax) = phi.support();
        let k_first = (scale * support.0 - smax).floor() as i64;
        let k_last = (scale * support.1 - smin).ceil() as i64;
        let coefficients = (k_first..=k_last)
            .into_par_iter()
            .map(|k| projection_coefficient(phi, f, support, j, k))
            .collect();
        Projection { phi, j, k_first, coefficients }
    }

    pub fn level(&self) -> u32 {
        self.j
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Interval outside which the projection vanishes.
    pub fn support(&self) -> (f64, f64) {
        let scale = f64::from(1u32 << self.j);
        let (smin, smax) = self.phi.support();
        let k_last = self.k_first + self.coefficients.len() as i64 - 1;
        ((self.k_first as f64 + smin) / scale, (k_last as f64 + smax) / scale)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let scale = f64::from(1u32 << self.j);
        let (smin, smax) = self.phi.support();
        let u = scale * x;
        let lo = ((u - smax).floor() as i64 + 1).max(self.k_first);
        let hi = ((u - smin).ceil() as i64 - 1).min(self.k_first + self.coefficients.len() as i64 - 1);
        let mut sum = 0.0;
        for k in lo..=hi {
            sum += self.coefficients[(k - self.k_first) as usize] * self.phi.eval(u - k as f64);
        }
        sum * scale.sqrt()
    }
}
