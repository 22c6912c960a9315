//! Compactly supported father wavelets.
//!
//! A [`WaveletBasis`] carries the two-scale filter of a Daubechies or
//! coiflet scaling function together with its support and smoothness
//! metadata. The scaling function itself is realized numerically by the
//! cascade algorithm in [`ScalingTable`], and its Fourier transform by the
//! truncated infinite product of the filter transfer function.

mod catalog;
mod table;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use table::{ScalingTable, DEFAULT_LEVEL};

/// Number of transfer-function factors in the Fourier product.
pub const DEFAULT_PRODUCT_TERMS: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Coiflet,
    Daubechies,
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveletFamily::Coiflet => f.write_str("coif"),
            WaveletFamily::Daubechies => f.write_str("db"),
        }
    }
}

/// Catalog entry: filter, numerically estimated Fourier decay exponent.
struct Entry {
    filter: &'static [f64],
    decay: f64,
}

fn lookup(family: WaveletFamily, order: u32) -> Option<Entry> {
    use catalog::*;
    let (filter, decay): (&'static [f64], f64) = match (family, order) {
        (WaveletFamily::Coiflet, 1) => (&COIF1, 1.37),
        (WaveletFamily::Coiflet, 2) => (&COIF2, 2.02),
        (WaveletFamily::Coiflet, 3) => (&COIF3, 2.59),
        (WaveletFamily::Coiflet, 4) => (&COIF4, 3.14),
        (WaveletFamily::Coiflet, 5) => (&COIF5, 3.66),
        (WaveletFamily::Daubechies, 2) => (&DB2, 1.34),
        (WaveletFamily::Daubechies, 3) => (&DB3, 1.67),
        (WaveletFamily::Daubechies, 4) => (&DB4, 1.95),
        (WaveletFamily::Daubechies, 5) => (&DB5, 2.23),
        (WaveletFamily::Daubechies, 6) => (&DB6, 2.49),
        (WaveletFamily::Daubechies, 7) => (&DB7, 2.75),
        (WaveletFamily::Daubechies, 8) => (&DB8, 3.00),
        (WaveletFamily::Daubechies, 9) => (&DB9, 3.25),
        (WaveletFamily::Daubechies, 10) => (&DB10, 3.49),
        _ => return None,
    };
    Some(Entry { filter, decay })
}

/// A compactly supported father wavelet and its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub family: WaveletFamily,
    pub order: u32,
    /// Low-pass filter in the causal convention (`phi_0` on `[0, L-1]`).
    pub filter: Vec<f64>,
    /// Integer support `[s_min, s_max]` of the shifted scaling function.
    pub support: (i64, i64),
    /// Largest integer `r` with the scaling function of class `C^r`
    /// (lower bound derived from the Fourier decay).
    pub regularity: u32,
    /// Polynomial degree reproduced by the projection kernel.
    pub vanishing_moments: u32,
    /// Exponent `a` in `|F(phi)(t)| <= C (1 + |t|)^{-a}`.
    pub fourier_decay: f64,
}

impl WaveletBasis {
    /// Support radius `A = max(|s_min|, |s_max|)`.
    pub fn radius(&self) -> i64 {
        self.support.0.abs().max(self.support.1.abs())
    }

    /// Integer shift between the causal and the stored scaling function:
    /// `phi(x) = phi_0(x + shift)`.
    pub fn shift(&self) -> i64 {
        -self.support.0
    }

    /// First moment of the causal scaling function, `int x phi_0(x) dx`.
    pub fn causal_first_moment(&self) -> f64 {
        causal_first_moment(&self.filter)
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.family, self.order)
    }

    /// Checks that `F(phi)(t) (1 + |t|)^nu` is integrable, which is what
    /// the deconvolution operator needs to be well defined.
    pub fn check_pairing(&self, nu: f64) -> Result<()> {
        if self.fourier_decay > nu + 1.0 {
            Ok(())
        } else {
            Err(Error::Pairing(format!(
                "{} has Fourier decay exponent {:.2}, but noise of ill-posedness {} needs more than {}",
                self.name(),
                self.fourier_decay,
                nu,
                nu + 1.0
            )))
        }
    }

    /// Filter transfer function `m0(s) = 2^{-1/2} sum_n h_n e^{-i n s}`.
    pub fn transfer(&self, s: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, -s);
        let mut acc = Complex64::new(0.0, 0.0);
        for &h in self.filter.iter().rev() {
            acc = acc * z + h;
        }
        acc * std::f64::consts::FRAC_1_SQRT_2
    }

    /// `F(phi)(t)` by the product of `terms` transfer-function factors.
    ///
    /// The remaining factor `F(phi_0)(t / 2^terms)` is replaced by its
    /// first-order phase `exp(-i mu t / 2^terms)`, which is exact at `t = 0`
    /// and leaves an `O((t / 2^terms)^2)` error.
    pub fn fourier_phi_with(&self, t: f64, terms: u32) -> Complex64 {
        let mu = self.causal_first_moment();
        let mut scaled = t;
        let mut prod = Complex64::new(1.0, 0.0);
        for _ in 0..terms {
            scaled *= 0.5;
            prod *= self.transfer(scaled);
        }
        prod *= Complex64::from_polar(1.0, -mu * scaled);
        // phi(x) = phi_0(x + shift)  =>  F(phi)(t) = e^{i t shift} F(phi_0)(t)
        prod * Complex64::from_polar(1.0, t * self.shift() as f64)
    }

    pub fn fourier_phi(&self, t: f64) -> Complex64 {
        self.fourier_phi_with(t, DEFAULT_PRODUCT_TERMS)
    }

    /// Per-axis ranges of integer shifts `k` with `|2^j x - k| <= A`.
    pub fn active_ranges(&self, j: &ResolutionIndex, x: &[f64]) -> Vec<(i64, i64)> {
        active_ranges_for_radius(self.radius(), j, x)
    }

    /// All shift vectors `k` for which `phi_jk(x)` may be nonzero.
    pub fn active_indices(&self, j: &ResolutionIndex, x: &[f64]) -> Vec<Vec<i64>> {
        cartesian(&self.active_ranges(j, x))
    }
}

fn causal_first_moment(filter: &[f64]) -> f64 {
    filter
        .iter()
        .enumerate()
        .map(|(n, h)| n as f64 * h)
        .sum::<f64>()
        * std::f64::consts::FRAC_1_SQRT_2
}

/// Per-axis integer intervals `{k : |2^{j_l} x_l - k| <= radius}`.
pub fn active_ranges_for_radius(radius: i64, j: &ResolutionIndex, x: &[f64]) -> Vec<(i64, i64)> {
    assert_eq!(j.dim(), x.len(), "resolution index and point dimensions differ");
    j.levels()
        .iter()
        .zip(x)
        .map(|(&jl, &xl)| {
            let c = xl * (1u64 << jl) as f64;
            ((c - radius as f64).ceil() as i64, (c + radius as f64).floor() as i64)
        })
        .collect()
}

/// Cartesian product of inclusive integer ranges.
pub fn cartesian(ranges: &[(i64, i64)]) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = vec![Vec::with_capacity(ranges.len())];
    for &(lo, hi) in ranges {
        let mut next = Vec::with_capacity(out.len() * (hi - lo + 1).max(0) as usize);
        for prefix in &out {
            for k in lo..=hi {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Loads a wavelet from the embedded catalog (coiflets 1-5, Daubechies 2-10).
pub fn load_wavelet(family: WaveletFamily, order: u32) -> Result<WaveletBasis> {
    let entry = lookup(family, order).ok_or_else(|| {
        Error::Config(format!("unknown order {order} for wavelet family {family}"))
    })?;
    let len = entry.filter.len() as i64;
    let shift = causal_first_moment(entry.filter).round() as i64;
    let vanishing_moments = match family {
        WaveletFamily::Coiflet => 2 * order - 1,
        WaveletFamily::Daubechies => order - 1,
    };
    Ok(WaveletBasis {
        family,
        order,
        filter: entry.filter.to_vec(),
        support: (-shift, len - 1 - shift),
        regularity: (entry.decay - 1.0).floor().max(0.0) as u32,
        vanishing_moments,
        fourier_decay: entry.decay,
    })
}

impl FromStr for WaveletBasis {
    type Err = Error;

    /// Parses `coif5`, `coiflet-5`, `db4`, `daubechies-4`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let split = lower
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| Error::Config(format!("wavelet spec `{s}` has no order")))?;
        let (name, order) = lower.split_at(split);
        let family = match name.trim_end_matches(['-', ':', '_']) {
            "coif" | "coiflet" => WaveletFamily::Coiflet,
            "db" | "daubechies" => WaveletFamily::Daubechies,
            other => return Err(Error::Config(format!("unknown wavelet family `{other}`"))),
        };
        let order: u32 = order
            .parse()
            .map_err(|_| Error::Config(format!("bad wavelet order in `{s}`")))?;
        load_wavelet(family, order)
    }
}

/// Multi-dimensional resolution level `j = (j_1, ..., j_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResolutionIndex(Vec<u32>);

impl ResolutionIndex {
    pub fn new(levels: Vec<u32>) -> Self {
        assert!(!levels.is_empty(), "resolution index needs at least one axis");
        ResolutionIndex(levels)
    }

    pub fn zero(dim: usize) -> Self {
        ResolutionIndex(vec![0; dim])
    }

    pub fn scalar(j: u32) -> Self {
        ResolutionIndex(vec![j])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn levels(&self) -> &[u32] {
        &self.0
    }

    /// `S_j`, the total level.
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max_level(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Componentwise minimum `j ∧ j'`.
    pub fn meet(&self, other: &ResolutionIndex) -> ResolutionIndex {
        assert_eq!(self.dim(), other.dim());
        ResolutionIndex(self.0.iter().zip(&other.0).map(|(a, b)| *a.min(b)).collect())
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &ResolutionIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Ordering used for tie-breaking: total level first, then lexicographic.
    pub fn coarse_cmp(&self, other: &ResolutionIndex) -> std::cmp::Ordering {
        self.total().cmp(&other.total()).then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for ResolutionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Tensor-product basis function `phi_jk(x) = prod_l 2^{j_l/2} phi(2^{j_l} x_l - k_l)`.
pub fn eval_phi_jk(table: &ScalingTable, j: &ResolutionIndex, k: &[i64], x: &[f64]) -> f64 {
    assert_eq!(j.dim(), k.len());
    assert_eq!(j.dim(), x.len());
    let mut prod = 1.0;
    for ((&jl, &kl), &xl) in j.levels().iter().zip(k).zip(x) {
        let scale = (1u64 << jl) as f64;
        let v = table.eval(scale * xl - kl as f64);
        if v == 0.0 {
            return 0.0;
        }
        prod *= scale.sqrt() * v;
    }
    prod
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn catalog_filters_are_normalized() {
        for (family, orders) in [
            (WaveletFamily::Coiflet, 1..=5),
            (WaveletFamily::Daubechies, 2..=10),
        ] {
            for order in orders {
                let b = load_wavelet(family, order).unwrap();
                let s: f64 = b.filter.iter().sum();
                let s2: f64 = b.filter.iter().map(|h| h * h).sum();
                assert_abs_diff_eq!(s, std::f64::consts::SQRT_2, epsilon = 1e-12);
                assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-12);
                assert_eq!(b.support.1 - b.support.0, b.filter.len() as i64 - 1);
            }
        }
    }

    #[test]
    fn coiflet_five_shape() {
        let b = load_wavelet(WaveletFamily::Coiflet, 5).unwrap();
        assert_eq!(b.filter.len(), 30);
        assert_eq!(b.support, (-10, 19));
        assert_eq!(b.radius(), 19);
        assert_eq!(b.vanishing_moments, 9);
        assert_eq!(b.regularity, 2);
        // centred coiflet: first moment of the shifted function vanishes
        assert_abs_diff_eq!(b.causal_first_moment() - b.shift() as f64, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn daubechies_four_shape() {
        let b = load_wavelet(WaveletFamily::Daubechies, 4).unwrap();
        assert_eq!(b.filter.len(), 8);
        let s2: f64 = b.filter.iter().map(|h| h * h).sum();
        assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unknown_order_is_config_error() {
        let err = load_wavelet(WaveletFamily::Coiflet, 99).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("unknown order"));
        assert!(load_wavelet(WaveletFamily::Daubechies, 1).is_err());
    }

    #[test]
    fn parse_specs() {
        assert_eq!("coif5".parse::<WaveletBasis>().unwrap().order, 5);
        assert_eq!("coiflet-3".parse::<WaveletBasis>().unwrap().order, 3);
        assert_eq!(
            "db4".parse::<WaveletBasis>().unwrap().family,
            WaveletFamily::Daubechies
        );
        assert!("haar".parse::<WaveletBasis>().is_err());
        assert!("sym4".parse::<WaveletBasis>().is_err());
    }

    #[test]
    fn pairing_check() {
        let coif5 = load_wavelet(WaveletFamily::Coiflet, 5).unwrap();
        assert!(coif5.check_pairing(2.0).is_ok());
        assert!(coif5.check_pairing(0.0).is_ok());
        let db3 = load_wavelet(WaveletFamily::Daubechies, 3).unwrap();
        assert!(matches!(db3.check_pairing(2.0), Err(Error::Pairing(_))));
    }

    #[test]
    fn fourier_phi_basic_identities() {
        let b = load_wavelet(WaveletFamily::Coiflet, 5).unwrap();
        let f0 = b.fourier_phi(0.0);
        assert_abs_diff_eq!(f0.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f0.im, 0.0, epsilon = 1e-15);
        for &t in &[0.3, 1.7, 5.0, 23.0, 140.0] {
            let a = b.fourier_phi(t);
            let c = b.fourier_phi(-t).conj();
            assert_abs_diff_eq!(a.re, c.re, epsilon = 1e-14);
            assert_abs_diff_eq!(a.im, c.im, epsilon = 1e-14);
        }
        // integer translates form a partition of unity: F(phi)(2 pi k) = 0
        for k in 1..4 {
            let v = b.fourier_phi(2.0 * std::f64::consts::PI * k as f64);
            assert!(v.norm() < 1e-7, "F(phi)(2pi {k}) = {v}");
        }
    }

    #[test]
    fn fourier_decay_is_bounded() {
        // |F(phi)(t)| (1 + |t|)^r with r = 2 does not grow along [0, 200]
        let b = load_wavelet(WaveletFamily::Coiflet, 5).unwrap();
        let sup = |lo: f64, hi: f64| {
            let n = ((hi - lo) * 100.0) as usize;
            (0..=n)
                .map(|i| lo + i as f64 * 0.01)
                .map(|t| b.fourier_phi(t).norm() * (1.0 + t).powi(2))
                .fold(0.0f64, f64::max)
        };
        let near = sup(0.0, 100.0);
        let far = sup(100.0, 200.0);
        assert!(near.is_finite() && near < 100.0, "sup on [0,100] = {near}");
        assert!(far <= near, "weighted transform grows: {far} > {near}");
    }

    #[test]
    fn active_indices_interval_arithmetic() {
        let j = ResolutionIndex::scalar(0);
        let r = active_ranges_for_radius(1, &j, &[0.0]);
        assert_eq!(r, vec![(-1, 1)]);
        let r = active_ranges_for_radius(1, &j, &[0.5]);
        assert_eq!(r, vec![(0, 1)]);

        let b = load_wavelet(WaveletFamily::Coiflet, 5).unwrap();
        let j2 = ResolutionIndex::new(vec![1, 2]);
        let x = [0.3, 0.71];
        let ks = b.active_indices(&j2, &x);
        let per_axis = b.active_ranges(&j2, &x);
        let expected: usize = per_axis.iter().map(|(lo, hi)| (hi - lo + 1) as usize).product();
        assert_eq!(ks.len(), expected);
        assert!(ks.len() <= (2 * b.radius() as usize + 1).pow(2));
    }

    #[test]
    fn meet_is_componentwise_min() {
        let a = ResolutionIndex::new(vec![3, 1, 4]);
        let b = ResolutionIndex::new(vec![2, 5, 4]);
        assert_eq!(a.meet(&b), ResolutionIndex::new(vec![2, 1, 4]));
        assert_eq!(a.total(), 8);
        assert!(a.meet(&b).le(&a) && a.meet(&b).le(&b));
    }
}
