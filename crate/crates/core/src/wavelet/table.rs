use super::WaveletBasis;

/// Default dyadic refinement level of the cascade tabulation.
///
/// Level 14 keeps the central-difference second derivative of a coiflet-5
/// scaling function within about 1e-6 of its limit, which is what the
/// deconvolved Laplace wavelet `phi - sigma^2 4^j phi''` needs at `j = 5`.
pub const DEFAULT_LEVEL: u32 = 14;

/// Values of `phi`, `phi'` and `phi''` on the dyadic grid `s_min + i 2^{-L}`.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    level: u32,
    step: f64,
    origin: f64,
    end: f64,
    values: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl ScalingTable {
    /// Runs the cascade algorithm to refinement level `level` (at least 6).
    pub fn new(basis: &WaveletBasis, level: u32) -> Self {
        assert!(level >= 6, "cascade refinement level must be at least 6");
        let values = cascade(&basis.filter, level);
        let step = (0.5f64).powi(level as i32);
        let (first, second) = central_differences(&values, step);
        ScalingTable {
            level,
            step,
            origin: basis.support.0 as f64,
            end: basis.support.1 as f64,
            values,
            first,
            second,
        }
    }

    pub fn with_default_level(basis: &WaveletBasis) -> Self {
        Self::new(basis, DEFAULT_LEVEL)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn support(&self) -> (f64, f64) {
        (self.origin, self.end)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid abscissa of node `i`.
    pub fn node(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_derivative(&self) -> &[f64] {
        &self.first
    }

    pub fn second_derivative(&self) -> &[f64] {
        &self.second
    }

    /// `max |phi|` over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.interp(&self.values, x)
    }

    pub fn eval_first(&self, x: f64) -> f64 {
        self.interp(&self.first, x)
    }

    pub fn eval_second(&self, x: f64) -> f64 {
        self.interp(&self.second, x)
    }

    fn interp(&self, data: &[f64], x: f64) -> f64 {
        if !(x >= self.origin && x <= self.end) {
            return 0.0;
        }
        let pos = (x - self.origin) / self.step;
        let i = pos.floor() as usize;
        if i + 1 >= data.len() {
            return data[data.len() - 1];
        }
        let frac = pos - i as f64;
        data[i] + frac * (data[i + 1] - data[i])
    }
}

/// Scaling-function values on `i 2^{-level}`, `i = 0 ..= (L-1) 2^level`,
/// for the causal filter of length `L`.
pub(crate) fn cascade(filter: &[f64], level: u32) -> Vec<f64> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut vals = integer_values(filter);
    for lev in 1..=level {
        let half = 1usize << (lev - 1);
        let n = (vals.len() - 1) * 2 + 1;
        let mut next = vec![0.0; n];
        for (i, v) in vals.iter().enumerate() {
            next[2 * i] = *v;
        }
        for m in (1..n).step_by(2) {
            let mut acc = 0.0;
            for (k, h) in filter.iter().enumerate() {
                let off = k * half;
                if off > m {
                    break;
                }
                if let Some(v) = vals.get(m - off) {
                    acc += h * v;
                }
            }
            next[m] = sqrt2 * acc;
        }
        vals = next;
    }
    vals
}

/// Values at the integers `0..L-1`: the eigenvector of the two-scale matrix
/// for eigenvalue one, normalized to unit sum. Endpoints vanish.
fn integer_values(filter: &[f64]) -> Vec<f64> {
    let len = filter.len();
    let sqrt2 = std::f64::consts::SQRT_2;
    // unknowns: phi(1), ..., phi(len - 2)
    let m = len - 2;
    if m == 0 {
        return vec![0.0; len];
    }
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, row) in a.iter_mut().enumerate() {
        let i = r + 1;
        for (c, cell) in row.iter_mut().take(m).enumerate() {
            let j = c + 1;
            let k = 2 * i as i64 - j as i64;
            if k >= 0 && (k as usize) < len {
                *cell = sqrt2 * filter[k as usize];
            }
            if i == j {
                *cell -= 1.0;
            }
        }
    }
    // the system is singular; replace the last equation by the normalization
    for c in 0..m {
        a[m - 1][c] = 1.0;
    }
    a[m - 1][m] = 1.0;
    let sol = solve_dense(a);
    let mut out = vec![0.0; len];
    out[1..len - 1].copy_from_slice(&sol);
    out
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for r in col + 1..m {
            let f = a[r][col] / p;
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let mut s = a[r][m];
        for c in r + 1..m {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x
}

fn central_differences(v: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d1[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        d2[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
    }
    (d1, d2)
}
