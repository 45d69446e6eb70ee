//! Log-space arithmetic for sums of positive terms.
//!
//! The transition kernel multiplies binomials by powers of `1/3`, `cos^2` and
//! `sin^2`; at `N ~ 100` the individual terms span several hundred orders of
//! magnitude, so every positive sum is accumulated as a log-sum-exp.

/// Table of `ln n!` for `0 <= n <= max`.
///
/// Each entry is kept as an unevaluated sum `hi + lo` (compensated
/// summation), and [`LnFactorials::ln_binom`] cancels the large parts
/// exactly. At `N = 400` the naive running sum of logs is off by ~1e-12,
/// which shows up directly as a relative error in every binomial.
#[derive(Debug, Clone)]
pub struct LnFactorials {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

/// Error-free `a + b = s + e`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl LnFactorials {
    pub fn new(max: usize) -> Self {
        let mut hi = Vec::with_capacity(max + 1);
        let mut lo = Vec::with_capacity(max + 1);
        let (mut h, mut l) = (0.0_f64, 0.0_f64);
        hi.push(0.0);
        lo.push(0.0);
        for n in 1..=max {
            let (s, e) = two_sum(h, (n as f64).ln());
            (h, l) = two_sum(s, l + e);
            hi.push(h);
            lo.push(l);
        }
        Self { hi, lo }
    }

    pub fn max(&self) -> usize {
        self.hi.len() - 1
    }

    #[inline]
    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.hi[n] + self.lo[n]
    }

    /// `ln C(n, k)`, or `-inf` when `k > n`.
    #[inline]
    pub fn ln_binom(&self, n: usize, k: usize) -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        let (s1, e1) = two_sum(self.hi[n], -self.hi[k]);
        let (s2, e2) = two_sum(s1, -self.hi[n - k]);
        s2 + (e1 + e2 + (self.lo[n] - self.lo[k] - self.lo[n - k]))
    }
}

/// `exponent * ln_base` with the convention `0^0 = 1`.
#[inline]
pub fn ln_pow(ln_base: f64, exponent: usize) -> f64 {
    if exponent == 0 {
        0.0
    } else {
        exponent as f64 * ln_base
    }
}

/// Streaming log-sum-exp accumulator.
///
/// Keeps a running maximum so the partial sum never overflows; terms equal to
/// `-inf` (exact zeros) are skipped.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, ln_term: f64) {
        if ln_term == f64::NEG_INFINITY {
            return;
        }
        if ln_term <= self.max {
            self.scaled += (ln_term - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - ln_term).exp() + 1.0;
            self.max = ln_term;
        }
    }

    /// Logarithm of the accumulated sum (`-inf` if nothing was added).
    pub fn ln_sum(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }

    pub fn sum(&self) -> f64 {
        self.ln_sum().exp()
    }
}

impl FromIterator<f64> for LogSumExp {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = LogSumExp::new();
        for t in iter {
            acc.add(t);
        }
        acc
    }
}

/// Log-sum-exp of a slice of log-terms.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    terms.iter().copied().collect::<LogSumExp>().ln_sum()
}
