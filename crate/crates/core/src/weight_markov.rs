//! Exact operator-weight master equation for the random circuit with a
//! global `ZZ` layer.
//!
//! One time step is a layer of independent Haar-random single-qubit unitaries
//! followed by `exp(-i g'/2 sum_{i<j} Z_i Z_j)` with `g' = g / N^a`. After Haar
//! averaging, the squared Pauli coefficients of a Heisenberg operator evolve
//! under a stochastic kernel `W(w, w', v)` that depends only on the two string
//! weights and their overlap. Starting from a single-site operator on site 1,
//! the distribution over `(w, w1)` (total weight, weight on site 1) closes
//! under the `2N x 2N` matrix [`TransitionMatrix`].
//!
//! Index layout of a [`WeightDistribution`] and of the rows/columns of the
//! transition matrix: block `w1 = 0` holds `w = 0..N-1` at indices `0..N`,
//! block `w1 = 1` holds `w = 1..N` at indices `N..2N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::logspace::{ln_pow, LnFactorials, LogSumExp};

/// Column-sum tolerance enforced when building a transition matrix.
pub const STOCHASTICITY_TOL: f64 = 1e-9;

const LN3: f64 = 1.098_612_288_668_109_8;

/// Parameters of the random circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub n_sites: usize,
    /// Dimensionless coupling `g`.
    pub coupling: f64,
    /// Exponent `a` in the per-pair angle `g' = g / N^a`.
    pub coupling_exponent: f64,
}

impl CircuitParams {
    /// Circuit with the default `1/sqrt(N)` normalization.
    pub fn new(n_sites: usize, coupling: f64) -> Result<Self> {
        Self::with_exponent(n_sites, coupling, 0.5)
    }

    pub fn with_exponent(n_sites: usize, coupling: f64, coupling_exponent: f64) -> Result<Self> {
        if n_sites < 2 {
            return invalid(format!("n_sites must be >= 2, got {n_sites}"));
        }
        if !coupling.is_finite() {
            return invalid("coupling must be finite");
        }
        if !(coupling_exponent.is_finite() && coupling_exponent >= 0.0) {
            return invalid(format!(
                "coupling_exponent must be finite and >= 0, got {coupling_exponent}"
            ));
        }
        Ok(Self {
            n_sites,
            coupling,
            coupling_exponent,
        })
    }

    /// Per-pair rotation angle `g' = g / N^a`.
    pub fn pair_angle(&self) -> f64 {
        self.coupling / (self.n_sites as f64).powf(self.coupling_exponent)
    }

    /// Coupling that plays the role of `g` in the small-angle expansion,
    /// `g' sqrt(N)`. Equals `g` for the default normalization.
    pub fn effective_coupling(&self) -> f64 {
        self.pair_angle() * (self.n_sites as f64).sqrt()
    }

    /// Number of `(w, w1)` states, `2N`.
    pub fn dim(&self) -> usize {
        2 * self.n_sites
    }
}

/// Flat index of `(w, w1)`; `None` outside the domain `w in [w1, N-1+w1]`.
#[inline]
pub fn state_index(n_sites: usize, w: usize, w1: usize) -> Option<usize> {
    match w1 {
        0 if w < n_sites => Some(w),
        1 if (1..=n_sites).contains(&w) => Some(n_sites + w - 1),
        _ => None,
    }
}

/// Inverse of [`state_index`].
#[inline]
pub fn state_of_index(n_sites: usize, index: usize) -> (usize, usize) {
    if index < n_sites {
        (index, 0)
    } else {
        (index - n_sites + 1, 1)
    }
}

fn check_wv(w: usize, w_prime: usize, v: usize, n: usize) -> Result<()> {
    if w > n || w_prime > n {
        return invalid(format!("weights ({w}, {w_prime}) exceed N = {n}"));
    }
    if v > w.min(w_prime) {
        return invalid(format!("overlap {v} exceeds min({w}, {w_prime})"));
    }
    if w + w_prime - v > n {
        return invalid(format!(
            "union of supports {} exceeds N = {n}",
            w + w_prime - v
        ));
    }
    Ok(())
}

/// Trigonometric log-tables for the multiples `j g'`, `j = 0..=N`.
struct AngleTables {
    ln_cos2: Vec<f64>,
    ln_sin2: Vec<f64>,
}

impl AngleTables {
    fn new(n: usize, angle: f64) -> Self {
        let (ln_cos2, ln_sin2) = (0..=n)
            .map(|j| {
                let (s, c) = (j as f64 * angle).sin_cos();
                ((c * c).ln(), (s * s).ln())
            })
            .unzip();
        Self { ln_cos2, ln_sin2 }
    }
}

/// `ln sum_{l, 2l != k} C(k,l) [cos^2((2l-k)g')]^{N-k-d} [sin^2((2l-k)g')]^d`,
/// plus the `d = 0, 2l = k` delta term `C(k, k/2)`.
fn ln_inner(k: usize, d: usize, n: usize, lnf: &LnFactorials, t: &AngleTables) -> f64 {
    let cos_exp = n - k - d;
    let mut acc = LogSumExp::new();
    for l in 0..=k {
        if 2 * l == k {
            if d == 0 {
                acc.add(lnf.ln_binom(k, l));
            }
            continue;
        }
        let j = (2 * l).abs_diff(k);
        acc.add(lnf.ln_binom(k, l) + ln_pow(t.ln_cos2[j], cos_exp) + ln_pow(t.ln_sin2[j], d));
    }
    acc.ln_sum()
}

/// Haar-averaged string transition probability `W(w, w', v)`.
///
/// `w` and `w'` are the weights of the two Pauli strings and `v` the number
/// of sites where both are non-identity. Evaluated in log space with the
/// explicit `2l = k` delta term (no `0^0` shorthand).
pub fn w_matrix_element(w: usize, w_prime: usize, v: usize, params: &CircuitParams) -> Result<f64> {
    let n = params.n_sites;
    check_wv(w, w_prime, v, n)?;
    let lnf = LnFactorials::new(n);
    let tables = AngleTables::new(n, params.pair_angle());
    let d = w + w_prime - 2 * v;
    let mut acc = LogSumExp::new();
    for k in 0..=v {
        acc.add(lnf.ln_binom(v, k) + ln_inner(k, d, n, &lnf, &tables));
    }
    Ok((acc.ln_sum() - (w + w_prime) as f64 * LN3).exp())
}

/// `O(g^2)` approximation of [`w_matrix_element`].
///
/// Only the channels `w + w' - 2v in {0, 1}` survive at this order; every
/// other channel returns 0. For `a != 1/2` the expansion parameter is
/// `g' sqrt(N)`.
pub fn w_matrix_element_small_g(
    w: usize,
    w_prime: usize,
    v: usize,
    params: &CircuitParams,
) -> Result<f64> {
    let n = params.n_sites;
    check_wv(w, w_prime, v, n)?;
    let nf = n as f64;
    let g2 = params.effective_coupling().powi(2);
    let vf = v as f64;
    let base = (-((w + w_prime - v) as f64) * LN3).exp();
    Ok(match w + w_prime - 2 * v {
        0 => base * (1.0 + g2 * (2.0 * vf / (9.0 * nf)) * (1.0 - 3.0 * nf + 2.0 * vf)),
        1 => base * g2 * 2.0 * vf / (3.0 * nf),
        _ => 0.0,
    })
}

/// Precomputed `ln W` as a function of `(v, d)` with `d = w + w' - 2v`.
///
/// `W(w, w', v) = 3^{-(2v + d)} B(v, d)`, so a single `(N+1)^2` table covers
/// every matrix element needed by the transition matrix.
struct WKernel {
    n: usize,
    ln_b: Vec<f64>,
}

impl WKernel {
    fn new(params: &CircuitParams) -> Self {
        let n = params.n_sites;
        let lnf = LnFactorials::new(n);
        let tables = AngleTables::new(n, params.pair_angle());
        let stride = n + 1;

        // ln_inner(k, d) for k + d <= N
        let mut ln_a = vec![f64::NEG_INFINITY; stride * stride];
        ln_a.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(d, row)| {
                for (k, slot) in row.iter_mut().enumerate().take(n - d + 1) {
                    *slot = ln_inner(k, d, n, &lnf, &tables);
                }
            });

        let mut ln_b = vec![f64::NEG_INFINITY; stride * stride];
        ln_b.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(d, row)| {
                for (v, slot) in row.iter_mut().enumerate().take(n - d + 1) {
                    let mut acc = LogSumExp::new();
                    for k in 0..=v {
                        acc.add(lnf.ln_binom(v, k) + ln_a[d * stride + k]);
                    }
                    *slot = acc.ln_sum();
                }
            });
        Self { n, ln_b }
    }

    #[inline]
    fn ln_w(&self, w: usize, w_prime: usize, v: usize) -> f64 {
        let d = w + w_prime - 2 * v;
        self.ln_b[d * (self.n + 1) + v] - (w + w_prime) as f64 * LN3
    }
}

/// Dense `2N x 2N` column-stochastic matrix acting on [`WeightDistribution`].
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n_sites: usize,
    entries: Vec<f64>,
    params: CircuitParams,
}

impl TransitionMatrix {
    /// Builds the matrix and checks column sums against [`STOCHASTICITY_TOL`].
    pub fn build(params: &CircuitParams) -> Result<Self> {
        let r = Self::build_unchecked(params);
        let max_deviation = r.max_column_deviation();
        if max_deviation > STOCHASTICITY_TOL || !max_deviation.is_finite() {
            return Err(Error::NotStochastic { max_deviation });
        }
        Ok(r)
    }

    /// Builds the matrix without the stochasticity check.
    pub fn build_unchecked(params: &CircuitParams) -> Self {
        let n = params.n_sites;
        let dim = 2 * n;
        let kernel = WKernel::new(params);
        let lnf = LnFactorials::new(n);
        let mut entries = vec![0.0; dim * dim];
        entries
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, row)| {
                let (w, w1) = state_of_index(n, i);
                for (j, slot) in row.iter_mut().enumerate() {
                    let (wp, w1p) = state_of_index(n, j);
                    *slot = ln_entry(n, w, w1, wp, w1p, &kernel, &lnf).exp();
                }
            });
        Self {
            n_sites: n,
            entries,
            params: *params,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        2 * self.n_sites
    }

    pub fn params(&self) -> &CircuitParams {
        &self.params
    }

    /// Row-major entries, row = target state, column = source state.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `R(w, w1; w', w1')`; zero outside the domain.
    pub fn get(&self, w: usize, w1: usize, w_prime: usize, w1_prime: usize) -> f64 {
        match (
            state_index(self.n_sites, w, w1),
            state_index(self.n_sites, w_prime, w1_prime),
        ) {
            (Some(i), Some(j)) => self.entries[i * self.dim() + j],
            _ => 0.0,
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut sums = vec![0.0; dim];
        for row in self.entries.chunks(dim) {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// `max_j |sum_i R_ij - 1|`.
    pub fn max_column_deviation(&self) -> f64 {
        self.column_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Applies the matrix to a raw vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        self.entries
            .chunks(dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn ln_entry(
    n: usize,
    w: usize,
    w1: usize,
    wp: usize,
    w1p: usize,
    kernel: &WKernel,
    lnf: &LnFactorials,
) -> f64 {
    // m counts overlap sites other than site 1
    let lo = (w + wp + 1).saturating_sub(n + w1 + w1p);
    let hi = (w - w1).min(wp - w1p);
    if lo > hi {
        return f64::NEG_INFINITY;
    }
    let outside = n + w1p - 1 - wp;
    let mut acc = LogSumExp::new();
    for m in lo..=hi {
        let v = m + w1 * w1p;
        acc.add(
            lnf.ln_binom(wp - w1p, m) + lnf.ln_binom(outside, w - w1 - m) + kernel.ln_w(w, wp, v),
        );
    }
    acc.ln_sum() + w as f64 * LN3
}

/// Probability distribution `h_t(w, w1)` over operator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDistribution {
    n_sites: usize,
    values: Vec<f64>,
    time_step: usize,
}

impl WeightDistribution {
    /// Wraps raw values laid out as described in the module docs.
    pub fn from_values(n_sites: usize, values: Vec<f64>, time_step: usize) -> Result<Self> {
        if n_sites < 2 {
            return invalid(format!("n_sites must be >= 2, got {n_sites}"));
        }
        if values.len() != 2 * n_sites {
            return Err(Error::DimensionMismatch {
                expected: 2 * n_sites,
                found: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return invalid("weight distribution entries must be finite and >= 0");
        }
        Ok(Self {
            n_sites,
            values,
            time_step,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn time_step(&self) -> usize {
        self.time_step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `h(w, w1)`; zero outside the domain.
    pub fn get(&self, w: usize, w1: usize) -> f64 {
        state_index(self.n_sites, w, w1).map_or(0.0, |i| self.values[i])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Marginal `h(w) = h(w,0) + h(w,1)` for `w = 0..=N`.
    pub fn marginal(&self) -> Vec<f64> {
        (0..=self.n_sites)
            .map(|w| self.get(w, 0) + self.get(w, 1))
            .collect()
    }

    pub fn mean_weight(&self) -> f64 {
        self.marginal()
            .iter()
            .enumerate()
            .map(|(w, h)| w as f64 * h)
            .sum()
    }

    /// Probability that site 1 carries the identity, `sum_w h(w, 0)`.
    pub fn sector_zero_mass(&self) -> f64 {
        self.values[..self.n_sites].iter().sum()
    }
}

/// Point mass at `(w, w1) = (1, 1)`.
pub fn initial_distribution(n_sites: usize) -> Result<WeightDistribution> {
    let mut values = vec![0.0; 2 * n_sites];
    let idx = state_index(n_sites, 1, 1)
        .ok_or_else(|| Error::InvalidArgument(format!("n_sites must be >= 2, got {n_sites}")))?;
    values[idx] = 1.0;
    WeightDistribution::from_values(n_sites, values, 0)
}

/// One application of the master equation, `h_{t+1} = R h_t`.
///
/// No renormalization is applied; drift in the total is left visible.
pub fn step(dist: &WeightDistribution, r: &TransitionMatrix) -> Result<WeightDistribution> {
    if dist.n_sites != r.n_sites {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            found: dist.values.len(),
        });
    }
    let values = r
        .apply(&dist.values)
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    Ok(WeightDistribution {
        n_sites: dist.n_sites,
        values,
        time_step: dist.time_step + 1,
    })
}

/// Observables of a weight distribution at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightObservables {
    pub time_step: usize,
    pub mean_weight: f64,
    /// Exact finite-`N` circuit-averaged squared commutator.
    pub mean_commutator: f64,
    /// `h(w)` for `w = 0..=N`.
    pub marginal: Vec<f64>,
}

impl WeightObservables {
    pub fn of(dist: &WeightDistribution) -> Self {
        Self {
            time_step: dist.time_step,
            mean_weight: dist.mean_weight(),
            mean_commutator: mean_commutator(dist),
            marginal: dist.marginal(),
        }
    }
}

/// Output of [`evolve`].
#[derive(Debug, Clone)]
pub struct Evolution {
    /// One entry per time step `0..=steps`.
    pub observables: Vec<WeightObservables>,
    /// Full distributions at the requested checkpoints, in time order.
    pub checkpoints: Vec<WeightDistribution>,
    pub last: WeightDistribution,
}

/// Repeatedly applies [`step`], recording observables at every step and the
/// whole distribution at the time steps listed in `checkpoints`.
pub fn evolve(
    dist: &WeightDistribution,
    r: &TransitionMatrix,
    steps: usize,
    checkpoints: &[usize],
) -> Result<Evolution> {
    let mut current = dist.clone();
    let mut observables = Vec::with_capacity(steps + 1);
    let mut saved = Vec::new();
    let start = current.time_step;
    for s in 0..=steps {
        if s > 0 {
            current = step(&current, r)?;
        }
        observables.push(WeightObservables::of(&current));
        if checkpoints.contains(&(start + s)) {
            saved.push(current.clone());
        }
    }
    Ok(Evolution {
        observables,
        checkpoints: saved,
        last: current,
    })
}

/// Circuit-averaged squared commutator `<C(r, t)>` for `r != 1`:
/// `4 / (3(N-1)) sum_w [(w - 1) h(w) + h(w, 0)]`.
pub fn mean_commutator(dist: &WeightDistribution) -> f64 {
    let n = dist.n_sites;
    let marginal = dist.marginal();
    let s: f64 = (1..=n)
        .map(|w| (w as f64 - 1.0) * marginal[w] + dist.get(w, 0))
        .sum();
    4.0 * s / (3.0 * (n as f64 - 1.0))
}

/// Large-`N` form `(4/3) <w> / N`.
pub fn mean_commutator_large_n(dist: &WeightDistribution) -> f64 {
    4.0 / 3.0 * dist.mean_weight() / dist.n_sites as f64
}

/// Largest number of steps [`scrambling_time`] will run.
pub const MAX_SCRAMBLING_STEPS: usize = 5_000_000;

/// First (linearly interpolated) time step at which `<C>` reaches `threshold`.
pub fn scrambling_time(params: &CircuitParams, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return invalid(format!("threshold must lie in (0, 1), got {threshold}"));
    }
    if params.pair_angle().sin() == 0.0 {
        return Err(Error::NoCrossing {
            threshold,
            steps: 0,
        });
    }
    let r = TransitionMatrix::build(params)?;
    let mut dist = initial_distribution(params.n_sites)?;
    let mut prev = mean_commutator(&dist);
    for t in 1..=MAX_SCRAMBLING_STEPS {
        dist = step(&dist, &r)?;
        let c = mean_commutator(&dist);
        if c >= threshold {
            let frac = (threshold - prev) / (c - prev);
            return Ok((t - 1) as f64 + frac);
        }
        prev = c;
    }
    Err(Error::NoCrossing {
        threshold,
        steps: MAX_SCRAMBLING_STEPS,
    })
}

/// Closed-form distribution after a single step from the initial point mass,
/// valid for any `g'`:
/// `h_1(w, 1) = (1/3) C(N-1, w-1) [delta_{w,1} + 2 cos^{2(N-w)} g' sin^{2(w-1)} g']`,
/// `h_1(w, 0) = 0`.
pub fn one_step_distribution_analytic(params: &CircuitParams) -> Result<WeightDistribution> {
    let n = params.n_sites;
    let lnf = LnFactorials::new(n);
    let (s, c) = params.pair_angle().sin_cos();
    let (ln_c2, ln_s2) = ((c * c).ln(), (s * s).ln());
    let mut values = vec![0.0; 2 * n];
    for w in 1..=n {
        let mut acc = LogSumExp::new();
        if w == 1 {
            acc.add(0.0);
        }
        acc.add(2f64.ln() + ln_pow(ln_c2, n - w) + ln_pow(ln_s2, w - 1));
        values[n + w - 1] = (lnf.ln_binom(n - 1, w - 1) + acc.ln_sum() - LN3).exp();
    }
    WeightDistribution::from_values(n, values, 1)
}

/// Exact mean weight after one step, `1/3 + (2/3) cos^2 g' + (2/3) N sin^2 g'`.
pub fn one_step_mean_weight(params: &CircuitParams) -> f64 {
    let (s, c) = params.pair_angle().sin_cos();
    1.0 / 3.0 + 2.0 / 3.0 * c * c + 2.0 / 3.0 * params.n_sites as f64 * s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain-arithmetic evaluation of W with the 0^0 = 1 convention and no
    /// log-space tricks; only usable at small N.
    fn naive_w(w: usize, wp: usize, v: usize, n: usize, gp: f64) -> f64 {
        fn binom(n: usize, k: usize) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        fn pow0(x: f64, e: usize) -> f64 {
            if e == 0 {
                1.0
            } else {
                x.powi(e as i32)
            }
        }
        let d = w + wp - 2 * v;
        let mut total = 0.0;
        for k in 0..=v {
            let mut inner = 0.0;
            for l in 0..=k {
                let th = (2.0 * l as f64 - k as f64) * gp;
                inner +=
                    binom(k, l) * pow0(th.cos().powi(2), n - k - d) * pow0(th.sin().powi(2), d);
            }
            total += binom(v, k) * inner;
        }
        total / 3f64.powi((w + wp) as i32)
    }

    #[test]
    fn w_from_identity_is_delta() {
        let p = CircuitParams::new(7, 0.8).unwrap();
        for wp in 0..=7 {
            let x = w_matrix_element(0, wp, 0, &p).unwrap();
            assert_eq!(x, if wp == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn w_at_zero_coupling() {
        let p = CircuitParams::new(12, 0.0).unwrap();
        for w in 0..=12 {
            let x = w_matrix_element(w, w, w, &p).unwrap();
            let expect = 3f64.powi(-(w as i32));
            assert!((x - expect).abs() <= 1e-14 * expect);
        }
    }

    #[test]
    fn w_matches_naive_summation() {
        let p = CircuitParams::new(4, 0.3).unwrap();
        let gp = p.pair_angle();
        let x = w_matrix_element(2, 1, 1, &p).unwrap();
        // frozen from a 40-digit evaluation of the same sum
        let frozen = 0.001_581_146_507_026_817;
        assert!((x - naive_w(2, 1, 1, 4, gp)).abs() < 1e-16);
        assert!((x - frozen).abs() < 1e-15, "{x:e}");
        for w in 0..=4 {
            for wp in 0..=4 {
                for v in 0..=w.min(wp) {
                    if w + wp - v > 4 {
                        continue;
                    }
                    let a = w_matrix_element(w, wp, v, &p).unwrap();
                    let b = naive_w(w, wp, v, 4, gp);
                    assert!((a - b).abs() <= 1e-14 * b.max(1e-300), "W({w},{wp},{v})");
                }
            }
        }
    }

    #[test]
    fn w_rejects_bad_overlap() {
        let p = CircuitParams::new(5, 0.3).unwrap();
        assert!(w_matrix_element(2, 1, 2, &p).is_err());
        assert!(w_matrix_element(6, 1, 0, &p).is_err());
        assert!(w_matrix_element(4, 4, 2, &p).is_err());
        assert!(w_matrix_element_small_g(2, 1, 2, &p).is_err());
    }

    #[test]
    fn small_g_channels() {
        let p0 = CircuitParams::new(10, 0.0).unwrap();
        assert!((w_matrix_element_small_g(3, 3, 3, &p0).unwrap() - 3f64.powi(-3)).abs() < 1e-16);
        let p = CircuitParams::new(100, 0.1).unwrap();
        assert_eq!(w_matrix_element_small_g(3, 1, 1, &p).unwrap(), 0.0);
        let exact = w_matrix_element(2, 1, 1, &p).unwrap();
        let approx = w_matrix_element_small_g(2, 1, 1, &p).unwrap();
        // absolute error on the 3^{-(w+w'-v)} scale is O(g^4)
        assert!(
            ((exact - approx) * 9.0).abs() < 0.1f64.powi(4),
            "{exact} {approx}"
        );
    }

    #[test]
    fn small_g_error_is_quartic() {
        // |exact - approx| / g^4 roughly constant as g shrinks, in both channels
        for (w, wp, v) in [(5, 4, 4), (4, 4, 4)] {
            let ratios: Vec<f64> = [0.2, 0.1, 0.05]
                .iter()
                .map(|&g| {
                    let p = CircuitParams::new(40, g).unwrap();
                    let e = w_matrix_element(w, wp, v, &p).unwrap();
                    let a = w_matrix_element_small_g(w, wp, v, &p).unwrap();
                    (e - a).abs() / g.powi(4)
                })
                .collect();
            for r in &ratios[1..] {
                assert!((r / ratios[0] - 1.0).abs() < 0.2, "{ratios:?}");
            }
        }
    }

    #[test]
    fn zero_coupling_is_identity() {
        for n in [2, 5, 20] {
            let r = TransitionMatrix::build(&CircuitParams::new(n, 0.0).unwrap()).unwrap();
            let dim = r.dim();
            for i in 0..dim {
                for j in 0..dim {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((r.entries()[i * dim + j] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_row_and_column_are_decoupled() {
        let r = TransitionMatrix::build(&CircuitParams::new(9, 0.7).unwrap()).unwrap();
        assert_eq!(r.get(0, 0, 0, 0), 1.0);
        for w in 1..=9 {
            assert_eq!(r.get(0, 0, w, 1), 0.0);
            assert_eq!(
                r.get(w.min(8), 0, 0, 0),
                if w.min(8) == 0 { 1.0 } else { 0.0 }
            );
        }
    }

    #[test]
    fn initial_distribution_is_point_mass() {
        let d = initial_distribution(5).unwrap();
        assert_eq!(d.get(1, 1), 1.0);
        assert_eq!(d.total(), 1.0);
        assert_eq!(d.mean_weight(), 1.0);
        assert_eq!(d.time_step(), 0);
        assert_eq!(mean_commutator(&d), 0.0);
        assert!(initial_distribution(1).is_err());
    }

    #[test]
    fn one_step_matches_matrix() {
        for gp in [0.0, 0.2, 0.9] {
            let p = CircuitParams::with_exponent(8, gp, 0.0).unwrap();
            let r = TransitionMatrix::build(&p).unwrap();
            let h1 = step(&initial_distribution(8).unwrap(), &r).unwrap();
            let a = one_step_distribution_analytic(&p).unwrap();
            for (x, y) in h1.values().iter().zip(a.values()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((a.total() - 1.0).abs() < 1e-12);
            assert!((a.mean_weight() - one_step_mean_weight(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn step_rejects_mismatch() {
        let r = TransitionMatrix::build(&CircuitParams::new(4, 0.3).unwrap()).unwrap();
        assert!(step(&initial_distribution(5).unwrap(), &r).is_err());
    }

    #[test]
    fn evolve_zero_steps() {
        let r = TransitionMatrix::build(&CircuitParams::new(6, 0.3).unwrap()).unwrap();
        let ev = evolve(&initial_distribution(6).unwrap(), &r, 0, &[0]).unwrap();
        assert_eq!(ev.observables.len(), 1);
        assert_eq!(ev.observables[0].mean_weight, 1.0);
        assert_eq!(ev.checkpoints.len(), 1);
    }

    #[test]
    fn scrambling_time_small_threshold() {
        let p = CircuitParams::new(50, 0.1).unwrap();
        let t = scrambling_time(&p, 1e-9).unwrap();
        assert!(t > 0.0 && t < 1e-3);
        assert!(scrambling_time(&p, 1.5).is_err());
        assert!(scrambling_time(&CircuitParams::new(50, 0.0).unwrap(), 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn w_is_symmetric(
            (n, w, wp, v) in (2usize..30).prop_flat_map(|n| (Just(n), 0..=n, 0..=n))
                .prop_flat_map(|(n, w, wp)| {
                    let lo = (w + wp).saturating_sub(n);
                    (Just(n), Just(w), Just(wp), lo..=w.min(wp))
                }),
            g in -1.0f64..1.0,
        ) {
            let p = CircuitParams::new(n, g).unwrap();
            let a = w_matrix_element(w, wp, v, &p).unwrap();
            let b = w_matrix_element(wp, w, v, &p).unwrap();
            prop_assert!(a >= 0.0 && a <= 1.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn columns_sum_to_one(n in 2usize..60, g in -1.0f64..1.0, a in prop::sample::select(vec![0.0, 0.5, 1.0])) {
            let p = CircuitParams::with_exponent(n, g, a).unwrap();
            let r = TransitionMatrix::build(&p).unwrap();
            prop_assert!(r.entries().iter().all(|&x| x >= 0.0));
            prop_assert!(r.max_column_deviation() < STOCHASTICITY_TOL);
        }
    }
}
