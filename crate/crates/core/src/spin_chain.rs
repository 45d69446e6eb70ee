//! Exact numerics for the Ising chain with an all-to-all `ZZ` term,
//!
//! `H = -J sum Z_i Z_{i+1} - h_x sum X_i - h_z sum Z_i - (g / sqrt N) sum_{i<j} Z_i Z_j`.
//!
//! States live in the computational basis with site 0 as the least
//! significant bit and `Z|0> = +|0>`. The Hamiltonian is applied matrix-free:
//! all `Z` terms are a precomputed diagonal (the global term through the
//! magnetization, `sum_{i<j} z_i z_j = (m^2 - N) / 2`), and `X` terms are bit
//! flips.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{bootstrap_sem, gap_ratios};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest chain handled by the state-vector routines.
pub const MAX_SITES: usize = 24;
/// Largest chain for which a dense Hamiltonian may be built.
pub const MAX_DENSE_SITES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n_sites: usize,
    pub ising_j: f64,
    pub field_x: f64,
    pub field_z: f64,
    pub global_g: f64,
    pub boundary: Boundary,
}

impl ChainParams {
    /// Mixed-field chain without the global term.
    pub fn local(n_sites: usize, ising_j: f64, field_x: f64, field_z: f64) -> Self {
        Self {
            n_sites,
            ising_j,
            field_x,
            field_z,
            global_g: 0.0,
            boundary: Boundary::Open,
        }
    }

    /// Transverse-field chain plus the global term (`h_z = 0`).
    pub fn non_local(n_sites: usize, ising_j: f64, field_x: f64, global_g: f64) -> Self {
        Self {
            n_sites,
            ising_j,
            field_x,
            field_z: 0.0,
            global_g,
            boundary: Boundary::Open,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SITES).contains(&self.n_sites) {
            return invalid(format!(
                "n_sites must lie in 2..={MAX_SITES}, got {}",
                self.n_sites
            ));
        }
        let all = [self.ising_j, self.field_x, self.field_z, self.global_g];
        if all.iter().any(|x| !x.is_finite()) {
            return invalid("Hamiltonian parameters must be finite");
        }
        Ok(())
    }

    /// Diagonal energy of a basis state.
    pub fn diagonal_energy(&self, b: usize) -> f64 {
        let n = self.n_sites;
        let z = |i: usize| 1.0 - 2.0 * ((b >> i) & 1) as f64;
        let bonds = match self.boundary {
            Boundary::Open => n - 1,
            Boundary::Periodic if n > 2 => n,
            Boundary::Periodic => n - 1,
        };
        let ising: f64 = (0..bonds).map(|i| z(i) * z((i + 1) % n)).sum();
        let field: f64 = (0..n).map(z).sum();
        let m = field;
        let global = (m * m - n as f64) / 2.0;
        -self.ising_j * ising - self.field_z * field - self.global_g / (n as f64).sqrt() * global
    }
}

/// Matrix-free Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpinChain {
    params: ChainParams,
    diag: Vec<f64>,
}

impl SpinChain {
    pub fn new(params: ChainParams) -> Result<Self> {
        params.validate()?;
        let diag = (0..1usize << params.n_sites)
            .into_par_iter()
            .map(|b| params.diagonal_energy(b))
            .collect();
        Ok(Self { params, diag })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn n_sites(&self) -> usize {
        self.params.n_sites
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = H x`, cost `O(N 2^N)`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.params.n_sites;
        let hx = self.params.field_x;
        y.par_iter_mut().enumerate().for_each(|(b, yb)| {
            let mut acc = x[b] * self.diag[b];
            if hx != 0.0 {
                let mut flips = ZERO;
                for k in 0..n {
                    flips += x[b ^ (1 << k)];
                }
                acc -= flips * hx;
            }
            *yb = acc;
        });
    }

    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut y = vec![ZERO; psi.len()];
        self.apply(psi, &mut y);
        inner(psi, &y).re
    }

    /// Dense matrix for `N <= 12`.
    pub fn dense(&self) -> Result<DMatrix<Complex64>> {
        let n = self.params.n_sites;
        if n > MAX_DENSE_SITES {
            return invalid(format!(
                "dense Hamiltonian limited to N <= {MAX_DENSE_SITES}"
            ));
        }
        let dim = self.dim();
        let mut h = DMatrix::from_element(dim, dim, ZERO);
        for b in 0..dim {
            h[(b, b)] = Complex64::new(self.diag[b], 0.0);
            for k in 0..n {
                h[(b ^ (1 << k), b)] -= Complex64::new(self.params.field_x, 0.0);
            }
        }
        Ok(h)
    }
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Normalized state vector in the computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinChainState {
    pub n_sites: usize,
    pub amplitudes: Vec<Complex64>,
}

impl SpinChainState {
    pub fn new(n_sites: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != 1 << n_sites {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_sites,
                found: amplitudes.len(),
            });
        }
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    /// Haar-random pure state (normalized complex Gaussian vector).
    pub fn haar_random<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> Self {
        let mut amplitudes: Vec<Complex64> = (0..1usize << n_sites)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let nrm = norm(&amplitudes);
        amplitudes.iter_mut().for_each(|z| *z /= nrm);
        Self {
            n_sites,
            amplitudes,
        }
    }

    /// Product of `(|0> + i|1>) / sqrt 2` on every site.
    pub fn plus_y(n_sites: usize) -> Self {
        let scale = (0.5f64).powf(n_sites as f64 / 2.0);
        let amplitudes = (0..1usize << n_sites)
            .map(|b| {
                // i^{popcount(b)}
                let phase = match b.count_ones() % 4 {
                    0 => Complex64::new(1.0, 0.0),
                    1 => Complex64::new(0.0, 1.0),
                    2 => Complex64::new(-1.0, 0.0),
                    _ => Complex64::new(0.0, -1.0),
                };
                phase * scale
            })
            .collect();
        Self {
            n_sites,
            amplitudes,
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// `Z` on `site` (0-based).
    pub fn apply_z(&mut self, site: usize) {
        for (b, a) in self.amplitudes.iter_mut().enumerate() {
            if (b >> site) & 1 == 1 {
                *a = -*a;
            }
        }
    }

    pub fn with_z(&self, site: usize) -> Self {
        let mut s = self.clone();
        s.apply_z(site);
        s
    }
}

/// Krylov propagator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    /// Maximal Krylov dimension per step.
    pub max_dim: usize,
    /// Error allowed per step (2-norm of the state).
    pub tolerance: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            max_dim: 30,
            tolerance: 1e-10,
        }
    }
}

/// Diagnostics accumulated over an evolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KrylovStats {
    pub steps: usize,
    pub matvecs: usize,
    /// Sum of the per-step a posteriori error estimates.
    pub error_estimate: f64,
}

/// Lanczos basis and tridiagonal matrix for one step.
struct Lanczos {
    basis: Vec<Vec<Complex64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `beta_m`, the coupling out of the subspace (zero on exhaustion).
    residual: f64,
}

fn lanczos(h: &SpinChain, start: &[Complex64], max_dim: usize, stats: &mut KrylovStats) -> Lanczos {
    let nrm = norm(start);
    let mut basis = vec![start.iter().map(|z| z / nrm).collect::<Vec<_>>()];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut w = vec![ZERO; start.len()];
    let mut residual = 0.0;
    let m = max_dim.min(start.len());
    for j in 0..m {
        h.apply(&basis[j], &mut w);
        stats.matvecs += 1;
        let a = inner(&basis[j], &w).re;
        alpha.push(a);
        // three-term recurrence, done twice against the two latest vectors;
        // with m <= 40 and short steps the loss of global orthogonality stays
        // below the step tolerance (checked against dense propagation in tests)
        for _ in 0..2 {
            for v in basis.iter().rev().take(2) {
                let c = inner(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = norm(&w);
        if b < 1e-12 * (1.0 + a.abs()) || j + 1 == m {
            residual = if j + 1 == m { b } else { 0.0 };
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|z| z / b).collect());
    }
    Lanczos {
        basis,
        alpha,
        beta,
        residual,
    }
}

/// `exp(-i T tau) e_1` for the real symmetric tridiagonal `T`.
fn tridiagonal_propagator(eig: &SymmetricEigen<f64, nalgebra::Dyn>, tau: f64) -> Vec<Complex64> {
    let q = &eig.eigenvectors;
    let m = q.nrows();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| Complex64::from_polar(q[(i, k)] * q[(0, k)], -eig.eigenvalues[k] * tau))
                .sum()
        })
        .collect()
}

/// `|psi(t)> = exp(-i H t) |psi>` by adaptive Lanczos stepping. Negative `t`
/// evolves backwards.
pub fn evolve_state(
    h: &SpinChain,
    state: &SpinChainState,
    t: f64,
    opts: &KrylovOptions,
) -> Result<(SpinChainState, KrylovStats)> {
    if state.n_sites != h.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: h.n_sites(),
            found: state.n_sites,
        });
    }
    if opts.max_dim < 2 || !(opts.tolerance > 0.0) {
        return invalid("Krylov dimension must be >= 2 and tolerance positive");
    }
    let mut stats = KrylovStats::default();
    let mut psi = state.amplitudes.clone();
    let direction = t.signum();
    let mut remaining = t.abs();
    let mut guess = remaining;
    while remaining > 0.0 {
        let nrm = norm(&psi);
        let lz = lanczos(h, &psi, opts.max_dim, &mut stats);
        let m = lz.alpha.len();
        let mut tmat = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            tmat[(i, i)] = lz.alpha[i];
            if i + 1 < m {
                tmat[(i, i + 1)] = lz.beta[i];
                tmat[(i + 1, i)] = lz.beta[i];
            }
        }
        let eig = SymmetricEigen::new(tmat);
        // the error estimate grows like tau^m, which sets the step update
        let order = m as f64;
        let mut tau = guess.min(remaining);
        let mut y;
        let mut err;
        let mut shrinks = 0;
        loop {
            y = tridiagonal_propagator(&eig, direction * tau);
            err = lz.residual * y[m - 1].norm() * nrm;
            if err <= opts.tolerance {
                stats.error_estimate += err;
                break;
            }
            tau *= (0.9 * (opts.tolerance / err).powf(1.0 / order)).clamp(0.1, 0.9);
            shrinks += 1;
            if shrinks > 200 {
                return Err(Error::KrylovBreakdown(format!(
                    "no step size meets tolerance {} (residual {})",
                    opts.tolerance, lz.residual
                )));
            }
        }
        let mut next = vec![ZERO; psi.len()];
        for (v, c) in lz.basis.iter().zip(&y) {
            let c = c * nrm;
            next.iter_mut().zip(v).for_each(|(x, b)| *x += c * b);
        }
        psi = next;
        remaining -= tau;
        if remaining < 1e-14 * t.abs() {
            remaining = 0.0;
        }
        stats.steps += 1;
        guess = if err > 0.0 {
            tau * (0.9 * (opts.tolerance / err).powf(1.0 / order)).clamp(0.5, 2.0)
        } else {
            2.0 * tau
        };
    }
    Ok((
        SpinChainState {
            n_sites: state.n_sites,
            amplitudes: psi,
        },
        stats,
    ))
}

/// Evolves through an ascending list of times, returning the state at each.
pub fn evolve_through(
    h: &SpinChain,
    state: &SpinChainState,
    times: &[f64],
    opts: &KrylovOptions,
) -> Result<Vec<SpinChainState>> {
    let mut out = Vec::with_capacity(times.len());
    let mut current = state.clone();
    let mut now = 0.0;
    for &t in times {
        if t < now {
            return invalid("times must be ascending and non-negative");
        }
        if t > now {
            current = evolve_state(h, &current, t - now, opts)?.0;
            now = t;
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// OTOC estimates for several probe sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OtocResult {
    pub times: Vec<f64>,
    /// 1-based probe sites.
    pub sites: Vec<usize>,
    /// `values[i][j]` is `F(sites[i], times[j])` averaged over the states.
    pub values: Vec<Vec<f64>>,
    /// Largest `|Im|` of the state-averaged estimator over sites and times.
    /// The exact trace is real, so this measures the typicality error,
    /// expected at the scale of [`OtocResult::typicality_scale`].
    pub max_imaginary: f64,
    pub n_states: usize,
}

impl OtocResult {
    /// `2^{-N/2} / sqrt(n_states)`.
    pub fn typicality_scale(&self, n_sites: usize) -> f64 {
        (0.5f64).powf(n_sites as f64 / 2.0) / (self.n_states as f64).sqrt()
    }
}

/// `F(r, t) = Re <psi| Z_1(t) Z_r Z_1(t) Z_r |psi>` with `Z_1(t) = e^{iHt} Z_1 e^{-iHt}`,
/// averaged over `n_states` Haar-random states drawn from `seed`.
///
/// Per state and time: `u = Z_1(t) psi` and `v_r = Z_1(t) Z_r psi` (forward
/// evolution, `Z_1`, backward evolution), then `F = Re <Z_r u | v_r>`.
pub fn otoc(
    params: &ChainParams,
    sites: &[usize],
    times: &[f64],
    seed: u64,
    n_states: usize,
    opts: &KrylovOptions,
) -> Result<OtocResult> {
    let h = SpinChain::new(*params)?;
    let n = params.n_sites;
    if sites.iter().any(|&r| !(1..=n).contains(&r)) {
        return invalid(format!("probe sites must lie in 1..={n}"));
    }
    if n_states == 0 {
        return invalid("n_states must be >= 1");
    }
    let mut values = vec![vec![0.0; times.len()]; sites.len()];
    let mut imaginary = vec![vec![0.0; times.len()]; sites.len()];
    for s in 0..n_states {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let psi = SpinChainState::haar_random(n, &mut rng);
        // heisenberg-evolved Z_1 applied to a given state, for every time
        let z1_t = |start: &SpinChainState| -> Result<Vec<SpinChainState>> {
            evolve_through(&h, start, times, opts)?
                .into_iter()
                .zip(times)
                .map(|(fwd, &t)| Ok(evolve_state(&h, &fwd.with_z(0), -t, opts)?.0))
                .collect()
        };
        let u = z1_t(&psi)?;
        for (i, &r) in sites.iter().enumerate() {
            let v = z1_t(&psi.with_z(r - 1))?;
            for (j, (uj, vj)) in u.iter().zip(&v).enumerate() {
                let f = inner(&uj.with_z(r - 1).amplitudes, &vj.amplitudes);
                values[i][j] += f.re / n_states as f64;
                imaginary[i][j] += f.im / n_states as f64;
            }
        }
    }
    let max_imaginary = imaginary
        .iter()
        .flatten()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    Ok(OtocResult {
        times: times.to_vec(),
        sites: sites.to_vec(),
        values,
        max_imaginary,
        n_states,
    })
}

/// Von Neumann entropy (natural log) of the left `floor(N/2)` sites.
pub fn half_chain_entropy(state: &SpinChainState) -> f64 {
    let n = state.n_sites;
    let left = n / 2;
    let (rows, cols) = (1usize << left, 1usize << (n - left));
    // amplitude index b = low | high << left, low = left block
    let m = DMatrix::from_fn(rows, cols, |lo, hi| state.amplitudes[lo | (hi << left)]);
    let sv = m.singular_values();
    sv.iter()
        .map(|s| s * s)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Half-chain entropy after a quench from the `+y` product state.
pub fn entanglement_entropy_quench(
    params: &ChainParams,
    times: &[f64],
    opts: &KrylovOptions,
) -> Result<Vec<f64>> {
    let h = SpinChain::new(*params)?;
    let psi = SpinChainState::plus_y(params.n_sites);
    Ok(evolve_through(&h, &psi, times, opts)?
        .iter()
        .map(half_chain_entropy)
        .collect())
}

/// One `(k, P)` block of a periodic chain, `P = prod X`.
#[derive(Debug, Clone)]
pub struct SymmetrySector {
    pub momentum: usize,
    pub parity: i8,
    /// Orbit representatives (smallest basis index of each orbit).
    pub representatives: Vec<usize>,
    /// For every basis state: index of its orbit's basis vector in this
    /// sector (if the orbit survives the projection) and its amplitude.
    lookup: Vec<Option<(u32, Complex64)>>,
    /// Sparse basis vectors.
    vectors: Vec<Vec<(usize, Complex64)>>,
}

impl SymmetrySector {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }
}

fn translate(b: usize, n: usize) -> usize {
    let mask = (1usize << n) - 1;
    ((b << 1) | (b >> (n - 1))) & mask
}

/// All `2N` sectors of a periodic `N`-site chain.
pub fn symmetry_sectors(n: usize) -> Result<Vec<SymmetrySector>> {
    if !(3..=MAX_SITES).contains(&n) {
        return invalid(format!("symmetry sectors need 3 <= N <= {MAX_SITES}"));
    }
    let dim = 1usize << n;
    let all = dim - 1;
    // orbits under translations and the global flip
    let mut rep_of = vec![usize::MAX; dim];
    let mut orbits: Vec<Vec<(usize, usize, usize)>> = Vec::new();
    for b in 0..dim {
        if rep_of[b] != usize::MAX {
            continue;
        }
        let mut members = Vec::with_capacity(2 * n);
        for s in 0..2 {
            let mut x = if s == 1 { b ^ all } else { b };
            for j in 0..n {
                members.push((x, j, s));
                rep_of[x] = b;
                x = translate(x, n);
            }
        }
        orbits.push(members);
    }
    let mut sectors = Vec::with_capacity(2 * n);
    for parity in [1i8, -1] {
        for k in 0..n {
            let mut lookup = vec![None; dim];
            let mut vectors = Vec::new();
            let mut representatives = Vec::new();
            for members in &orbits {
                // |v> = sum_g chi(g)^* g|r>, chi(T^j P^s) = e^{-2 pi i k j / N} p^s
                let mut amps: Vec<(usize, Complex64)> = Vec::new();
                for &(x, j, s) in members {
                    let chi = Complex64::from_polar(1.0, 2.0 * PI * (k * j) as f64 / n as f64)
                        * if s == 1 { parity as f64 } else { 1.0 };
                    match amps.iter_mut().find(|(y, _)| *y == x) {
                        Some((_, a)) => *a += chi,
                        None => amps.push((x, chi)),
                    }
                }
                let nrm = amps.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>().sqrt();
                if nrm < 1e-8 {
                    continue;
                }
                amps.iter_mut().for_each(|(_, a)| *a /= nrm);
                let idx = vectors.len() as u32;
                for &(x, a) in &amps {
                    lookup[x] = Some((idx, a));
                }
                representatives.push(members[0].0);
                vectors.push(amps);
            }
            sectors.push(SymmetrySector {
                momentum: k,
                parity,
                representatives,
                lookup,
                vectors,
            });
        }
    }
    Ok(sectors)
}

/// Dense Hermitian block of `H` in a sector, plus the largest norm of the
/// part of `H v` that leaks out of the sector.
pub fn sector_hamiltonian(h: &SpinChain, sector: &SymmetrySector) -> (DMatrix<Complex64>, f64) {
    let n = h.n_sites();
    let hx = h.params().field_x;
    let d = sector.dim();
    let mut block = DMatrix::from_element(d, d, ZERO);
    let mut max_leak = 0.0_f64;
    for (c, vec) in sector.vectors.iter().enumerate() {
        // sparse H v_c
        let mut hv: Vec<(usize, Complex64)> = Vec::with_capacity(vec.len() * (n + 1));
        for &(b, a) in vec {
            hv.push((b, a * h.diagonal()[b]));
            if hx != 0.0 {
                for k in 0..n {
                    hv.push((b ^ (1 << k), -a * hx));
                }
            }
        }
        hv.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(hv.len());
        for (b, a) in hv {
            match merged.last_mut() {
                Some((lb, la)) if *lb == b => *la += a,
                _ => merged.push((b, a)),
            }
        }
        for &(b, a) in &merged {
            if let Some((r, amp)) = sector.lookup[b] {
                block[(r as usize, c)] += amp.conj() * a;
            }
        }
        let leak: f64 = merged
            .iter()
            .map(|&(b, a)| match sector.lookup[b] {
                Some((r, amp)) => (a - amp * block[(r as usize, c)]).norm_sqr(),
                None => a.norm_sqr(),
            })
            .sum::<f64>()
            .sqrt();
        max_leak = max_leak.max(leak);
    }
    (block, max_leak)
}

/// Settings for [`level_statistics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStatisticsOptions {
    /// Sectors smaller than this are left out of the pooled ratio.
    pub min_sector_dim: usize,
    /// Leave out `k = 0` and `k = N/2`, which keep an unresolved site-reversal
    /// symmetry and therefore superpose two independent spectra.
    pub exclude_reflection_symmetric: bool,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for LevelStatisticsOptions {
    fn default() -> Self {
        Self {
            min_sector_dim: 50,
            exclude_reflection_symmetric: true,
            bootstrap_resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorStatistics {
    pub momentum: usize,
    pub parity: i8,
    pub dim: usize,
    pub mean_ratio: f64,
    pub included: bool,
    pub off_block_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelStatistics {
    pub mean_ratio: f64,
    pub sem: f64,
    pub n_ratios: usize,
    pub sectors: Vec<SectorStatistics>,
    pub total_dim: usize,
    pub max_off_block_residual: f64,
}

/// Off-block residuals above this indicate a symmetry bookkeeping error.
pub const SECTOR_MIXING_TOL: f64 = 1e-10;

/// Eigenvalues (ascending) and off-block residual of one sector.
#[derive(Debug, Clone)]
pub struct SectorSpectrum {
    pub momentum: usize,
    pub parity: i8,
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    pub off_block_residual: f64,
}

fn check_symmetric(params: &ChainParams) -> Result<()> {
    if params.boundary != Boundary::Periodic {
        return invalid("symmetry-resolved spectra need a periodic chain");
    }
    if params.field_z != 0.0 {
        return invalid("h_z must vanish for the global spin flip to be a symmetry");
    }
    Ok(())
}

/// Diagonalizes the sectors whose momentum passes `keep`.
pub fn sector_spectra(
    params: &ChainParams,
    keep: impl Fn(usize) -> bool + Sync,
) -> Result<Vec<SectorSpectrum>> {
    check_symmetric(params)?;
    let h = SpinChain::new(*params)?;
    let sectors = symmetry_sectors(params.n_sites)?;
    Ok(sectors
        .into_par_iter()
        .filter(|s| keep(s.momentum))
        .map(|s| {
            let (block, leak) = sector_hamiltonian(&h, &s);
            let mut ev: Vec<f64> = if block.nrows() == 0 {
                Vec::new()
            } else {
                SymmetricEigen::new(block)
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect()
            };
            ev.sort_by(f64::total_cmp);
            SectorSpectrum {
                momentum: s.momentum,
                parity: s.parity,
                dim: s.dim(),
                eigenvalues: ev,
                off_block_residual: leak,
            }
        })
        .collect())
}

/// Mean adjacent-gap ratio pooled over `(k, prod X)` sectors.
///
/// Sectors `k` and `N - k` are related by site reversal and carry identical
/// spectra, so only `k <= N/2` is diagonalized; pooling both would count
/// every ratio twice and understate the error bar.
pub fn level_statistics(
    params: &ChainParams,
    opts: &LevelStatisticsOptions,
) -> Result<LevelStatistics> {
    check_symmetric(params)?;
    let n = params.n_sites;
    let total_dim = symmetry_sectors(n)?.iter().map(SymmetrySector::dim).sum();
    let spectra = sector_spectra(params, |k| 2 * k <= n)?;
    let mut pooled = Vec::new();
    let mut sectors = Vec::new();
    let mut max_leak = 0.0_f64;
    for s in &spectra {
        max_leak = max_leak.max(s.off_block_residual);
        let ratios = gap_ratios(&s.eigenvalues);
        let reflective = s.momentum == 0 || 2 * s.momentum == n;
        let included =
            s.dim >= opts.min_sector_dim && !(opts.exclude_reflection_symmetric && reflective);
        if included {
            pooled.extend_from_slice(&ratios);
        }
        sectors.push(SectorStatistics {
            momentum: s.momentum,
            parity: s.parity,
            dim: s.dim,
            mean_ratio: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
            included,
            off_block_residual: s.off_block_residual,
        });
    }
    if max_leak > SECTOR_MIXING_TOL {
        return Err(Error::SectorMixing { residual: max_leak });
    }
    if pooled.is_empty() {
        return Err(Error::Fit("no sector passed the size cutoff".into()));
    }
    let mean_ratio = pooled.iter().sum::<f64>() / pooled.len() as f64;
    Ok(LevelStatistics {
        mean_ratio,
        sem: bootstrap_sem(&pooled, opts.bootstrap_resamples, opts.seed),
        n_ratios: pooled.len(),
        sectors,
        total_dim,
        max_off_block_residual: max_leak,
    })
}

/// `<r>` of a synthetic spectrum with iid exponential gaps; should return
/// `2 ln 2 - 1`.
pub fn poisson_mean_ratio(n_levels: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = 0.0;
    let levels: Vec<f64> = (0..n_levels)
        .map(|_| {
            e += -(1.0 - rng.random::<f64>()).ln();
            e
        })
        .collect();
    let r = gap_ratios(&levels);
    r.iter().sum::<f64>() / r.len() as f64
}

/// Eigen-decomposition propagation, used as an oracle for small chains.
pub fn evolve_dense(h: &SpinChain, state: &SpinChainState, t: f64) -> Result<SpinChainState> {
    let eig = SymmetricEigen::new(h.dense()?);
    let psi = DVector::from_column_slice(&state.amplitudes);
    let coeffs = eig.eigenvectors.adjoint() * psi;
    let phased = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, e)| c * Complex64::from_polar(1.0, -e * t)),
    );
    let out = &eig.eigenvectors * phased;
    SpinChainState::new(state.n_sites, out.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a.kronecker(b)
    }

    fn pauli(c: char) -> DMatrix<Complex64> {
        let (o, l) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        match c {
            'I' => DMatrix::from_row_slice(2, 2, &[l, o, o, l]),
            'X' => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
            'Z' => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
            _ => unreachable!(),
        }
    }

    /// Operator acting with `ops[i]` on site `i`; site 0 is the rightmost
    /// Kronecker factor so that it is the least significant bit.
    fn site_product(n: usize, ops: &[(usize, char)]) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        for site in (0..n).rev() {
            let c = ops.iter().find(|(s, _)| *s == site).map_or('I', |x| x.1);
            m = kron(&m, &pauli(c));
        }
        m
    }

    /// Hamiltonian from Kronecker products, independent of the bit tricks.
    fn kron_hamiltonian(p: &ChainParams) -> DMatrix<Complex64> {
        let n = p.n_sites;
        let dim = 1 << n;
        let c = |x: f64| Complex64::new(x, 0.0);
        let mut h = DMatrix::from_element(dim, dim, c(0.0));
        let bonds: Vec<(usize, usize)> = match p.boundary {
            Boundary::Open => (0..n - 1).map(|i| (i, i + 1)).collect(),
            Boundary::Periodic => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        for (i, j) in bonds {
            h -= site_product(n, &[(i, 'Z'), (j, 'Z')]) * c(p.ising_j);
        }
        for i in 0..n {
            h -= site_product(n, &[(i, 'X')]) * c(p.field_x);
            h -= site_product(n, &[(i, 'Z')]) * c(p.field_z);
            for j in i + 1..n {
                h -= site_product(n, &[(i, 'Z'), (j, 'Z')]) * c(p.global_g / (n as f64).sqrt());
            }
        }
        h
    }

    fn generic(n: usize) -> ChainParams {
        ChainParams {
            n_sites: n,
            ising_j: 1.0,
            field_x: 1.05,
            field_z: 0.5,
            global_g: -0.7,
            boundary: Boundary::Open,
        }
    }

    #[test]
    fn matches_kronecker_construction() {
        for p in [
            generic(5),
            generic(6).with_boundary(Boundary::Periodic),
            ChainParams::non_local(2, 1.0, 0.0, 2f64.sqrt()),
        ] {
            let h = SpinChain::new(p).unwrap();
            let dense = h.dense().unwrap();
            let reference = kron_hamiltonian(&p);
            assert!((dense - reference).norm() < 1e-12);
        }
        // N = 2, h_x = 0, g = sqrt 2: |00> has z = (1, 1), energy -J - g/sqrt2 = -2
        let h = SpinChain::new(ChainParams::non_local(2, 1.0, 0.0, 2f64.sqrt())).unwrap();
        assert!((h.diagonal()[0] + 2.0).abs() < 1e-14);
        assert!((h.diagonal()[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermitian_on_random_pairs() {
        let h = SpinChain::new(generic(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = SpinChainState::haar_random(8, &mut rng).amplitudes;
        let b = SpinChainState::haar_random(8, &mut rng).amplitudes;
        let (mut ha, mut hb) = (vec![ZERO; 256], vec![ZERO; 256]);
        h.apply(&a, &mut ha);
        h.apply(&b, &mut hb);
        assert!((inner(&b, &ha) - inner(&a, &hb).conj()).norm() < 1e-12);
    }

    #[test]
    fn diagonal_evolution_is_phase() {
        let p = ChainParams::non_local(6, 0.8, 0.0, -1.0);
        let h = SpinChain::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = SpinChainState::haar_random(6, &mut rng);
        let (out, _) = evolve_state(&h, &psi, 3.7, &KrylovOptions::default()).unwrap();
        for (b, (o, i)) in out.amplitudes.iter().zip(&psi.amplitudes).enumerate() {
            let exact = i * Complex64::from_polar(1.0, -h.diagonal()[b] * 3.7);
            assert!((o - exact).norm() < 1e-10);
        }
    }

    #[test]
    fn krylov_matches_dense_propagation() {
        let p = generic(10);
        let h = SpinChain::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = SpinChainState::haar_random(10, &mut rng);
        let t = 2.5;
        let (kry, stats) = evolve_state(&h, &psi, t, &KrylovOptions::default()).unwrap();
        let dense = evolve_dense(&h, &psi, t).unwrap();
        let diff: f64 = kry
            .amplitudes
            .iter()
            .zip(&dense.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-8, "{diff}");
        assert!((kry.norm() - 1.0).abs() < 1e-9);
        assert!(stats.steps > 1);
        // backwards evolution returns to the start
        let (back, _) = evolve_state(&h, &kry, -t, &KrylovOptions::default()).unwrap();
        assert!(back
            .amplitudes
            .iter()
            .zip(&psi.amplitudes)
            .all(|(a, b)| (a - b).norm() < 1e-8));
    }

    #[test]
    fn energy_and_norm_conserved() {
        let h = SpinChain::new(generic(9)).unwrap();
        let psi = SpinChainState::plus_y(9);
        let e0 = h.expectation(&psi.amplitudes);
        let states =
            evolve_through(&h, &psi, &[0.0, 1.0, 5.0, 12.0], &KrylovOptions::default()).unwrap();
        assert_eq!(states[0], psi);
        for s in &states {
            assert!((h.expectation(&s.amplitudes) - e0).abs() < 1e-9);
            assert!((s.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn otoc_at_time_zero() {
        let p = generic(6);
        let res = otoc(&p, &[1, 3, 6], &[0.0, 0.5], 5, 2, &KrylovOptions::default()).unwrap();
        // Z_1 and Z_r commute, and Z_1 Z_1 = 1
        for row in &res.values {
            assert!((row[0] - 1.0).abs() < 1e-12);
        }
        // the product is not Hermitian, so only the t = 0 entry is real
        assert!(res.max_imaginary.is_finite());
        let zero = otoc(&p, &[2], &[0.0], 5, 2, &KrylovOptions::default()).unwrap();
        assert!(zero.max_imaginary < 1e-12);
        assert!(otoc(&p, &[7], &[0.0], 5, 1, &KrylovOptions::default()).is_err());
    }

    #[test]
    fn otoc_matches_dense_operators() {
        let p = generic(6);
        let h = SpinChain::new(p).unwrap();
        let eig = SymmetricEigen::new(h.dense().unwrap());
        let t = 1.3;
        let u = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::from_polar(1.0, -e * t)))
            * eig.eigenvectors.adjoint();
        let z1 = site_product(6, &[(0, 'Z')]);
        let z4 = site_product(6, &[(3, 'Z')]);
        let z1t = u.adjoint() * &z1 * &u;
        let op = &z1t * &z4 * &z1t * &z4;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        rng.set_stream(0);
        let psi = DVector::from_column_slice(&SpinChainState::haar_random(6, &mut rng).amplitudes);
        let exact = (psi.adjoint() * op * &psi)[(0, 0)].re;
        let res = otoc(&p, &[4], &[t], 8, 1, &KrylovOptions::default()).unwrap();
        assert!((res.values[0][0] - exact).abs() < 1e-8);
    }

    #[test]
    fn entropy_bounds() {
        let p = generic(8);
        let s = entanglement_entropy_quench(&p, &[0.0, 1.0, 3.0, 20.0], &KrylovOptions::default())
            .unwrap();
        assert!(s[0].abs() < 1e-12);
        for v in &s {
            assert!(*v >= -1e-12 && *v <= 4.0 * 2f64.ln() + 1e-12);
        }
        assert!(s[3] > s[1]);
        // a Bell pair across the cut
        let mut amps = vec![ZERO; 4];
        amps[0] = Complex64::new(0.5f64.sqrt(), 0.0);
        amps[3] = Complex64::new(0.5f64.sqrt(), 0.0);
        let bell = SpinChainState::new(2, amps).unwrap();
        assert!((half_chain_entropy(&bell) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sectors_are_complete_and_reproduce_spectrum() {
        let n = 8;
        let p = ChainParams::non_local(n, 1.0, 1.05, -1.0).with_boundary(Boundary::Periodic);
        let spectra = sector_spectra(&p, |_| true).unwrap();
        let total: usize = spectra.iter().map(|s| s.dim).sum();
        assert_eq!(total, 1 << n);
        let mut pooled: Vec<f64> = spectra.iter().flat_map(|s| s.eigenvalues.clone()).collect();
        pooled.sort_by(f64::total_cmp);
        let mut full: Vec<f64> = SymmetricEigen::new(SpinChain::new(p).unwrap().dense().unwrap())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        full.sort_by(f64::total_cmp);
        for (a, b) in pooled.iter().zip(&full) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(spectra.iter().all(|s| s.off_block_residual < 1e-12));
        // mirror momenta share a spectrum
        let find = |k: usize, par: i8| {
            spectra
                .iter()
                .find(|s| s.momentum == k && s.parity == par)
                .unwrap()
        };
        for (a, b) in find(3, 1).eigenvalues.iter().zip(&find(5, 1).eigenvalues) {
            assert!((a - b).abs() < 1e-9);
        }
        let ls = level_statistics(
            &p,
            &LevelStatisticsOptions {
                min_sector_dim: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ls.total_dim, 1 << n);
        assert_eq!(ls.sectors.len(), 2 * (n / 2 + 1));
    }

    #[test]
    fn symmetry_requirements() {
        let open = ChainParams::non_local(6, 1.0, 1.0, -1.0);
        assert!(level_statistics(&open, &LevelStatisticsOptions::default()).is_err());
        let mut zfield = open.with_boundary(Boundary::Periodic);
        zfield.field_z = 0.3;
        assert!(level_statistics(&zfield, &LevelStatisticsOptions::default()).is_err());
    }

    #[test]
    fn poisson_estimator() {
        let r = poisson_mean_ratio(400_000, 1);
        assert!((r - (2.0 * 2f64.ln() - 1.0)).abs() < 0.005);
    }
}
