//! Classical chain of anharmonic oscillators with a global quadratic coupling,
//!
//! `H = sum p_r^2 / 2 + (W1^2 / 2) sum (q_{r+1} - q_r)^2
//!    + (W2^2 / 2 sqrt N) (sum q_r)^2 + (W3^2 / 4) sum q_r^4`.
//!
//! Trajectories are integrated with velocity Verlet. The perturbation protocol
//! runs two copies of each initial condition, the second displaced by `epsilon`
//! on the first site, and averages `|dq_r(t)|` over an ensemble.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::linear_fit;

/// `|q|` beyond which a trajectory is declared to have blown up.
pub const BLOW_UP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainBoundary {
    #[default]
    Open,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub n_osc: usize,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub boundary: ChainBoundary,
}

impl OscillatorParams {
    pub fn new(n_osc: usize, omega1: f64, omega2: f64, omega3: f64, epsilon: f64) -> Self {
        Self {
            n_osc,
            omega1,
            omega2,
            omega3,
            epsilon,
            boundary: ChainBoundary::Open,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_osc == 0 {
            return invalid("n_osc must be positive");
        }
        let freqs = [self.omega1, self.omega2, self.omega3];
        if freqs.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("frequencies must be finite and non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid("epsilon must be positive");
        }
        Ok(())
    }

    /// Frequency of the uniform mode, `N^{1/4} W2`.
    pub fn uniform_frequency(&self) -> f64 {
        (self.n_osc as f64).powf(0.25) * self.omega2
    }

    /// Largest step the integrator accepts, `0.01 / max(W1, W2, W3, N^{1/4} W2)`.
    pub fn max_dt(&self) -> f64 {
        let fastest = [
            self.omega1,
            self.omega2,
            self.omega3,
            self.uniform_frequency(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if fastest > 0.0 {
            0.01 / fastest
        } else {
            0.01
        }
    }

    /// Step used for production runs, a tenth of [`Self::max_dt`]. Velocity
    /// Verlet's energy error scales as `dt^2`; at the bound itself the relative
    /// drift over `t = 25` is a few `1e-5` for unit-amplitude initial data.
    pub fn reference_dt(&self) -> f64 {
        self.max_dt() / 10.0
    }

    fn sqrt_n(&self) -> f64 {
        (self.n_osc as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorConfiguration {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub time: f64,
}

impl OscillatorConfiguration {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let p = vec![0.0; q.len()];
        Self { q, p, time: 0.0 }
    }
}

/// `dp/dt = -dV/dq`, written into `out`.
pub fn forces(q: &[f64], params: &OscillatorParams, out: &mut [f64]) {
    let n = q.len();
    let w1 = params.omega1 * params.omega1;
    let global = params.omega2 * params.omega2 / params.sqrt_n() * q.iter().sum::<f64>();
    let w3 = params.omega3 * params.omega3;
    let periodic = params.boundary == ChainBoundary::Periodic && n > 2;
    for r in 0..n {
        let mut lap = 0.0;
        if r > 0 {
            lap += q[r - 1] - q[r];
        } else if periodic {
            lap += q[n - 1] - q[r];
        }
        if r + 1 < n {
            lap += q[r + 1] - q[r];
        } else if periodic {
            lap += q[0] - q[r];
        }
        out[r] = w1 * lap - global - w3 * q[r] * q[r] * q[r];
    }
}

/// Hamilton's equations, `(dq/dt, dp/dt)`.
pub fn equations_of_motion(
    config: &OscillatorConfiguration,
    params: &OscillatorParams,
) -> (Vec<f64>, Vec<f64>) {
    let mut f = vec![0.0; config.q.len()];
    forces(&config.q, params, &mut f);
    (config.p.clone(), f)
}

pub fn energy(config: &OscillatorConfiguration, params: &OscillatorParams) -> f64 {
    let q = &config.q;
    let n = q.len();
    let kinetic: f64 = config.p.iter().map(|p| p * p).sum::<f64>() / 2.0;
    let mut bonds: f64 = q.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    if params.boundary == ChainBoundary::Periodic && n > 2 {
        bonds += (q[0] - q[n - 1]).powi(2);
    }
    let total: f64 = q.iter().sum();
    let quartic: f64 = q.iter().map(|x| x.powi(4)).sum();
    kinetic
        + params.omega1.powi(2) / 2.0 * bonds
        + params.omega2.powi(2) / (2.0 * params.sqrt_n()) * total * total
        + params.omega3.powi(2) / 4.0 * quartic
}

/// Velocity-Verlet stepper that keeps the force of the current position.
struct Verlet<'a> {
    params: &'a OscillatorParams,
    dt: f64,
    force: Vec<f64>,
}

impl<'a> Verlet<'a> {
    fn new(params: &'a OscillatorParams, config: &OscillatorConfiguration, dt: f64) -> Self {
        let mut force = vec![0.0; config.q.len()];
        forces(&config.q, params, &mut force);
        Self { params, dt, force }
    }

    fn step(&mut self, c: &mut OscillatorConfiguration) -> Result<()> {
        let h = self.dt;
        for ((q, p), f) in c.q.iter_mut().zip(c.p.iter_mut()).zip(&self.force) {
            *p += 0.5 * h * f;
            *q += h * *p;
        }
        forces(&c.q, self.params, &mut self.force);
        for (p, f) in c.p.iter_mut().zip(&self.force) {
            *p += 0.5 * h * f;
        }
        c.time += h;
        let worst = c.q.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !(worst <= BLOW_UP) {
            return Err(Error::BlowUp {
                time: c.time,
                magnitude: worst,
            });
        }
        Ok(())
    }
}

/// Sampled trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillatorTrajectory {
    pub dt: f64,
    pub samples: Vec<OscillatorConfiguration>,
}

impl OscillatorTrajectory {
    pub fn last(&self) -> &OscillatorConfiguration {
        self.samples
            .last()
            .expect("trajectory holds the initial sample")
    }

    /// Largest `|E(t) / E(0) - 1|` over the samples.
    pub fn max_relative_energy_drift(&self, params: &OscillatorParams) -> f64 {
        let e0 = energy(&self.samples[0], params);
        self.samples
            .iter()
            .map(|c| (energy(c, params) / e0 - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Number of steps covering `t_final` with a step no longer than `dt`, and the
/// (possibly shortened) step that divides `t_final` exactly. The step count is
/// rounded up to a multiple of `granularity`.
fn step_plan(t_final: f64, dt: f64, granularity: usize) -> Result<(usize, f64)> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return invalid("t_final must be non-negative");
    }
    if t_final == 0.0 {
        return Ok((0, dt));
    }
    let g = granularity.max(1);
    let blocks = (t_final / (dt * g as f64) - 1e-9).ceil().max(1.0) as usize;
    let steps = blocks * g;
    Ok((steps, t_final / steps as f64))
}

fn check_dt(params: &OscillatorParams, dt: f64) -> Result<()> {
    params.validate()?;
    if !(dt > 0.0) || dt > params.max_dt() * (1.0 + 1e-12) {
        return invalid(format!(
            "dt = {dt} must be positive and resolve the fastest scale (<= {})",
            params.max_dt()
        ));
    }
    Ok(())
}

/// Velocity-Verlet integration. `dt` is shortened if needed so that it
/// divides `t_final`; the step used is returned in the trajectory.
/// `record_every` is a step count between samples; the initial and final
/// configurations are always recorded.
pub fn integrate(
    config: &OscillatorConfiguration,
    params: &OscillatorParams,
    t_final: f64,
    dt: f64,
    record_every: usize,
) -> Result<OscillatorTrajectory> {
    check_dt(params, dt)?;
    if config.q.len() != params.n_osc || config.p.len() != params.n_osc {
        return Err(Error::DimensionMismatch {
            expected: params.n_osc,
            found: config.q.len().min(config.p.len()),
        });
    }
    let (steps, dt) = step_plan(t_final, dt, 1)?;
    let every = record_every.max(1);
    let mut c = config.clone();
    let mut samples = vec![c.clone()];
    let mut stepper = Verlet::new(params, &c, dt);
    for s in 1..=steps {
        stepper.step(&mut c)?;
        if s % every == 0 || s == steps {
            samples.push(c.clone());
        }
    }
    Ok(OscillatorTrajectory { dt, samples })
}

/// Exact evolution of the quadratic chain (`W3 = 0`) by diagonalizing the
/// force-constant matrix. Used as an oracle.
pub fn normal_mode_evolution(
    config: &OscillatorConfiguration,
    params: &OscillatorParams,
    t: f64,
) -> Result<OscillatorConfiguration> {
    params.validate()?;
    if params.omega3 != 0.0 {
        return invalid("normal-mode evolution needs omega3 = 0");
    }
    let n = params.n_osc;
    // columns of the force map applied to unit vectors give -K
    let mut k = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut f = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        forces(&e, params, &mut f);
        for i in 0..n {
            k[(i, j)] = -f[i];
        }
    }
    let eig = SymmetricEigen::new(k);
    let v = &eig.eigenvectors;
    let q0 = v.transpose() * nalgebra::DVector::from_column_slice(&config.q);
    let p0 = v.transpose() * nalgebra::DVector::from_column_slice(&config.p);
    let mut qt = nalgebra::DVector::zeros(n);
    let mut pt = nalgebra::DVector::zeros(n);
    for m in 0..n {
        let w2 = eig.eigenvalues[m].max(0.0);
        let w = w2.sqrt();
        let (s, c) = (w * t).sin_cos();
        let sinc = if w > 1e-12 { s / w } else { t };
        qt[m] = c * q0[m] + sinc * p0[m];
        pt[m] = -w * s * q0[m] + c * p0[m];
    }
    Ok(OscillatorConfiguration {
        q: (v * qt).iter().copied().collect(),
        p: (v * pt).iter().copied().collect(),
        time: config.time + t,
    })
}

/// Settings of the two-trajectory protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub t_final: f64,
    /// Upper bound on the step; shortened so that samples fall on a grid
    /// dividing `t_final`.
    pub dt: f64,
    /// Integrator steps between recorded times.
    pub record_every: usize,
    pub n_ensemble: usize,
    pub seed: u64,
}

/// Ensemble mean of `|dq_r(t)|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthHeatmap {
    pub times: Vec<f64>,
    /// `mean[t][r]`, `r` 0-based.
    pub mean: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub n_ensemble: usize,
    pub dt_used: f64,
}

impl GrowthHeatmap {
    pub fn site_series(&self, r: usize) -> Vec<f64> {
        self.mean.iter().map(|row| row[r]).collect()
    }
}

/// Amplitudes iid uniform on `[-1, 1]`, all momenta zero.
pub fn random_rest_configuration<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> OscillatorConfiguration {
    OscillatorConfiguration::at_rest((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

fn member_differences(
    params: &OscillatorParams,
    opts: &GrowthOptions,
    member: usize,
    n_records: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(member as u64);
    let mut a = random_rest_configuration(params.n_osc, &mut rng);
    let mut b = a.clone();
    b.q[0] += params.epsilon;
    let diff = |a: &OscillatorConfiguration, b: &OscillatorConfiguration| {
        a.q.iter()
            .zip(&b.q)
            .map(|(x, y)| (y - x).abs())
            .collect::<Vec<_>>()
    };
    let mut out = Vec::with_capacity(n_records);
    out.push(diff(&a, &b));
    let mut sa = Verlet::new(params, &a, opts.dt);
    let mut sb = Verlet::new(params, &b, opts.dt);
    for _ in 1..n_records {
        for _ in 0..opts.record_every {
            sa.step(&mut a)?;
            sb.step(&mut b)?;
        }
        out.push(diff(&a, &b));
    }
    Ok(out)
}

/// Two-configuration protocol averaged over `n_ensemble` initial conditions.
/// Members are independent and reduced in a fixed order, so the result
/// depends only on the seed.
pub fn perturbation_growth(
    params: &OscillatorParams,
    opts: &GrowthOptions,
) -> Result<GrowthHeatmap> {
    check_dt(params, opts.dt)?;
    if opts.n_ensemble == 0 || opts.record_every == 0 {
        return invalid("n_ensemble and record_every must be positive");
    }
    let (steps, dt) = step_plan(opts.t_final, opts.dt, opts.record_every)?;
    let opts = &GrowthOptions { dt, ..*opts };
    let n_records = steps / opts.record_every + 1;
    let n = params.n_osc;
    const CHUNK: usize = 16;
    let partial: Vec<Result<Vec<Vec<f64>>>> = (0..opts.n_ensemble.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![vec![0.0; n]; n_records];
            for m in c * CHUNK..((c + 1) * CHUNK).min(opts.n_ensemble) {
                for (row, d) in acc
                    .iter_mut()
                    .zip(member_differences(params, opts, m, n_records)?)
                {
                    row.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut mean = vec![vec![0.0; n]; n_records];
    for p in partial {
        for (row, part) in mean.iter_mut().zip(p?) {
            row.iter_mut().zip(part).for_each(|(x, y)| *x += y);
        }
    }
    let inv = 1.0 / opts.n_ensemble as f64;
    mean.iter_mut().flatten().for_each(|x| *x *= inv);
    let times = (0..n_records)
        .map(|i| (i * opts.record_every) as f64 * dt)
        .collect();
    Ok(GrowthHeatmap {
        times,
        mean,
        epsilon: params.epsilon,
        n_ensemble: opts.n_ensemble,
        dt_used: dt,
    })
}

/// Per-site exponential growth rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// `per_site[r]` is `None` when the site never traverses the window.
    pub per_site: Vec<Option<f64>>,
    pub pooled: f64,
    /// `(max - min) / mean` over the fitted sites.
    pub relative_spread: f64,
    pub window: (f64, f64),
}

/// Default growth window `[10 epsilon, 0.1]`.
pub fn default_window(epsilon: f64) -> (f64, f64) {
    (10.0 * epsilon, 0.1)
}

/// Fits `ln dq_r` against `t` over the samples after `dq_r` first exceeds
/// `window.0` and before it first exceeds `window.1`.
pub fn lyapunov_estimate(heatmap: &GrowthHeatmap, window: (f64, f64)) -> Result<LyapunovEstimate> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return invalid("growth window must satisfy 0 < lo < hi");
    }
    let n = heatmap.mean.first().map_or(0, Vec::len);
    let mut per_site = Vec::with_capacity(n);
    for r in 0..n {
        let series = heatmap.site_series(r);
        let start = series.iter().position(|&d| d >= lo);
        let end = series.iter().position(|&d| d > hi).unwrap_or(series.len());
        let fit = match start {
            Some(s) if end > s + 2 => {
                let t = &heatmap.times[s..end];
                let y: Vec<f64> = series[s..end].iter().map(|d| d.ln()).collect();
                Some(linear_fit(t, &y)?.slope)
            }
            _ => None,
        };
        per_site.push(fit);
    }
    let fitted: Vec<f64> = per_site.iter().flatten().copied().collect();
    if fitted.is_empty() {
        return Err(Error::Fit("no site traverses the growth window".into()));
    }
    let pooled = fitted.iter().sum::<f64>() / fitted.len() as f64;
    let (min, max) = fitted
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    Ok(LyapunovEstimate {
        per_site,
        pooled,
        relative_spread: (max - min) / pooled.abs(),
        window,
    })
}

/// Far-site linear-regime prediction `(epsilon / N) |cos(N^{1/4} W2 t) - 1|`.
pub fn uniform_mode_prediction(params: &OscillatorParams, t: f64) -> f64 {
    params.epsilon / params.n_osc as f64 * ((params.uniform_frequency() * t).cos() - 1.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig(n: usize) -> OscillatorParams {
        OscillatorParams::new(n, 1.0, 1.0, 2.0, 1e-5)
    }

    #[test]
    fn force_examples() {
        let p = fig(5);
        let mut f = vec![1.0; 5];
        forces(&[0.0; 5], &p, &mut f);
        assert!(f.iter().all(|x| *x == 0.0));
        let p = OscillatorParams::new(2, 1.0, 0.0, 0.0, 1e-5);
        let mut f = vec![0.0; 2];
        forces(&[1.0, -1.0], &p, &mut f);
        assert_eq!(f, vec![-2.0, 2.0]);
        // uniform displacement with only the global term: Q'' = -sqrt(N) W2^2 Q
        let p = OscillatorParams::new(9, 0.0, 1.3, 0.0, 1e-5);
        let mut f = vec![0.0; 9];
        forces(&[0.4; 9], &p, &mut f);
        for x in f {
            assert!((x + 3.0 * 1.69 * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn forces_are_minus_energy_gradient() {
        let p = fig(6);
        let c = OscillatorConfiguration::at_rest(vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.5]);
        let mut f = vec![0.0; 6];
        forces(&c.q, &p, &mut f);
        let h = 1e-6;
        for r in 0..6 {
            let (mut up, mut dn) = (c.clone(), c.clone());
            up.q[r] += h;
            dn.q[r] -= h;
            let grad = (energy(&up, &p) - energy(&dn, &p)) / (2.0 * h);
            assert!((f[r] + grad).abs() < 1e-7);
        }
    }

    #[test]
    fn single_harmonic_oscillator() {
        // N = 1: only the global term acts, frequency W2
        let p = OscillatorParams::new(1, 0.0, 2.0, 0.0, 1e-5);
        let dt = 0.001;
        let c = OscillatorConfiguration {
            q: vec![1.0],
            p: vec![0.5],
            time: 0.0,
        };
        let traj = integrate(&c, &p, 5.0, dt, 1000).unwrap();
        for s in &traj.samples {
            let exact = (2.0 * s.time).cos() + 0.25 * (2.0 * s.time).sin();
            assert!((s.q[0] - exact).abs() < 1e-5, "{}", s.time);
        }
        // error is second order in dt
        let fine = integrate(&c, &p, 5.0, dt / 10.0, 10_000).unwrap();
        let exact = 10f64.cos() + 0.25 * 10f64.sin();
        assert!((fine.last().q[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn matches_normal_modes() {
        let p = OscillatorParams::new(12, 1.0, 1.0, 0.0, 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = random_rest_configuration(12, &mut rng);
        c.p = (0..12).map(|i| 0.1 * i as f64 - 0.5).collect();
        let dt = p.max_dt() / 4.0;
        let t = 2000.0 * dt;
        let num = integrate(&c, &p, t, dt, 2000).unwrap();
        let exact = normal_mode_evolution(&c, &p, t).unwrap();
        for (a, b) in num.last().q.iter().zip(&exact.q) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn energy_drift_is_small() {
        let p = fig(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_rest_configuration(20, &mut rng);
        let traj = integrate(&c, &p, 25.0, p.reference_dt(), 20).unwrap();
        assert!(traj.max_relative_energy_drift(&p) < 1e-6);
        // second order: halving the step quarters the drift
        let coarse = integrate(&c, &p, 25.0, p.max_dt(), 1).unwrap();
        let fine = integrate(&c, &p, 25.0, p.max_dt() / 2.0, 1).unwrap();
        let ratio = coarse.max_relative_energy_drift(&p) / fine.max_relative_energy_drift(&p);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn blow_up_and_bad_steps() {
        let p = fig(3);
        let c = OscillatorConfiguration::at_rest(vec![1e7, 0.0, 0.0]);
        assert!(matches!(
            integrate(&c, &p, 0.01, p.max_dt() / 2.0, 1),
            Err(Error::BlowUp { .. })
        ));
        let c = OscillatorConfiguration::at_rest(vec![0.1, 0.0, 0.0]);
        assert!(integrate(&c, &p, 1.0, 1.0, 1).is_err());
        assert!(integrate(&c, &p, 1.0, 0.01, 1).is_err());
        let t = integrate(&c, &p, 1.0, 0.0007, 1).unwrap();
        assert_eq!(t.samples.len(), 1430);
        assert!((t.last().time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growth_starts_at_epsilon_and_is_deterministic() {
        let p = fig(6);
        let opts = GrowthOptions {
            t_final: 1.0,
            dt: 0.001,
            record_every: 100,
            n_ensemble: 40,
            seed: 9,
        };
        let a = perturbation_growth(&p, &opts).unwrap();
        assert!((a.mean[0][0] - 1e-5).abs() < 1e-12);
        assert!(a.mean[0][1..].iter().all(|x| *x == 0.0));
        let b = perturbation_growth(&p, &opts).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.times.len(), 11);
    }

    #[test]
    fn linear_regime_is_additive_and_matches_uniform_mode() {
        let mut p = OscillatorParams::new(20, 1.0, 1.0, 0.0, 1e-5);
        let dt = p.max_dt() / 2.0;
        let opts = GrowthOptions {
            t_final: 2000.0 * dt,
            dt,
            record_every: 20,
            n_ensemble: 3,
            seed: 2,
        };
        let a = perturbation_growth(&p, &opts).unwrap();
        p.epsilon = 2e-5;
        let b = perturbation_growth(&p, &opts).unwrap();
        // exact up to the roundoff of subtracting two O(1) trajectories
        for (ra, rb) in a.mean.iter().zip(&b.mean) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
        let envelope = 2.0 * 2e-5 / 20.0;
        for (t, row) in b.times.iter().zip(&b.mean) {
            assert!((row[19] - uniform_mode_prediction(&p, *t)).abs() < 1e-3 * envelope);
        }
    }

    #[test]
    fn uniform_mode_frequency() {
        // W1 = W3 = 0: the projection onto the uniform vector oscillates at N^{1/4} W2
        let p = OscillatorParams::new(16, 0.0, 1.0, 0.0, 1e-5);
        let dt = p.max_dt();
        let mut q = vec![0.0; 16];
        q[0] = 1.0;
        let steps = 40_000;
        let traj = integrate(
            &OscillatorConfiguration::at_rest(q),
            &p,
            steps as f64 * dt,
            dt,
            10,
        )
        .unwrap();
        let proj: Vec<f64> = traj
            .samples
            .iter()
            .map(|c| c.q.iter().sum::<f64>() / 4.0)
            .collect();
        let span = traj.last().time;
        let bin = 2.0 * std::f64::consts::PI / span;
        let power = |w: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (c, x) in traj.samples.iter().zip(&proj) {
                re += x * (w * c.time).cos();
                im += x * (w * c.time).sin();
            }
            re * re + im * im
        };
        let peak = (1..200)
            .map(|k| k as f64 * bin)
            .max_by(|a, b| power(*a).total_cmp(&power(*b)))
            .unwrap();
        assert!((peak - p.uniform_frequency()).abs() <= bin);
    }

    #[test]
    fn lyapunov_of_linear_chain_is_not_exponential() {
        let p = OscillatorParams::new(10, 1.0, 1.0, 0.0, 1e-5);
        let opts = GrowthOptions {
            t_final: 20.0,
            dt: 0.002,
            record_every: 50,
            n_ensemble: 2,
            seed: 1,
        };
        let h = perturbation_growth(&p, &opts).unwrap();
        // nothing ever leaves the linear scale, so no site reaches the window
        assert!(h.mean.iter().flatten().all(|x| *x < 10.0 * 1e-5));
        assert!(lyapunov_estimate(&h, default_window(1e-5)).is_err());
    }
}
