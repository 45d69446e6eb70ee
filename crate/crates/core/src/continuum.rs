//! Fokker-Planck limit of the weight master equation.
//!
//! `d_tau h = -d_w (D1 h) + d_w^2 (D2 h)` with `tau = g^2 t`, integrated by the
//! method of lines on a uniform node grid. Boundary nodes own half cells, so
//! the discrete mass is the trapezoidal integral and is conserved exactly by
//! the flux form. Both ends are zero-flux.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Main-text drift `D1(w) = (2/3)(w - 4w^2 / 3N)`.
pub fn drift_coefficient(w: f64, n_sites: usize) -> f64 {
    2.0 / 3.0 * (w - 4.0 * w * w / (3.0 * n_sites as f64))
}

/// Main-text diffusion `D2(w) = w/3 - 2w^2 / 9N`.
pub fn diffusion_coefficient(w: f64, n_sites: usize) -> f64 {
    w / 3.0 - 2.0 * w * w / (9.0 * n_sites as f64)
}

/// Drift without the `O(1/N)` truncation, `2(4 + w + 3Nw - 4w^2) / 9N`.
pub fn drift_coefficient_full(w: f64, n_sites: usize) -> f64 {
    let n = n_sites as f64;
    2.0 * (4.0 + w + 3.0 * n * w - 4.0 * w * w) / (9.0 * n)
}

/// Diffusion without truncation, `(-3 + 3N(w-1) + 7w - 2w^2) / 9N`.
///
/// Negative for `w < 1`; grids using this form should start at `w = 1`.
pub fn diffusion_coefficient_full(w: f64, n_sites: usize) -> f64 {
    let n = n_sites as f64;
    (-3.0 + 3.0 * n * (w - 1.0) + 7.0 * w - 2.0 * w * w) / (9.0 * n)
}

/// Which drift/diffusion pair to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coefficients {
    /// Leading-order forms in `1/N`.
    #[default]
    LeadingOrder,
    /// Forms keeping all `1/N` corrections.
    Full,
    /// Constant coefficients in grid units (used for solver checks).
    Constant { drift: f64, diffusion: f64 },
}

/// Spatial discretization of the drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriftScheme {
    /// Donor-node upwinding; first order, keeps the first moment exact.
    #[default]
    Upwind,
    /// Scharfetter-Gummel exponential fitting of drift and diffusion.
    /// Second order, reduces to upwinding where drift dominates.
    ExponentialFitting,
}

/// Grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coordinate {
    /// Operator weight `w`.
    Weight,
    /// Weight fraction `phi = w / N`.
    Fraction,
}

/// Uniform grid on `[lo, hi]` in either coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpGrid {
    pub n_sites: usize,
    pub coordinate: Coordinate,
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

pub const MIN_GRID_POINTS: usize = 64;

impl FpGrid {
    pub fn new(
        n_sites: usize,
        coordinate: Coordinate,
        lo: f64,
        hi: f64,
        n_points: usize,
    ) -> Result<Self> {
        if n_points < MIN_GRID_POINTS {
            return invalid(format!(
                "n_points must be >= {MIN_GRID_POINTS}, got {n_points}"
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid(format!(
                "grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
            ));
        }
        if n_sites < 2 {
            return invalid("n_sites must be >= 2");
        }
        Ok(Self {
            n_sites,
            coordinate,
            lo,
            hi,
            n_points,
        })
    }

    /// Weight grid on `[0, N]`.
    pub fn weight(n_sites: usize, n_points: usize) -> Result<Self> {
        Self::new(n_sites, Coordinate::Weight, 0.0, n_sites as f64, n_points)
    }

    /// Weight grid on `[1, N]`, the range the chain actually visits once the
    /// decoupled identity sector is dropped.
    pub fn dynamical(n_sites: usize, n_points: usize) -> Result<Self> {
        Self::new(n_sites, Coordinate::Weight, 1.0, n_sites as f64, n_points)
    }

    /// Fraction grid on `[0, 1]`.
    pub fn fraction(n_sites: usize, n_points: usize) -> Result<Self> {
        Self::new(n_sites, Coordinate::Fraction, 0.0, 1.0, n_points)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Operator weight at a grid coordinate.
    pub fn to_weight(&self, x: f64) -> f64 {
        match self.coordinate {
            Coordinate::Weight => x,
            Coordinate::Fraction => x * self.n_sites as f64,
        }
    }

    /// Grid coordinate of an operator weight.
    pub fn from_weight(&self, w: f64) -> f64 {
        match self.coordinate {
            Coordinate::Weight => w,
            Coordinate::Fraction => w / self.n_sites as f64,
        }
    }

    /// Trapezoidal quadrature weights (control-volume sizes).
    pub fn weights(&self) -> Vec<f64> {
        let d = self.spacing();
        (0..self.n_points)
            .map(|i| {
                if i == 0 || i + 1 == self.n_points {
                    d / 2.0
                } else {
                    d
                }
            })
            .collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights().iter().zip(values).map(|(a, b)| a * b).sum()
    }

    /// Drift and diffusion at coordinate `x`, expressed in grid units.
    fn coefficients_at(&self, coeffs: Coefficients, x: f64) -> (f64, f64) {
        let n = self.n_sites;
        let w = self.to_weight(x);
        let (d1, d2) = match coeffs {
            Coefficients::LeadingOrder => (drift_coefficient(w, n), diffusion_coefficient(w, n)),
            Coefficients::Full => (
                drift_coefficient_full(w, n),
                diffusion_coefficient_full(w, n),
            ),
            Coefficients::Constant { drift, diffusion } => return (drift, diffusion),
        };
        match self.coordinate {
            Coordinate::Weight => (d1, d2),
            Coordinate::Fraction => {
                let nf = n as f64;
                (d1 / nf, d2 / (nf * nf))
            }
        }
    }
}

/// Density on an [`FpGrid`] at rescaled time `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpDensity {
    pub values: Vec<f64>,
    pub tau: f64,
}

impl FpDensity {
    /// Unit mass deposited at weight `w0` with cloud-in-cell weights, so the
    /// discrete mass and mean are exact. The bump is one grid cell wide.
    pub fn point_mass(grid: &FpGrid, w0: f64) -> Result<Self> {
        let x0 = grid.from_weight(w0);
        if !(grid.lo..=grid.hi).contains(&x0) {
            return invalid(format!("point mass at w = {w0} lies outside the grid"));
        }
        let d = grid.spacing();
        let vol = grid.weights();
        let s = ((x0 - grid.lo) / d).min((grid.n_points - 1) as f64);
        let i = (s.floor() as usize).min(grid.n_points - 2);
        let frac = s - i as f64;
        let mut values = vec![0.0; grid.n_points];
        values[i] = (1.0 - frac) / vol[i];
        values[i + 1] += frac / vol[i + 1];
        Ok(Self { values, tau: 0.0 })
    }

    /// Gaussian of the given width (in grid units) centred at weight `w0`,
    /// truncated to the grid and normalized.
    pub fn gaussian(grid: &FpGrid, w0: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return invalid("gaussian width must be positive");
        }
        let x0 = grid.from_weight(w0);
        let mut values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| (-0.5 * ((x - x0) / width).powi(2)).exp())
            .collect();
        let mass = grid.integrate(&values);
        if !(mass > 0.0) {
            return invalid("gaussian has no support on the grid");
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { values, tau: 0.0 })
    }

    pub fn mass(&self, grid: &FpGrid) -> f64 {
        grid.integrate(&self.values)
    }

    /// Mean operator weight `<w>`.
    pub fn mean_weight(&self, grid: &FpGrid) -> f64 {
        let first: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(x, h)| grid.to_weight(*x) * h)
            .collect();
        grid.integrate(&first) / self.mass(grid)
    }

    /// `int |h - other| dx`.
    pub fn l1_distance(&self, other: &FpDensity, grid: &FpGrid) -> f64 {
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        grid.integrate(&diff)
    }

    /// Grid coordinate of the largest node value.
    pub fn argmax(&self, grid: &FpGrid) -> f64 {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        grid.node(i)
    }
}

/// Spatial operator of the discretized equation in flux form.
#[derive(Debug, Clone)]
pub struct FpOperator {
    grid: FpGrid,
    /// `F_{i+1/2} = left[i] h_i - right[i] h_{i+1}`.
    left: Vec<f64>,
    right: Vec<f64>,
    inv_vol: Vec<f64>,
    max_diffusion: f64,
}

fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x / 2.0
    } else {
        x / x.exp_m1()
    }
}

impl FpOperator {
    pub fn new(grid: &FpGrid, coeffs: Coefficients, scheme: DriftScheme) -> Self {
        let m = grid.n_points;
        let d = grid.spacing();
        let nodes = grid.nodes();
        let node_coeffs: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&x| grid.coefficients_at(coeffs, x))
            .collect();
        let half = |i: usize| if i == 0 || i + 1 == m { 0.5 } else { 1.0 };
        let mut left = vec![0.0; m - 1];
        let mut right = vec![0.0; m - 1];
        for i in 0..m - 1 {
            let (a0, d0) = node_coeffs[i];
            let (a1, d1) = node_coeffs[i + 1];
            match scheme {
                DriftScheme::Upwind => {
                    left[i] = half(i) * a0.max(0.0) + d0 / d;
                    right[i] = -half(i + 1) * a1.min(0.0) + d1 / d;
                }
                DriftScheme::ExponentialFitting => {
                    // F = a h - D_f dh/dx with a = A_f - dD/dx
                    let (af, df) = grid.coefficients_at(coeffs, 0.5 * (nodes[i] + nodes[i + 1]));
                    let a = af - (d1 - d0) / d;
                    if df > 1e-12 * (a.abs() * d).max(1e-300) {
                        let p = a * d / df;
                        left[i] = df / d * bernoulli(-p);
                        right[i] = df / d * bernoulli(p);
                    } else {
                        left[i] = a.max(0.0);
                        right[i] = -a.min(0.0);
                    }
                }
            }
        }
        let inv_vol = grid.weights().iter().map(|v| 1.0 / v).collect();
        let max_diffusion = node_coeffs.iter().map(|c| c.1).fold(0.0, f64::max);
        Self {
            grid: grid.clone(),
            left,
            right,
            inv_vol,
            max_diffusion,
        }
    }

    pub fn grid(&self) -> &FpGrid {
        &self.grid
    }

    /// `dh/dtau` for the given node values.
    pub fn rate(&self, h: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..h.len() - 1 {
            let f = self.left[i] * h[i] - self.right[i] * h[i + 1];
            out[i] -= f;
            out[i + 1] += f;
        }
        for (o, iv) in out.iter_mut().zip(&self.inv_vol) {
            *o *= iv;
        }
    }

    /// Largest explicit step: the diffusive bound `dx^2 / (2 max D2)` and the
    /// step that keeps every diagonal entry of `1 + dt L` non-negative.
    pub fn max_stable_dt(&self) -> f64 {
        let m = self.inv_vol.len();
        let mut diag_max = 0.0_f64;
        for i in 0..m {
            let mut out = 0.0;
            if i + 1 < m {
                out += self.left[i];
            }
            if i > 0 {
                out += self.right[i - 1];
            }
            diag_max = diag_max.max(out * self.inv_vol[i]);
        }
        let d = self.grid.spacing();
        let diffusive = if self.max_diffusion > 0.0 {
            d * d / (2.0 * self.max_diffusion)
        } else {
            f64::INFINITY
        };
        let positive = if diag_max > 0.0 {
            1.0 / diag_max
        } else {
            f64::INFINITY
        };
        diffusive.min(positive)
    }
}

/// Output of [`integrate_fp`].
#[derive(Debug, Clone)]
pub struct FpTrajectory {
    /// Snapshots at `tau = 0, record_every, 2 record_every, ...` and the final time.
    pub states: Vec<FpDensity>,
    /// Step actually used after any automatic halving.
    pub dt_used: f64,
    /// How many times the requested step was halved to satisfy stability.
    pub dt_halvings: u32,
}

impl FpTrajectory {
    pub fn last(&self) -> &FpDensity {
        self.states
            .last()
            .expect("trajectory always holds the initial state")
    }
}

/// Negative excursions below this abort the integration.
pub const NEGATIVE_TOL: f64 = -1e-8;

/// Forward-Euler method-of-lines integration to `t_final` (in `tau`).
pub fn integrate_fp(
    initial: &FpDensity,
    op: &FpOperator,
    t_final: f64,
    dt: f64,
    record_every: Option<f64>,
) -> Result<FpTrajectory> {
    let grid = op.grid();
    if initial.values.len() != grid.n_points {
        return Err(Error::DimensionMismatch {
            expected: grid.n_points,
            found: initial.values.len(),
        });
    }
    if !(dt > 0.0 && t_final >= 0.0) {
        return invalid("dt must be positive and t_final non-negative");
    }
    let limit = op.max_stable_dt();
    let mut dt_used = dt;
    let mut dt_halvings = 0;
    while dt_used > limit {
        dt_used /= 2.0;
        dt_halvings += 1;
    }
    let n_steps = (t_final / dt_used).ceil() as usize;
    let record_stride = record_every.map(|r| ((r / dt_used).round() as usize).max(1));

    let mut h = initial.values.clone();
    let mut rate = vec![0.0; h.len()];
    let tau0 = initial.tau;
    let mut states = vec![initial.clone()];
    for s in 1..=n_steps {
        let step = if s == n_steps {
            t_final - (n_steps - 1) as f64 * dt_used
        } else {
            dt_used
        };
        op.rate(&h, &mut rate);
        for (x, r) in h.iter_mut().zip(&rate) {
            *x += step * r;
        }
        let tau = tau0
            + if s == n_steps {
                t_final
            } else {
                s as f64 * dt_used
            };
        if let Some((index, &value)) = h
            .iter()
            .enumerate()
            .find(|(_, v)| **v < NEGATIVE_TOL || !v.is_finite())
        {
            return Err(Error::NegativeDensity { index, value, tau });
        }
        if s == n_steps || record_stride.is_some_and(|k| s % k == 0) {
            states.push(FpDensity {
                values: h.clone(),
                tau,
            });
        }
    }
    Ok(FpTrajectory {
        states,
        dt_used,
        dt_halvings,
    })
}

/// Exponent `S(phi) = 4 phi + 3 ln(3 - 2 phi)` of the stationary density.
pub fn stationary_exponent(phi: f64) -> f64 {
    4.0 * phi + 3.0 * (3.0 - 2.0 * phi).ln()
}

fn normalize_log_density(grid: &FpGrid, log_h: Vec<f64>) -> FpDensity {
    let max = log_h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = log_h.iter().map(|l| (l - max).exp()).collect();
    let mass = grid.integrate(&values);
    values.iter_mut().for_each(|v| *v /= mass);
    FpDensity {
        values,
        tau: f64::INFINITY,
    }
}

/// `ln([1 - e^{-2N phi}] / phi)` with its `phi -> 0` limit `ln 2N`.
fn ln_boundary_factor(phi: f64, n: f64) -> f64 {
    if phi <= 0.0 {
        (2.0 * n).ln()
    } else {
        (-(-2.0 * n * phi).exp_m1()).ln() - phi.ln()
    }
}

/// Large-`N` stationary density
/// `h(phi) ~ e^{N S(phi)} [1 - e^{-2N phi}] / ((3 - 2 phi) phi)`,
/// evaluated in log space and normalized on the grid.
pub fn stationary_density(grid: &FpGrid) -> FpDensity {
    let n = grid.n_sites as f64;
    let log_h = grid
        .nodes()
        .iter()
        .map(|&x| {
            let phi = grid.to_weight(x) / n;
            n * stationary_exponent(phi) - (3.0 - 2.0 * phi).ln() + ln_boundary_factor(phi, n)
        })
        .collect();
    normalize_log_density(grid, log_h)
}

/// Gaussian approximation
/// `exp(-(8N/3)(phi - 3/4)^2) [1 - e^{-2N phi}] / (phi (3 - 2 phi))`.
pub fn stationary_density_gaussian(grid: &FpGrid) -> FpDensity {
    let n = grid.n_sites as f64;
    let log_h = grid
        .nodes()
        .iter()
        .map(|&x| {
            let phi = grid.to_weight(x) / n;
            -(8.0 * n / 3.0) * (phi - 0.75).powi(2) - (3.0 - 2.0 * phi).ln()
                + ln_boundary_factor(phi, n)
        })
        .collect();
    normalize_log_density(grid, log_h)
}

/// Width of the Gaussian factor in `phi`, `sqrt(3 / 16N)`.
pub fn stationary_width(n_sites: usize) -> f64 {
    (3.0 / (16.0 * n_sites as f64)).sqrt()
}
