//! Python module `fastscramble`: thin wrappers returning plain lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use scramble_core::circuit::{
    chain_prediction, monte_carlo_weight_distribution, McOptions, StepConvention,
};
use scramble_core::classical::{
    default_window, lyapunov_estimate, perturbation_growth as core_growth, GrowthOptions,
    OscillatorParams,
};
use scramble_core::continuum::{
    integrate_fp, stationary_density as core_stationary, Coefficients, DriftScheme, FpDensity,
    FpGrid, FpOperator,
};
use scramble_core::spin_chain::{
    entanglement_entropy_quench, level_statistics as core_level_statistics, otoc as core_otoc,
    Boundary, ChainParams, KrylovOptions, LevelStatisticsOptions,
};
use scramble_core::weight_markov::{
    evolve, initial_distribution, scrambling_time as core_scrambling_time,
};
use scramble_core::{CircuitParams, TransitionMatrix};

fn py_err(e: scramble_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Random-circuit parameters with per-pair angle `coupling / n_sites**coupling_exponent`.
#[pyclass(name = "CircuitParams", frozen, get_all)]
struct PyCircuitParams {
    n_sites: usize,
    coupling: f64,
    coupling_exponent: f64,
}

impl PyCircuitParams {
    fn core(&self) -> PyResult<CircuitParams> {
        CircuitParams::with_exponent(self.n_sites, self.coupling, self.coupling_exponent)
            .map_err(py_err)
    }
}

#[pymethods]
impl PyCircuitParams {
    #[new]
    #[pyo3(signature = (n_sites, coupling, coupling_exponent = 0.5))]
    fn new(n_sites: usize, coupling: f64, coupling_exponent: f64) -> PyResult<Self> {
        let p =
            CircuitParams::with_exponent(n_sites, coupling, coupling_exponent).map_err(py_err)?;
        Ok(Self {
            n_sites: p.n_sites,
            coupling: p.coupling,
            coupling_exponent: p.coupling_exponent,
        })
    }

    fn pair_angle(&self) -> PyResult<f64> {
        Ok(self.core()?.pair_angle())
    }

    /// The `2N x 2N` transition matrix as a list of rows (row = target state).
    fn transition_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        let r = TransitionMatrix::build(&self.core()?).map_err(py_err)?;
        Ok(r.entries().chunks(r.dim()).map(<[f64]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "CircuitParams(n_sites={}, coupling={}, coupling_exponent={})",
            self.n_sites, self.coupling, self.coupling_exponent
        )
    }
}

/// Per-step observables of the weight chain started from a single-site operator.
#[pyclass(frozen, get_all)]
struct WeightEvolution {
    mean_weight: Vec<f64>,
    mean_commutator: Vec<f64>,
    /// `h(w)` for `w = 0..=N` after the last step.
    final_marginal: Vec<f64>,
}

#[pyfunction]
fn evolve_weights(params: &PyCircuitParams, steps: usize) -> PyResult<WeightEvolution> {
    let p = params.core()?;
    let r = TransitionMatrix::build(&p).map_err(py_err)?;
    let init = initial_distribution(p.n_sites).map_err(py_err)?;
    let evo = evolve(&init, &r, steps, &[]).map_err(py_err)?;
    Ok(WeightEvolution {
        mean_weight: evo.observables.iter().map(|o| o.mean_weight).collect(),
        mean_commutator: evo.observables.iter().map(|o| o.mean_commutator).collect(),
        final_marginal: evo.last.marginal(),
    })
}

/// First (interpolated) step at which the mean squared commutator reaches `threshold`.
#[pyfunction]
#[pyo3(signature = (params, threshold = 0.5))]
fn scrambling_time(params: &PyCircuitParams, threshold: f64) -> PyResult<f64> {
    core_scrambling_time(&params.core()?, threshold).map_err(py_err)
}

/// Monte-Carlo and master-equation `h_t(w, w1)`, each as `[t][2w + w1]`
/// (`h(N, 0)` and `h(0, 1)` are impossible and reported as 0).
#[pyclass(frozen, get_all)]
struct CircuitComparison {
    mc_mean: Vec<Vec<f64>>,
    mc_sem: Vec<Vec<f64>>,
    chain: Vec<Vec<f64>>,
}

#[pyfunction]
#[pyo3(signature = (params, steps, realizations, seed = 0))]
fn circuit_monte_carlo(
    py: Python<'_>,
    params: &PyCircuitParams,
    steps: usize,
    realizations: usize,
    seed: u64,
) -> PyResult<CircuitComparison> {
    let p = params.core()?;
    let n = p.n_sites;
    let (mc, chain) = py
        .detach(|| {
            let mc = monte_carlo_weight_distribution(
                &p,
                steps,
                realizations,
                seed,
                &McOptions::default(),
            )?;
            let chain = chain_prediction(&p, steps, StepConvention::ThreeLayer)?;
            Ok((mc, chain))
        })
        .map_err(py_err)?;
    let grid = |get: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..=n).flat_map(|w| [get(w, 0), get(w, 1)]).collect()
    };
    let index = |w, w1| scramble_core::weight_markov::state_index(n, w, w1);
    Ok(CircuitComparison {
        mc_mean: mc
            .mean
            .iter()
            .map(|d| grid(&|w, w1| d.get(w, w1)))
            .collect(),
        mc_sem: mc
            .sem
            .iter()
            .map(|s| grid(&|w, w1| index(w, w1).map_or(0.0, |i| s[i])))
            .collect(),
        chain: chain.iter().map(|d| grid(&|w, w1| d.get(w, w1))).collect(),
    })
}

/// Analytic stationary density on `n_points` nodes of `w in [0, N]`.
#[pyfunction]
fn stationary_density(n_sites: usize, n_points: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = FpGrid::weight(n_sites, n_points).map_err(py_err)?;
    let w = grid.nodes().iter().map(|&x| grid.to_weight(x)).collect();
    Ok((w, core_stationary(&grid).values))
}

/// Fokker-Planck `<w>` from a unit mass at `w0`, sampled every `record_every` in `g^2 t`.
#[pyfunction]
#[pyo3(signature = (n_sites, tau_final, record_every = 0.1, n_points = 991, w0 = 1.0))]
fn fokker_planck_mean_weight(
    py: Python<'_>,
    n_sites: usize,
    tau_final: f64,
    record_every: f64,
    n_points: usize,
    w0: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = FpGrid::weight(n_sites, n_points).map_err(py_err)?;
    let op = FpOperator::new(
        &grid,
        Coefficients::LeadingOrder,
        DriftScheme::ExponentialFitting,
    );
    let init = FpDensity::point_mass(&grid, w0).map_err(py_err)?;
    let traj = py
        .detach(|| {
            integrate_fp(
                &init,
                &op,
                tau_final,
                op.max_stable_dt(),
                Some(record_every),
            )
        })
        .map_err(py_err)?;
    Ok(traj
        .states
        .iter()
        .map(|s| (s.tau, s.mean_weight(&grid)))
        .unzip())
}

/// Ising chain `J sum ZZ + h_x sum X + h_z sum Z` plus the global `g`-term.
#[pyclass(name = "ChainParams", frozen, get_all)]
struct PyChainParams {
    n_sites: usize,
    ising_j: f64,
    field_x: f64,
    field_z: f64,
    global_g: f64,
    periodic: bool,
}

#[pymethods]
impl PyChainParams {
    #[new]
    #[pyo3(signature = (n_sites, ising_j = 1.0, field_x = 1.05, field_z = 0.0, global_g = 0.0, periodic = false))]
    fn new(
        n_sites: usize,
        ising_j: f64,
        field_x: f64,
        field_z: f64,
        global_g: f64,
        periodic: bool,
    ) -> PyResult<Self> {
        let s = Self {
            n_sites,
            ising_j,
            field_x,
            field_z,
            global_g,
            periodic,
        };
        s.core().validate().map_err(py_err)?;
        Ok(s)
    }
}

impl PyChainParams {
    fn core(&self) -> ChainParams {
        ChainParams {
            n_sites: self.n_sites,
            ising_j: self.ising_j,
            field_x: self.field_x,
            field_z: self.field_z,
            global_g: self.global_g,
            boundary: if self.periodic {
                Boundary::Periodic
            } else {
                Boundary::Open
            },
        }
    }
}

/// `F(r, t)` for each 1-based site in `sites`, as `[site][time]`.
#[pyfunction]
#[pyo3(signature = (params, sites, times, seed = 0, n_states = 1))]
fn otoc(
    py: Python<'_>,
    params: &PyChainParams,
    sites: Vec<usize>,
    times: Vec<f64>,
    seed: u64,
    n_states: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let p = params.core();
    py.detach(|| {
        core_otoc(
            &p,
            &sites,
            &times,
            seed,
            n_states,
            &KrylovOptions::default(),
        )
    })
    .map(|r| r.values)
    .map_err(py_err)
}

/// Half-chain entropy (nats) after a quench from the `+y` product state.
#[pyfunction]
fn entanglement_entropy(
    py: Python<'_>,
    params: &PyChainParams,
    times: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let p = params.core();
    py.detach(|| entanglement_entropy_quench(&p, &times, &KrylovOptions::default()))
        .map_err(py_err)
}

/// Pooled mean gap ratio and its bootstrap standard error.
#[pyfunction]
#[pyo3(signature = (params, seed = 0))]
fn level_statistics(py: Python<'_>, params: &PyChainParams, seed: u64) -> PyResult<(f64, f64)> {
    let p = params.core();
    let opts = LevelStatisticsOptions {
        seed,
        ..LevelStatisticsOptions::default()
    };
    py.detach(|| core_level_statistics(&p, &opts))
        .map(|l| (l.mean_ratio, l.sem))
        .map_err(py_err)
}

/// Ensemble-mean `|dq_r(t)|` as `[time][site]` plus the pooled Lyapunov rate
/// (`None` when no site traverses the growth window).
#[pyclass(frozen, get_all)]
struct Growth {
    times: Vec<f64>,
    mean_abs_dq: Vec<Vec<f64>>,
    lyapunov: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (n_osc, omega3, t_final, epsilon = 1e-5, omega1 = 1.0, omega2 = 1.0, n_ensemble = 100, record_every = 100, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn perturbation_growth(
    py: Python<'_>,
    n_osc: usize,
    omega3: f64,
    t_final: f64,
    epsilon: f64,
    omega1: f64,
    omega2: f64,
    n_ensemble: usize,
    record_every: usize,
    seed: u64,
) -> PyResult<Growth> {
    let p = OscillatorParams::new(n_osc, omega1, omega2, omega3, epsilon);
    p.validate().map_err(py_err)?;
    let opts = GrowthOptions {
        t_final,
        dt: p.reference_dt(),
        record_every,
        n_ensemble,
        seed,
    };
    let heat = py.detach(|| core_growth(&p, &opts)).map_err(py_err)?;
    let lyapunov = lyapunov_estimate(&heat, default_window(epsilon))
        .ok()
        .map(|l| l.pooled);
    Ok(Growth {
        times: heat.times,
        mean_abs_dq: heat.mean,
        lyapunov,
    })
}

#[pymodule]
pub fn fastscramble(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCircuitParams>()?;
    m.add_class::<PyChainParams>()?;
    m.add_class::<WeightEvolution>()?;
    m.add_class::<CircuitComparison>()?;
    m.add_class::<Growth>()?;
    m.add_function(wrap_pyfunction!(evolve_weights, m)?)?;
    m.add_function(wrap_pyfunction!(scrambling_time, m)?)?;
    m.add_function(wrap_pyfunction!(circuit_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_density, m)?)?;
    m.add_function(wrap_pyfunction!(fokker_planck_mean_weight, m)?)?;
    m.add_function(wrap_pyfunction!(otoc, m)?)?;
    m.add_function(wrap_pyfunction!(entanglement_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(level_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_growth, m)?)?;
    Ok(())
}
