//! Checks that tie the models to each other through the public API.

use scramble_core::circuit::{
    chain_prediction, compare_bins, monte_carlo_weight_distribution, McOptions, StepConvention,
};
use scramble_core::continuum::{
    integrate_fp, stationary_density, Coefficients, DriftScheme, FpDensity, FpGrid, FpOperator,
};
use scramble_core::weight_markov::{
    evolve, initial_distribution, mean_commutator, scrambling_time,
};
use scramble_core::{CircuitParams, TransitionMatrix};

#[test]
fn small_circuit_follows_the_master_equation() {
    let p = CircuitParams::new(4, 0.7).unwrap();
    let mc = monte_carlo_weight_distribution(&p, 3, 4000, 99, &McOptions::default()).unwrap();
    let pred = chain_prediction(&p, 3, StepConvention::ThreeLayer).unwrap();
    let a = compare_bins(&mc, &pred, 1);
    assert_eq!(a.n_bins, 24);
    assert!(a.max_z < 4.5, "{a:?}");
    for (m, h) in mc.mean.iter().zip(&pred) {
        assert!((m.mean_weight() - h.mean_weight()).abs() < 0.05);
    }
}

#[test]
fn chain_relaxes_to_the_continuum_stationary_state() {
    let (n, g) = (80, 0.2);
    let r = TransitionMatrix::build(&CircuitParams::new(n, g).unwrap()).unwrap();
    let last = evolve(&initial_distribution(n).unwrap(), &r, 750, &[])
        .unwrap()
        .last;
    let grid = FpGrid::weight(n, n + 1).unwrap();
    let rho = stationary_density(&grid).values;
    let total: f64 = rho.iter().sum();
    let l1: f64 = last
        .marginal()
        .iter()
        .zip(&rho)
        .map(|(h, a)| (h - a / total).abs())
        .sum();
    assert!(l1 < 0.08, "{l1}");
    // fully scrambled: <C> = 4/3 * (3/4) up to 1/N corrections
    assert!((mean_commutator(&last) - 1.0).abs() < 0.05);
}

#[test]
fn fokker_planck_reaches_the_same_plateau_as_the_chain() {
    let n = 60;
    let grid = FpGrid::dynamical(n, 591).unwrap();
    let op = FpOperator::new(
        &grid,
        Coefficients::LeadingOrder,
        DriftScheme::ExponentialFitting,
    );
    let init = FpDensity::point_mass(&grid, 1.0).unwrap();
    let fp = integrate_fp(&init, &op, 30.0, op.max_stable_dt(), None).unwrap();
    let fp_mean = fp.last().mean_weight(&grid);
    let r = TransitionMatrix::build(&CircuitParams::new(n, 0.2).unwrap()).unwrap();
    let chain = evolve(&initial_distribution(n).unwrap(), &r, 750, &[])
        .unwrap()
        .last;
    assert!(
        (fp_mean / chain.mean_weight() - 1.0).abs() < 0.02,
        "{fp_mean} {}",
        chain.mean_weight()
    );
}

#[test]
fn scrambling_time_grows_with_size_and_shrinks_with_coupling() {
    let t = |n, g| scrambling_time(&CircuitParams::new(n, g).unwrap(), 0.5).unwrap();
    assert!(t(40, 0.2) < t(80, 0.2));
    assert!(t(80, 0.2) < t(160, 0.2));
    assert!(t(80, 0.4) < t(80, 0.2));
}
