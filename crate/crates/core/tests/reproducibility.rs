//! Seeded results must not depend on the number of worker threads.

use scramble_core::circuit::{monte_carlo_weight_distribution, McOptions};
use scramble_core::classical::{perturbation_growth, GrowthOptions, OscillatorParams};
use scramble_core::spin_chain::{otoc, ChainParams, KrylovOptions};
use scramble_core::CircuitParams;

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn monte_carlo_is_thread_count_independent() {
    let p = CircuitParams::new(4, 0.5).unwrap();
    let run = || monte_carlo_weight_distribution(&p, 2, 300, 5, &McOptions::default()).unwrap();
    let (a, b) = (with_threads(1, run), with_threads(3, run));
    for (x, y) in a.mean.iter().zip(&b.mean) {
        assert_eq!(x.values(), y.values());
    }
    assert_eq!(a.sem, b.sem);
}

#[test]
fn oscillator_ensemble_is_thread_count_independent() {
    let p = OscillatorParams::new(8, 1.0, 1.0, 2.0, 1e-5);
    let opts = GrowthOptions {
        t_final: 2.0,
        dt: p.max_dt(),
        record_every: 20,
        n_ensemble: 40,
        seed: 8,
    };
    let run = || perturbation_growth(&p, &opts).unwrap();
    assert_eq!(with_threads(1, run).mean, with_threads(4, run).mean);
}

#[test]
fn otoc_is_thread_count_independent() {
    let p = ChainParams::non_local(8, 1.0, 1.05, -1.0);
    let run = || {
        otoc(
            &p,
            &[4, 8],
            &[0.0, 0.5, 1.0],
            2,
            2,
            &KrylovOptions::default(),
        )
        .unwrap()
    };
    assert_eq!(with_threads(1, run).values, with_threads(2, run).values);
}
