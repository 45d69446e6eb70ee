use pyo3::prelude::*;

use fastscramble::fastscramble;

#[test]
fn module_runs_inside_an_embedded_interpreter() {
    pyo3::append_to_inittab!(fastscramble);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c"
import fastscramble as fs
p = fs.CircuitParams(6, 0.4)
r = p.transition_matrix()
assert all(abs(sum(row[j] for row in r) - 1) < 1e-9 for j in range(12))
evo = fs.evolve_weights(p, 5)
assert len(evo.mean_weight) == 6 and evo.mean_weight[0] == 1.0
assert abs(fs.scrambling_time(fs.CircuitParams(50, 0.3)) - fs.scrambling_time(fs.CircuitParams(50, 0.3), 0.5)) == 0
try:
    fs.ChainParams(30)
    raise SystemExit('oversized chain accepted')
except ValueError:
    pass
",
            None,
            None,
        )
        .unwrap();
    });
}
