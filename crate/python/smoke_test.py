"""Quick end-to-end check of the fastscramble extension.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
"""

import math

import fastscramble as fs


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    p = fs.CircuitParams(10, 0.5)
    r = p.transition_matrix()
    assert len(r) == 20 and all(len(row) == 20 for row in r)
    for j in range(20):
        assert close(sum(row[j] for row in r), 1.0, 1e-9), "column not stochastic"

    evo = fs.evolve_weights(fs.CircuitParams(100, 0.1), 3000)
    assert evo.mean_weight[0] == 1.0
    assert 70.0 < evo.mean_weight[-1] < 80.0
    assert close(sum(evo.final_marginal), 1.0, 1e-9)

    ts = fs.scrambling_time(fs.CircuitParams(100, 0.1))
    assert 300 < ts < 1500, ts

    w, rho = fs.stationary_density(100, 101)
    peak = w[max(range(len(rho)), key=rho.__getitem__)]
    assert close(peak, 75.0, 1.0), peak

    mc = fs.circuit_monte_carlo(fs.CircuitParams(4, 0.4), 2, 400, seed=1)
    assert len(mc.mc_mean) == 3 and len(mc.chain[2]) == 10

    chain = fs.ChainParams(8, global_g=-1.0)
    f = fs.otoc(chain, [8], [0.0, 0.5], seed=3, n_states=2)
    assert close(f[0][0], 1.0, 1e-9)

    s = fs.entanglement_entropy(fs.ChainParams(8, field_z=0.5), [0.0, 1.0])
    assert abs(s[0]) < 1e-12 and 0.0 < s[1] < 4 * math.log(2)

    g = fs.perturbation_growth(10, 2.0, 5.0, n_ensemble=4)
    assert len(g.mean_abs_dq[0]) == 10 and close(g.mean_abs_dq[0][0], 1e-5, 1e-12)

    try:
        fs.CircuitParams(1, 0.1)
    except ValueError:
        pass
    else:
        raise AssertionError("n_sites = 1 must be rejected")

    print("fastscramble smoke test passed")


if __name__ == "__main__":
    main()
