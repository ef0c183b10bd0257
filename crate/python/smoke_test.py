"""Smoke test for the dtsm Python extension.

Build and run from the repository root:

    cargo build -p dtsm-py --release
    cp target/release/libdtsm_py.so python/dtsm.so
    python3 python/smoke_test.py
"""

import json
import math
import pathlib

import dtsm


def main():
    lq = dtsm.Problem([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    ric = dtsm.solve_dtare(lq)
    root = 0.125 + math.sqrt(0.125**2 + 1.0)
    assert abs(ric["p"][0][0] - root) < 1e-9, ric

    eig = dtsm.pencil_eigenvalues(lq)
    mus = sorted(abs(z) for z in eig["finite"])
    assert eig["hyperbolic"] and eig["reciprocal"]
    assert abs(mus[0] * mus[1] - 1.0) < 1e-12
    assert abs(eig["stable_graph"][0][0] - root) < 1e-9

    p2 = dtsm.Problem(
        [[0.5]], [[1.0]], [[1.0]], [[1.0]],
        f_terms=[(0, 0.1, [2], [0])],
        epsilon=0.2,
    )
    man = dtsm.solve_manifold(p2)
    assert man.contraction_estimate < 1.0
    assert man.fixed_point_residual <= 2e-11
    assert man.invariance() <= 1e-8
    r1, r2 = man.dpe_residuals()
    assert r1 <= 1e-6 and r2 <= 1e-6
    x = [0.05]
    assert abs(man.phi(x)[0] - (man.p[0][0] * x[0] + man.psi(x)[0])) < 1e-15
    assert man.cost(x) > 0.0

    oracle = dtsm.value_iteration(p2)
    assert oracle.monotone
    assert man.oracle_gap(oracle, 0.1) <= 5e-4
    assert abs(oracle.policy(x)[0] - man.feedback(x)[0]) <= 2e-3

    config = pathlib.Path(__file__).resolve().parent.parent / "configs" / "unit_circle.toml"
    code, results = dtsm.run_pipeline(config.read_text())
    report = json.loads(results)
    statuses = {s["stage"]: s["status"] for s in report["stages"]}
    assert code == 1 and statuses["manifold"] == "skipped", statuses

    try:
        dtsm.Problem([[0.5]], [[1.0]], [[1.0]], [[-1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("indefinite R accepted")

    print("dtsm smoke test passed")


if __name__ == "__main__":
    main()
