import json
import math

import numpy as np
import pytest

import dastab


def test_dlyap_scalar():
    x = dastab.dlyap(np.array([[0.9]]), np.eye(1))
    assert x[0, 0] == pytest.approx(1.0 / 0.19, rel=1e-12)


def test_dare_scalar_matches_closed_form():
    sys = dastab.LinearSystem(np.array([[2.0]]), np.array([[1.0]]))
    p, k = dastab.solve_dare(sys, dastab.CostSpec.identity(1, 1))
    # p = 1 + 4p / (1 + p)  =>  p^2 - 4p - 1 = 0
    assert p[0, 0] == pytest.approx(2.0 + math.sqrt(5.0), rel=1e-10)
    assert abs(2.0 + k[0, 0]) < 1.0


def test_cartpole_linearization_matches_lqr_gain():
    a, b = dastab.jacobian_linearization(dastab.cartpole())
    sys = dastab.LinearSystem(a, b)
    _, k = dastab.solve_dare(sys, dastab.CostSpec.scaled_identity(4, 1, 0.05))
    np.testing.assert_allclose(k.ravel(), [0.8997, -8.8786, 3.6539, -7.8355], atol=1e-3)


def test_anneal_linear_stabilizes():
    sys = dastab.LinearSystem(np.array([[1.5, 0.3], [0.0, 1.2]]), np.eye(2))
    cost = dastab.CostSpec.identity(2, 2)
    out = dastab.anneal_linear(sys, cost)
    assert out["finished"]
    assert dastab.spectral_radius(sys.a + sys.b @ out["gain"]) < 1.0
    p, _ = dastab.solve_dare(sys, cost)
    assert dastab.lqr_cost(sys, cost, out["gain"]) - np.trace(p) <= 2.0


def test_sampled_queries_are_deterministic():
    pole = dastab.cartpole()
    cost = dastab.CostSpec.scaled_identity(4, 1, 0.05)
    k = np.zeros((1, 4))
    a = dastab.eps_eval(pole, k, 0.5, cost, samples=20, horizon=50, seed=3)
    b = dastab.eps_eval(pole, k, 0.5, cost, samples=20, horizon=50, seed=3)
    assert a == b
    v, g = dastab.eps_grad(pole, k, 0.5, cost, samples=20, horizon=50, seed=3)
    assert g.shape == (1, 4)
    assert v == pytest.approx(a[0], rel=1e-12)


def test_counterexample():
    w = dastab.reward_shaping_counterexample(0.225)
    assert w["rho_damped"] < 1.0 < w["rho_undamped"]


def test_errors_carry_kind():
    unstable = dastab.LinearSystem(np.array([[3.0]]), np.array([[1.0]]))
    with pytest.raises(dastab.Error) as info:
        dastab.lqr_cost(unstable, dastab.CostSpec.identity(1, 1), np.zeros((1, 1)))
    assert info.value.kind == "Unstable"


def test_run_experiment_linear(tmp_path):
    cfg = {
        "system": {"type": "linear", "A": [[1.1, 0.0], [0.5, 0.9]], "B": [[1.0], [0.0]]},
        "out_dir": str(tmp_path),
    }
    out = dastab.run_experiment(json.dumps(cfg))
    assert out["finished"]
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "gain.csv").exists()
