import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exactpen import PenaltyEvaluator, SolverConfig, dual_estimate, make_problem, minimize
from exactpen.scaling import InteriorityError
from exactpen.solver import sigma_heuristic

HS113_F = 24.3062091


def solve(name, params=None, **cfg):
    return minimize(make_problem(name, params or {}), SolverConfig(**cfg))


class TestScalar:
    def test_converges_above_threshold(self):
        r = solve("toy1d", sigma=1.0)
        assert r.converged
        assert r.x[0] == pytest.approx(1.0, abs=1e-8)
        assert r.y[0] == pytest.approx(1.0, abs=1e-8)
        assert r.iterations <= 10

    def test_reports_unbounded_below_threshold(self):
        r = solve("toy1d", sigma=0.25)
        assert r.status == "unbounded"

    def test_heuristic_recovers(self):
        r = solve("toy1d", sigma=0.25, sigma_update="heuristic")
        assert r.converged and r.sigma > 0.5 and r.sigma_updates >= 1
        assert r.x[0] == pytest.approx(1.0, abs=1e-8)

    def test_bounded_variant_with_capped_scaling(self):
        r = solve("toy1d-bounded", sigma=1.0, capped_scaling=True)
        assert r.converged and r.x[0] == pytest.approx(1.0, abs=1e-8)


def test_random_qp_reaches_planted_solution():
    p = make_problem("randqp", {"seed": 3})
    r = minimize(p, SolverConfig(sigma=3.0))
    xs, ys, _ = p.solution
    assert r.converged
    assert np.allclose(r.x, xs, atol=1e-6)
    assert np.allclose(r.y, ys, atol=1e-5)


@pytest.mark.parametrize("explicit, sigma", [(False, 10.0), (True, 7.0)])
def test_hs113(explicit, sigma):
    p = make_problem("hs113")
    r = minimize(p, SolverConfig(sigma=sigma, explicit_linear=explicit))
    assert r.converged
    assert r.f == pytest.approx(HS113_F, abs=1e-5)
    assert p.bounds.is_interior(r.x)
    if explicit:
        B, d = p.linear_block()
        assert np.linalg.norm(B.T @ r.x - d, np.inf) <= 1e-10


@pytest.mark.parametrize("name, params, sigma", [
    ("hs113", {}, 10.0),
    ("randqp", {"seed": 5}, 3.0),
    ("invpoisson-fd", {"N": 6}, 0.1),
])
def test_penalty_values_never_increase(name, params, sigma):
    r = solve(name, params, sigma=sigma, max_iterations=60)
    phis = [h[0] for h in r.history]
    assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(phis, phis[1:]))


def test_iterative_backend_matches_direct():
    a = solve("hs113", sigma=10.0)
    b = solve("hs113", sigma=10.0, backend="craig", eta=1e-12)
    assert b.converged and b.f == pytest.approx(a.f, abs=1e-6)


def test_report_contents_serialize():
    r = solve("toy1d", sigma=1.0)
    d = r.to_dict()
    json.dumps(d)
    assert d["status"] == "converged" and d["counters"]["n_fg"] >= 1
    assert r.n_solves > 0 and len(r.history) == r.iterations + 1
    assert r.primal_residual <= r.eps_p or r.stationarity <= r.eps_d


def test_iteration_limit():
    r = solve("hs113", sigma=10.0, max_iterations=2)
    assert r.status == "iteration-limit" and r.iterations == 2


def test_start_must_be_interior():
    p = make_problem("toy1d-bounded")
    with pytest.raises(InteriorityError):
        minimize(p, SolverConfig(), x0=p.bounds.lower.copy())


@pytest.mark.parametrize("field, value", [
    ("sigma", -1.0), ("epsilon", 0.0), ("eta", -1e-3), ("tau_boundary", 1.0),
    ("termination", "maybe"), ("sigma_update", "always"), ("max_iterations", -1),
])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        SolverConfig(**{field: value}).validate()


def test_dual_estimate_is_penalty_gradient():
    p = make_problem("toy1d")
    ev = PenaltyEvaluator(p, 1.0)
    z = dual_estimate(ev, np.array([2.0]))
    assert z[0] == pytest.approx(1.0)
    assert dual_estimate(ev, np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-14)


class TestSigmaHeuristic:
    def test_waits_for_a_full_window(self):
        assert sigma_heuristic([1.0] * 5, 0.0, 1e-8, 1e-8, 2.0, window=10) == 2.0

    def test_fires_on_stagnation(self):
        assert sigma_heuristic([1.0] * 12, 0.0, 1e-8, 1e-8, 2.0, window=10) == 20.0

    def test_quiet_while_progressing(self):
        hist = [2.0 ** -k for k in range(12)]
        assert sigma_heuristic(hist, 0.0, 1e-8, 1e-8, 2.0, window=10) == 2.0

    def test_quiet_when_not_stationary(self):
        assert sigma_heuristic([1.0] * 12, 1.0, 1e-8, 1e-8, 2.0, window=10) == 2.0

    def test_respects_cap(self):
        assert sigma_heuristic([1.0] * 12, 0.0, 1e-8, 1e-8, 5.0, window=10, sigma_max=8.0) == 8.0

    @given(st.lists(st.floats(1e-6, 1e3), min_size=0, max_size=30), st.floats(0.01, 100))
    def test_never_decreases(self, hist, sigma):
        assert sigma_heuristic(hist, 0.0, 1e-8, 1e-8, sigma) >= sigma


@given(seed=st.integers(0, 500))
def test_random_qps_converge_with_interior_iterates(seed):
    p = make_problem("randqp", {"seed": seed})
    r = minimize(p, SolverConfig(sigma=3.0, sigma_update="heuristic", max_iterations=200))
    assert r.converged
    assert p.bounds.is_interior(r.x)
    xs = p.solution[0]
    assert np.linalg.norm(r.x - xs, np.inf) <= 1e-5 * (1 + np.linalg.norm(xs, np.inf))
