import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exactpen.augsys import (
    InnerSolveError,
    RankDeficientError,
    SolverConfigurationError,
    SolveSettings,
    assemble,
)
from exactpen.model import PROBLEMS, make_problem, random_interior_point
from exactpen.scaling import build_scaling

from conftest import QuadraticProblem

DIRECT = [("symmetric", "sne"), ("symmetric", "lu"), ("unsymmetric", "sne"), ("unsymmetric", "lu")]
ALL = DIRECT + [("symmetric", "craig")]
TIGHT = SolveSettings(eta=1e-13, max_inner=2000)


def system_at(problem, x, kind, backend, settings=None, linear_block=None):
    sc = build_scaling(x, problem.bounds.lower, problem.bounds.upper)
    return assemble(problem, x, sc, kind=kind, backend=backend, settings=settings or TIGHT,
                    linear_block=linear_block)


def dense_matrix(problem, x, kind, transpose=False):
    sc = build_scaling(x, problem.bounds.lower, problem.bounds.upper)
    C = problem.dense_jac(x)
    n, m = C.shape
    if kind == "symmetric":
        M = sc.sqrt_q[:, None] * C
        return np.block([[np.eye(n), M], [M.T, np.zeros((m, m))]])
    K = np.block([[np.eye(n), C], [C.T * sc.q[None, :], np.zeros((m, m))]])
    return K.T if transpose else K


def orthonormal_problem(n=6, m=3, seed=0):
    rng = np.random.default_rng(seed)
    A, _ = np.linalg.qr(rng.standard_normal((n, m)))
    return QuadraticProblem(np.eye(n), np.zeros(n), A, np.zeros(m))


@pytest.mark.parametrize("kind, backend", ALL)
def test_scalar_example(kind, backend):
    p = make_problem("toy1d")
    sysm = system_at(p, np.array([2.0]), kind, backend)
    top, bot, _ = sysm.solve(np.zeros(1), np.ones(1))
    assert top[0] == pytest.approx(1.0, abs=1e-12)
    assert bot[0] == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("kind, backend", ALL)
def test_orthonormal_columns(kind, backend):
    p = orthonormal_problem()
    u = np.array([1.0, -2.0, 0.5])
    sysm = system_at(p, np.zeros(6), kind, backend)
    top, bot, _ = sysm.solve(np.zeros(6), u)
    assert np.allclose(bot, -u, atol=1e-12)
    assert np.allclose(top, p.A @ u, atol=1e-12)


def small(name):
    return make_problem(name, {"N": 5} if name.endswith("-fd") else {})


@pytest.mark.parametrize("name", PROBLEMS)
@pytest.mark.parametrize("kind, backend", ALL)
def test_round_trip(name, kind, backend):
    p = small(name)
    rng = np.random.default_rng(11)
    x = random_interior_point(p, rng)
    K = dense_matrix(p, x, kind)
    s0 = rng.standard_normal(p.n + p.m)
    rhs = K @ s0
    sysm = system_at(p, x, kind, backend)
    top, bot, _ = sysm.solve(rhs[: p.n], rhs[p.n :])
    got = np.concatenate([top, bot])
    assert np.linalg.norm(got - s0) <= 1e-8 * max(1.0, np.linalg.norm(s0)) * np.linalg.cond(K) ** 0.5


@pytest.mark.parametrize("backend", ["sne", "lu"])
def test_transposed_unsymmetric(backend):
    p = small("hs113")
    rng = np.random.default_rng(2)
    x = random_interior_point(p, rng)
    K = dense_matrix(p, x, "unsymmetric", transpose=True)
    rhs = rng.standard_normal(p.n + p.m)
    sysm = system_at(p, x, "unsymmetric", backend)
    top, bot, _ = sysm.solve(rhs[: p.n], rhs[p.n :], transpose=True)
    assert np.allclose(np.concatenate([top, bot]), np.linalg.solve(K, rhs), rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("name", PROBLEMS)
def test_direct_and_iterative_agree(name):
    p = small(name)
    rng = np.random.default_rng(5)
    x = random_interior_point(p, rng)
    a, b = rng.standard_normal(p.n), rng.standard_normal(p.m)
    eta = 1e-10
    ref = np.concatenate(system_at(p, x, "symmetric", "sne").solve(a, b)[:2])
    it = system_at(p, x, "symmetric", "craig", SolveSettings(eta=eta, max_inner=5000))
    got = np.concatenate(it.solve(a, b)[:2])
    assert np.linalg.norm(got - ref) <= max(1e-8, 10 * eta) * max(1.0, np.linalg.norm(ref)) * 1e2


@pytest.mark.parametrize("name", ["randqp", "hs113", "invpoisson-fd"])
def test_residual_mode_meets_tolerance(name):
    p = small(name)
    rng = np.random.default_rng(8)
    x = random_interior_point(p, rng)
    for eta in (1e-2, 1e-6, 1e-10):
        sysm = system_at(p, x, "symmetric", "craig", SolveSettings(eta=eta, max_inner=5000))
        _, _, stats = sysm.solve(rng.standard_normal(p.n), rng.standard_normal(p.m))
        assert stats.residual <= eta * stats.rhs_norm


def test_error_mode_bound_is_certified():
    p = small("randqp")
    rng = np.random.default_rng(1)
    x = random_interior_point(p, rng)
    a, b = rng.standard_normal(p.n), rng.standard_normal(p.m)
    exact = np.concatenate(system_at(p, x, "symmetric", "sne").solve(a, b)[:2])
    sysm = system_at(p, x, "symmetric", "craig",
                     SolveSettings(eta=1e-4, criterion="error", preconditioner="exact"))
    assert sysm.sigma_min_bound == 1.0
    top, bot, stats = sysm.solve(a, b)
    # the exact preconditioner makes the P-norm of the q-error equal to ||M dq||
    sc = build_scaling(x, p.bounds.lower, p.bounds.upper)
    M = sc.sqrt_q[:, None] * p.dense_jac(x)
    dp, dq = top - exact[: p.n], bot - exact[p.n :]
    err = np.sqrt(dp @ dp + np.linalg.norm(M @ dq) ** 2)
    assert err <= stats.error_bound * (1 + 1e-8) + 1e-14
    assert stats.error_bound <= 1e-4 * np.sqrt(top @ top + np.linalg.norm(M @ bot) ** 2)


def test_error_mode_needs_a_bound():
    p = small("randqp")
    x = random_interior_point(p, np.random.default_rng(0))
    with pytest.raises(SolverConfigurationError):
        system_at(p, x, "symmetric", "craig", SolveSettings(criterion="error", preconditioner="none"))


def test_problem_preconditioner_implies_bound():
    p = make_problem("invpoisson-fd", {"N": 6})
    x = random_interior_point(p, np.random.default_rng(0))
    sysm = system_at(p, x, "symmetric", "craig", SolveSettings(criterion="error"))
    assert sysm.preconditioner == "problem" and sysm.sigma_min_bound == 1.0


def test_iteration_cap_carries_best_iterate():
    p = small("hs113")
    rng = np.random.default_rng(3)
    x = random_interior_point(p, rng)
    sysm = system_at(p, x, "symmetric", "craig", SolveSettings(eta=1e-14, max_inner=2, preconditioner="none"))
    with pytest.raises(InnerSolveError) as info:
        sysm.solve(rng.standard_normal(p.n), rng.standard_normal(p.m))
    assert info.value.iterations == 2 and info.value.p.shape == (p.n,) and info.value.q.shape == (p.m,)


@pytest.mark.parametrize("kind, backend", ALL)
def test_rank_deficiency_detected(kind, backend):
    p = make_problem("randqp", {"dependent": True})
    x = random_interior_point(p, np.random.default_rng(0))
    with pytest.raises(RankDeficientError):
        sysm = system_at(p, x, kind, backend)
        sysm.solve(np.ones(p.n), np.ones(p.m))


@pytest.mark.parametrize("kind, backend", DIRECT)
def test_refinement_never_increases_residual(kind, backend):
    p = small("hs113")
    rng = np.random.default_rng(4)
    x = random_interior_point(p, rng)
    _, _, stats = system_at(p, x, kind, backend).solve(rng.standard_normal(p.n), rng.standard_normal(p.m))
    assert stats.residual <= stats.residual_before_refinement


def test_warm_start_reaches_same_solution():
    p = small("invpoisson-fd")
    rng = np.random.default_rng(6)
    x = random_interior_point(p, rng)
    a, b = rng.standard_normal(p.n), rng.standard_normal(p.m)
    sysm = system_at(p, x, "symmetric", "craig", SolveSettings(eta=1e-12))
    top, bot, _ = sysm.solve(a, b)
    top2, bot2, stats = sysm.solve(a, b, q0=bot + 1e-3 * rng.standard_normal(p.m))
    assert np.allclose(bot2, bot, atol=1e-8) and np.allclose(top2, top, atol=1e-8)


def test_configuration_errors():
    p = small("randqp")
    x = random_interior_point(p, np.random.default_rng(0))
    with pytest.raises(SolverConfigurationError):
        system_at(p, x, "unsymmetric", "craig")
    with pytest.raises(SolverConfigurationError):
        system_at(p, x, "symmetric", "qr")
    with pytest.raises(SolverConfigurationError):
        SolveSettings(eta=-1.0).validate()
    with pytest.raises(ValueError):
        system_at(p, x, "symmetric", "sne").solve(np.ones(3), np.ones(p.m))


@given(
    seed=st.integers(0, 2**32 - 1),
    q=arrays(float, 7, elements=st.floats(0.05, 3.0)),
)
def test_backends_match_dense_solve(seed, q):
    rng = np.random.default_rng(seed)
    n, m = 7, 3
    A = rng.standard_normal((n, m))
    lower = -q  # x = 0 then has q_j = min(q_j, inf) for a one-sided bound
    prob = QuadraticProblem(np.eye(n), np.zeros(n), A, np.zeros(m), lower=lower)
    x = np.zeros(n)
    a, b = rng.standard_normal(n), rng.standard_normal(m)
    K = dense_matrix(prob, x, "symmetric")
    expected = np.linalg.solve(K, np.concatenate([a, b]))
    for kind, backend in [("symmetric", "sne"), ("symmetric", "lu"), ("symmetric", "craig")]:
        got = np.concatenate(system_at(prob, x, kind, backend).solve(a, b)[:2])
        assert np.allclose(got, expected, rtol=1e-7, atol=1e-7 * np.linalg.norm(expected))
