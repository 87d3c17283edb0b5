"""Acceptance criteria, one test per criterion.

Each test records a ``PASS`` or ``FAIL`` line with the measured numbers; the
lines are repeated in the terminal summary of the pytest run.
"""

import json
import time

import numpy as np
import pytest

from exactpen import SolverConfig, make_problem, minimize
from exactpen.cli import main
from exactpen.diagnostics import (
    backend_agreement,
    derivative_checks,
    hessian_check,
    penalty_cone_curvature,
    refine_kkt_point,
    threshold_sigma,
)
from exactpen.model import PROBLEMS, random_interior_point
from exactpen.model.base import NonlinearPart
from exactpen.scaling import default_omega, q_derivative, q_value

VERDICTS = []
PDE_GRID = 8


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def cli_json(capsys, *argv):
    code = main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def library(name, grid=PDE_GRID):
    return make_problem(name, {"N": grid} if name.endswith("-fd") else {})


def test_criterion_1_scalar_threshold(capsys):
    start = time.perf_counter()
    code, data = cli_json(capsys, "threshold", "--problem", "toy1d")
    elapsed = time.perf_counter() - start
    err = abs(data["sigma_star_implicit"] - 0.5)
    ok = code == 0 and err <= 1e-10 and elapsed < 1.0
    assert verdict(1, ok, f"sigma*={data['sigma_star_implicit']:.12g} |err|={err:.1e} time={elapsed:.2f}s")


def test_criterion_2_hs113_thresholds(capsys):
    start = time.perf_counter()
    code, data = cli_json(capsys, "threshold", "--problem", "hs113")
    elapsed = time.perf_counter() - start
    imp, exp = data["sigma_star_implicit"], data["sigma_star_explicit"]
    ok = (
        code == 0
        and abs(imp - 6.61) <= 0.1 * 6.61
        and abs(exp - 3.39) <= 0.1 * 3.39
        and exp <= imp + 1e-10
        and elapsed < 10.0
    )
    assert verdict(2, ok, f"implicit={imp:.5f} explicit={exp:.5f} time={elapsed:.2f}s")


def test_criterion_3_threshold_dichotomy():
    toy = make_problem("toy1d")
    above = minimize(toy, SolverConfig(sigma=1.0))
    below = minimize(toy, SolverConfig(sigma=0.25))
    hs = make_problem("hs113")
    explicit = minimize(hs, SolverConfig(sigma=7.0, explicit_linear=True))
    weak = {s: minimize(hs, SolverConfig(sigma=s, max_iterations=500)).status for s in (1.0, 2.0)}
    ok = (
        above.converged
        and abs(above.x[0] - 1.0) <= 1e-8
        and below.status == "unbounded"
        and explicit.converged
        and all(s != "converged" for s in weak.values())
    )
    detail = (
        f"toy1d sigma=1 x={above.x[0]:.10f}; sigma=0.25 {below.status}; "
        f"hs113 explicit sigma=7 {explicit.status} f={explicit.f:.7f}; implicit {weak}"
    )
    assert verdict(3, ok, detail)


# converged points for the Hessian comparison: (problem, sigma, solver options)
HESSIAN_CASES = [
    ("toy1d", 1.0, {}),
    ("toy1d-bounded", 1.0, {"capped_scaling": True}),
    ("randqp", 3.0, {}),
    ("hs113", 10.0, {}),
    ("invpoisson-fd", 0.1, {}),
    ("poisson-boltzmann-fd", 1.0, {}),
]


def test_criterion_4_derivative_consistency():
    start = time.perf_counter()
    worst = {"fd": 0.0, "adjoint": 0.0, "oracle": 0.0, "hessian": 0.0}
    failures = []
    for name in PROBLEMS:
        p = library(name)
        runs = [derivative_checks(p, 1.0, points=20, seed=0)]
        if p.linear_indices:
            runs.append(derivative_checks(p, 1.0, points=20, seed=0, explicit=True))
        for res in runs:
            worst["fd"] = max(worst["fd"], res.gradient_fd)
            worst["adjoint"] = max(worst["adjoint"], res.adjoint)
            worst["oracle"] = max(worst["oracle"], res.oracle)
            if not res.passed:
                failures.append(name)
    hess_cases = [(n, s, o, False) for n, s, o in HESSIAN_CASES] + [("hs113", 7.0, {}, True)]
    for name, sigma, opts, explicit in hess_cases:
        p = library(name)
        r = minimize(p, SolverConfig(sigma=sigma, explicit_linear=explicit, **opts))
        if not r.converged:
            failures.append(f"{name} did not converge")
            continue
        e1, e2 = hessian_check(p, r.x, sigma, explicit=explicit)
        worst["hessian"] = max(worst["hessian"], e1, e2)
    elapsed = time.perf_counter() - start
    ok = (
        not failures
        and worst["fd"] <= 1e-6
        and worst["adjoint"] <= 1e-9
        and worst["oracle"] <= 1e-9
        and worst["hessian"] <= 1e-4
        and elapsed < 60.0
    )
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" time={elapsed:.1f}s"
    if failures:
        detail += f" failures={failures}"
    assert verdict(4, ok, detail)


def _kkt_points():
    yield "toy1d", make_problem("toy1d"), np.array([1.0]), np.array([1.0]), np.array([0.0])
    for seed in range(20):
        p = make_problem("randqp", {"seed": seed})
        yield f"randqp[{seed}]", p, *p.solution
    p = make_problem("hs113")
    r = minimize(p, SolverConfig(sigma=10.0))
    yield "hs113", p, *refine_kkt_point(p, r.x, r.y)


def test_criterion_5_curvature_at_threshold():
    above_min, below_max = np.inf, -np.inf
    bad = []
    for name, p, x, y, z in _kkt_points():
        modes = ["implicit"] + (["explicit"] if p.linear_indices else [])
        for mode in modes:
            star = threshold_sigma(p, x, y, mode).sigma_star
            if mode == "explicit":
                prob, block = NonlinearPart(p), p.linear_block()
            else:
                prob, block = p, None
            hi = penalty_cone_curvature(prob, x, z, 1.1 * star + 0.01, linear_block=block)
            above_min = min(above_min, hi)
            if hi < -1e-8:
                bad.append(f"{name}/{mode} above")
            if star > 0.01:
                lo = penalty_cone_curvature(prob, x, z, 0.5 * star, linear_block=block)
                below_max = max(below_max, lo)
                if lo > -1e-6:
                    bad.append(f"{name}/{mode} below")
    ok = not bad
    detail = f"min curvature above={above_min:.3e} max curvature below={below_max:.3e}"
    if bad:
        detail += f" violations={bad}"
    assert verdict(5, ok, detail)


PDE_RUNS = [("invpoisson-fd", 1e-2), ("poisson-boltzmann-fd", 1e-1)]
ETAS = (1e-4, 1e-6, 1e-8, 1e-10)


def test_criterion_6_pde_runs():
    start = time.perf_counter()
    failures = []
    trend = {}
    for name, sigma in PDE_RUNS:
        p = make_problem(name, {"N": 16})
        for criterion in ("residual", "error"):
            n_av = {}
            for eta in ETAS:
                cfg = SolverConfig(sigma=sigma, eta=eta, termination=criterion, epsilon=1e-8,
                                   backend="craig", preconditioner="problem")
                r = minimize(p, cfg)
                if not r.converged:
                    failures.append(f"{name}/{criterion}/{eta:g}: {r.status}")
                n_av[eta] = r.counters.n_Av
            trend[f"{name}/{criterion}"] = (n_av[1e-4], n_av[1e-10])
            if not n_av[1e-10] > n_av[1e-4]:
                failures.append(f"{name}/{criterion}: n_Av did not grow")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 300.0
    detail = " ".join(f"{k} nAv {a}->{b}" for k, (a, b) in trend.items()) + f" time={elapsed:.1f}s"
    if failures:
        detail += f" failures={failures}"
    assert verdict(6, ok, detail)


def test_criterion_7_backend_equivalence():
    worst = 0.0
    rng = np.random.default_rng(0)
    for name in PROBLEMS:
        p = library(name)
        for _ in range(3):
            x = random_interior_point(p, rng)
            worst = max(worst, backend_agreement(p, x, 1.0, eta=1e-12))
            if p.linear_indices:
                worst = max(worst, backend_agreement(p, x, 1.0, explicit=True, eta=1e-12))
    assert verdict(7, worst <= 1e-8, f"max relative gap={worst:.2e}")


# dyadic (lower, upper, omega) triples, so seam locations are exact floats
SEAM_CASES = [(0.0, 4.0, 1.0), (-3.0, 5.0, 1.0), (1.0, 2.0, 0.5), (-0.5, 0.25, 0.375)]
H_FD = 2.0**-27


def _fd(x, lo, up, omega):
    return (q_value(x + H_FD, lo, up, omega) - q_value(x - H_FD, lo, up, omega)) / (2 * H_FD)


def test_criterion_8_scaling_functions():
    seam_ok = True
    for lo, up, omega in SEAM_CASES:
        for x in (0.5 * (up + lo - omega), 0.5 * (up + lo + omega)):
            t = 2.0 * x - up - lo
            band = 0.5 * (up - lo) - 0.25 * omega - t * t / (4.0 * omega)
            side = min(x - lo, up - x)
            side_slope = 1.0 if x - lo < up - x else -1.0
            seam_ok &= band == side and -t / omega == side_slope
    inf = np.inf
    domains = [(0.0, 4.0), (-2.0, 1.0), (0.0, inf), (-inf, 3.0), (-inf, inf)]
    worst = 0.0
    for lo, up in domains:
        omega = default_omega(np.array([lo]), np.array([up]))[0]
        if np.isfinite(lo) and np.isfinite(up):
            xs = lo + (up - lo) * np.arange(1, 1024) / 1024.0
        elif np.isfinite(lo):
            xs = lo + np.arange(1, 1024) / 64.0
        elif np.isfinite(up):
            xs = up - np.arange(1, 1024) / 64.0
        else:
            xs = (np.arange(1, 1024) - 512) / 32.0
        for x in xs:
            worst = max(worst, abs(q_derivative(x, lo, up, omega) - _fd(x, lo, up, omega)))
    ok = seam_ok and worst <= 1e-8
    assert verdict(8, ok, f"seams exact={seam_ok} max |q' - fd|={worst:.1e}")
