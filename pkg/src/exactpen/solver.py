"""Interior trust-region Newton-CG minimization of the penalty function.

The bound-constrained problem ``min phi(x)  s.t.  l <= x <= u`` is solved
with an affine-scaling trust-region method in the style of Coleman and Li:
each iteration builds a quadratic model in the variables ``s = D s_hat``,
where ``D`` shrinks directions that point toward a nearby bound, solves it
approximately with Steihaug's truncated CG, and keeps iterates strictly
interior with a fraction-to-boundary rule.  Hessian products come from the
evaluator's Gauss-Newton approximation, so every model product costs two
augmented-system solves and no factorization.

With ``explicit_linear=True`` the linear constraints are kept out of the
penalty and every step is projected onto ``null(B^T)``, so a feasible start
stays feasible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .augsys import InnerSolveError, RankDeficientError, SolveSettings
from .explicitlin import ExplicitPenaltyEvaluator
from .model.base import CountedProblem, EvalCounters
from .penalty import PenaltyEvaluator
from .scaling import InteriorityError, ScalingParams

__all__ = ["SolverConfig", "SolveReport", "minimize", "dual_estimate", "sigma_heuristic", "STATUSES"]

log = logging.getLogger(__name__)

STATUSES = ("converged", "unbounded", "iteration-limit", "linear-solver-failure")
_LINEAR_FAILURES = (RankDeficientError, InnerSolveError, np.linalg.LinAlgError)


@dataclass
class SolverConfig:
    """Options for :func:`minimize`.  Defaults keep sigma constant."""

    sigma: float = 1.0
    epsilon: float = 1e-8
    eta: float = 1e-10
    termination: str = "residual"
    hessian_mode: str = "B2"
    delta0: float = 1.0
    tau_boundary: float = 0.995
    max_iterations: int = 500
    unbounded_floor: float = -1e12
    sigma_update: str = "off"
    explicit_linear: bool = False
    backend: str = "sne"
    kind: str = "symmetric"
    preconditioner: str = "auto"
    sigma_min_bound: float | None = None
    max_inner: int = 1000
    capped_scaling: bool = False
    max_cg: int | None = None
    sigma_max: float = 1e8
    stagnation_window: int = 10

    def validate(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        for name in ("epsilon", "eta", "delta0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.tau_boundary < 1.0:
            raise ValueError("tau_boundary must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.termination not in ("residual", "error"):
            raise ValueError("termination must be 'residual' or 'error'")
        if self.sigma_update not in ("off", "heuristic"):
            raise ValueError("sigma_update must be 'off' or 'heuristic'")
        if not self.unbounded_floor < 0:
            raise ValueError("unbounded_floor must be negative")

    def solve_settings(self):
        return SolveSettings(
            eta=self.eta,
            criterion=self.termination,
            sigma_min_bound=self.sigma_min_bound,
            max_inner=self.max_inner,
            preconditioner=self.preconditioner,
        )


@dataclass
class SolveReport:
    status: str
    iterations: int
    counters: EvalCounters
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sigma: float
    phi: float
    f: float
    primal_residual: float
    dual_residual: float
    stationarity: float
    eps_p: float
    eps_d: float
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list = field(default_factory=list)
    message: str = ""
    n_solves: int = 0
    cg_iterations: int = 0
    sigma_updates: int = 0

    @property
    def converged(self):
        return self.status == "converged"

    def to_dict(self):
        out = asdict(self)
        out["counters"] = self.counters.as_dict()
        for key in ("x", "y", "z", "w"):
            out[key] = np.asarray(out[key]).tolist()
        out["history"] = [list(h) for h in self.history]
        return out


def dual_estimate(evaluator, x=None):
    """Bound-multiplier estimate ``z = grad phi`` (minus ``B w`` with a linear block)."""
    if x is not None and (evaluator.state is None or not np.array_equal(evaluator.x, x)):
        evaluator.refresh(x)
    z = evaluator.gradient()
    if evaluator.m2:
        z = z - evaluator.B @ evaluator.state.w
    return z


def sigma_heuristic(c_history, stationarity, eps_p, eps_d, sigma, window=10, sigma_max=1e8):
    """New sigma when the constraint norm stagnates, otherwise ``sigma``.

    Fires when ``||c||`` has not halved over the last ``window`` accepted
    steps, is still above ``eps_p``, and the penalty is already nearly
    stationary (``stationarity <= sqrt(eps_d)``).
    """
    if len(c_history) <= window:
        return sigma
    c_now, c_then = c_history[-1], c_history[-1 - window]
    if c_now <= eps_p or stationarity > math.sqrt(eps_d) or c_now < 0.5 * c_then:
        return sigma
    return min(10.0 * sigma, sigma_max)


class _Scaler:
    """Affine scaling ``D`` and the diagonal curvature term ``C``."""

    def __init__(self, x, grad, bounds):
        lo, up = bounds.lower, bounds.upper
        dist = np.where(grad < 0, up - x, x - lo)  # distance toward the bound the gradient pushes to
        v = np.minimum(np.abs(dist), 1.0)
        v[~np.isfinite(dist)] = 1.0
        self.d = np.sqrt(v)
        self.c = np.where(v < 1.0, np.abs(grad), 0.0)


class _NullProjector:
    """Projector onto ``null((D B)^T)`` in the scaled space."""

    def __init__(self, B, d):
        self.DB = d[:, None] * B
        self.factor = sla.cho_factor(self.DB.T @ self.DB)

    def __call__(self, v):
        return v - self.DB @ sla.cho_solve(self.factor, self.DB.T @ v)


def _to_boundary(s, p, delta):
    """``tau >= 0`` with ``||s + tau p|| = delta``."""
    pp = p @ p
    sp_ = s @ p
    ss = s @ s
    disc = sp_ * sp_ + pp * (delta * delta - ss)
    return (-sp_ + math.sqrt(max(disc, 0.0))) / pp


def _steihaug(gh, hprod, delta, tol, max_iter, proj=None):
    """Truncated CG for ``min gh.s + s.H s/2, ||s|| <= delta``.

    Returns ``(s, Hs, iterations, reason)``; ``Hs`` is accumulated so the
    model value is available without an extra product.
    """
    n = gh.size
    s = np.zeros(n)
    Hs = np.zeros(n)
    r = -gh if proj is None else proj(-gh)
    p = r.copy()
    rr = r @ r
    if math.sqrt(rr) <= tol:
        return s, Hs, 0, "small-gradient"
    for k in range(1, max_iter + 1):
        Hp = hprod(p)
        if proj is not None:
            Hp = proj(Hp)
        curv = p @ Hp
        if curv <= 1e-16 * (p @ p):
            tau = _to_boundary(s, p, delta)
            return s + tau * p, Hs + tau * Hp, k, "negative-curvature"
        alpha = rr / curv
        if np.linalg.norm(s + alpha * p) >= delta:
            tau = _to_boundary(s, p, delta)
            return s + tau * p, Hs + tau * Hp, k, "boundary"
        s = s + alpha * p
        Hs = Hs + alpha * Hp
        r = r - alpha * Hp
        rr_new = r @ r
        if math.sqrt(rr_new) <= tol:
            return s, Hs, k, "converged"
        p = r + (rr_new / rr) * p
        rr = rr_new
    return s, Hs, max_iter, "max-iterations"


def _step_to_bounds(x, s, bounds):
    """Largest ``t`` with ``x + t s`` inside the closed bounds."""
    t = np.inf
    neg = s < 0
    pos = s > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.any(neg):
            t = min(t, np.min((bounds.lower[neg] - x[neg]) / s[neg]))
        if np.any(pos):
            t = min(t, np.min((bounds.upper[pos] - x[pos]) / s[pos]))
    return t


def _clip_step(x, s, bounds, tau, B=None, D=None):
    """Clip only the components of ``s`` that would pass the fraction-to-boundary limit.

    With an explicit linear block ``B`` the remaining components are corrected
    (minimum scaled norm) so ``B^T s`` stays zero.  Returns ``None`` when the
    step needs no clipping or the correction leaves the box.
    """
    lo_room = np.where(np.isfinite(bounds.lower), -tau * (x - bounds.lower), -np.inf)
    up_room = np.where(np.isfinite(bounds.upper), tau * (bounds.upper - x), np.inf)
    clipped = np.clip(s, lo_room, up_room)
    hit = clipped != s
    if not np.any(hit):
        return None
    if B is not None and B.shape[1]:
        free = ~hit
        resid = B.T @ clipped
        Bf = B[free]
        d2 = D[free] ** 2
        lam = np.linalg.lstsq(Bf.T @ (d2[:, None] * Bf), -resid, rcond=None)[0]
        clipped[free] += d2 * (Bf @ lam)
        if np.linalg.norm(B.T @ clipped) > 1e-10 * (1.0 + np.linalg.norm(clipped)):
            return None
        if np.any(clipped < lo_room) or np.any(clipped > up_room):
            return None
    return clipped


def _make_evaluator(problem, config, sigma):
    lo, up = problem.bounds.lower, problem.bounds.upper
    kwargs = dict(
        hessian_mode=config.hessian_mode,
        kind=config.kind,
        backend=config.backend,
        settings=config.solve_settings(),
        scaling_params=ScalingParams.default(lo, up, capped=config.capped_scaling),
    )
    if config.explicit_linear and problem.linear_indices:
        return ExplicitPenaltyEvaluator(problem, sigma, **kwargs)
    return PenaltyEvaluator(problem, sigma, **kwargs)


def minimize(problem, config=None, x0=None):
    """Minimize the exact penalty of ``problem`` over its bounds.

    Returns a :class:`SolveReport`.  Operator counts are collected by wrapping
    ``problem`` unless it is already a :class:`~exactpen.model.CountedProblem`.
    """
    config = config or SolverConfig()
    config.validate()
    counted = problem if isinstance(problem, CountedProblem) else CountedProblem(problem)
    x_start = np.array(problem.x0 if x0 is None else x0, dtype=float)
    if not problem.bounds.is_interior(x_start):
        raise InteriorityError("starting point must be strictly inside the bounds")

    sigma = float(config.sigma)
    sigma_updates = 0
    total_its = 0
    total_cg = 0
    history = []
    while True:
        outcome = _run(counted, config, sigma, x_start, config.max_iterations - total_its, history)
        total_its += outcome["iterations"]
        total_cg += outcome["cg"]
        status = outcome["status"]
        retry = (
            config.sigma_update == "heuristic"
            and status in ("unbounded", "stagnated")
            and total_its < config.max_iterations
        )
        if not retry:
            break
        if sigma >= config.sigma_max:
            outcome["status"] = "iteration-limit"
            outcome["message"] = f"sigma reached its cap {config.sigma_max:g} without convergence"
            break
        new_sigma = min(10.0 * sigma if sigma > 0 else 1.0, config.sigma_max)
        log.info("raising sigma from %g to %g after %s", sigma, new_sigma, status)
        sigma = new_sigma
        sigma_updates += 1
        if status == "stagnated":
            x_start = outcome["x"]  # continue from the current point
    if outcome["status"] == "stagnated":
        outcome["status"] = "iteration-limit"

    ev = outcome["evaluator"]
    report = SolveReport(
        status=outcome["status"],
        iterations=total_its,
        counters=counted.counters.copy(),
        x=outcome["x"],
        y=outcome["y"],
        z=outcome["z"],
        w=outcome["w"],
        sigma=sigma,
        phi=outcome["phi"],
        f=outcome["f"],
        primal_residual=outcome["primal"],
        dual_residual=outcome["dual"],
        stationarity=outcome["stationarity"],
        eps_p=outcome["eps_p"],
        eps_d=outcome["eps_d"],
        history=history,
        message=outcome["message"],
        n_solves=ev.n_solves if ev is not None else 0,
        cg_iterations=total_cg,
        sigma_updates=sigma_updates,
    )
    return report


def _empty_outcome(x, status, message):
    return dict(
        status=status, message=message, iterations=0, cg=0, x=x, y=np.zeros(0), z=np.zeros_like(x),
        w=np.zeros(0), phi=np.nan, f=np.nan, primal=np.nan, dual=np.nan, stationarity=np.nan,
        eps_p=np.nan, eps_d=np.nan, evaluator=None,
    )


def _run(problem, config, sigma, x0, max_iterations, history):
    bounds = problem.bounds
    ev = _make_evaluator(problem, config, sigma)
    try:
        ev.refresh(x0)
        grad = ev.gradient()
    except _LINEAR_FAILURES as exc:
        return _empty_outcome(x0, "linear-solver-failure", f"evaluation at the start failed: {exc}")

    x = ev.x
    phi0 = ev.phi
    c0 = np.linalg.norm(problem.cons(x), np.inf) if problem.m else 0.0
    g0 = np.linalg.norm(ev.g_sigma, np.inf)
    floor = config.unbounded_floor * (1.0 + abs(phi0))
    explicit = ev.m2 > 0
    delta = config.delta0
    c_history = []
    cg_total = 0
    message = ""
    status = "iteration-limit"
    its = 0

    def measures():
        st = ev.state
        c_full = problem.cons(st.x) if problem.m else np.zeros(0)
        primal = float(np.linalg.norm(c_full, np.inf)) if c_full.size else 0.0
        N = np.minimum(bounds.distance(st.x), 1.0)
        dual = float(np.linalg.norm(N * st.g_sigma, np.inf))
        z = dual_estimate(ev)
        stat = float(np.linalg.norm(N * z, np.inf))
        mult = st.multipliers
        eps_p = config.epsilon * (1.0 + np.linalg.norm(st.x, np.inf) + c0)
        eps_d = config.epsilon * (1.0 + (np.linalg.norm(mult, np.inf) if mult.size else 0.0) + g0)
        return primal, dual, stat, z, eps_p, eps_d

    primal, dual, stat, z, eps_p, eps_d = measures()
    while True:
        history.append((ev.phi, primal, delta))
        c_history.append(primal)
        if (primal <= eps_p and dual <= eps_d) or stat <= eps_d:
            status = "converged"
            break
        if ev.phi < floor:
            status = "unbounded"
            message = f"penalty value {ev.phi:.3e} fell below {floor:.3e}"
            break
        if its >= max_iterations:
            status = "iteration-limit"
            break
        if config.sigma_update == "heuristic":
            if sigma_heuristic(c_history, stat, eps_p, eps_d, sigma, config.stagnation_window, config.sigma_max) != sigma:
                status = "stagnated"
                break
        its += 1

        grad = ev.gradient()
        # with explicit linear constraints the bounds see the reduced gradient
        scal = _Scaler(x, dual_estimate(ev) if explicit else grad, bounds)
        D = scal.d
        gh = D * grad
        proj = _NullProjector(ev.B, D) if explicit else None
        gnorm = np.linalg.norm(gh if proj is None else proj(gh))
        cg_tol = min(0.1, math.sqrt(gnorm)) * gnorm

        def hprod(p):
            return D * ev.hess_product(D * p) + scal.c * p

        max_cg = config.max_cg or max(2 * x.size, 10)
        try:
            sh, Hsh, k, _ = _steihaug(gh, hprod, delta, cg_tol, max_cg, proj)
        except _LINEAR_FAILURES as exc:
            status = "linear-solver-failure"
            message = f"Hessian product failed: {exc}"
            break
        cg_total += k
        s = D * sh
        t_max = _step_to_bounds(x, s, bounds)
        alpha = 1.0 if t_max > 1.0 / config.tau_boundary else config.tau_boundary * t_max
        alpha = min(alpha, 1.0)
        s = alpha * s
        pred = -(alpha * (gh @ sh) + 0.5 * alpha * alpha * (sh @ Hsh))
        step_norm = alpha * np.linalg.norm(sh)
        if alpha < 1.0:
            # a single blocking component should not shorten the whole step
            alt = _clip_step(x, D * sh, bounds, config.tau_boundary, ev.B if explicit else None, D)
            if alt is not None:
                alt_h = alt / D
                try:
                    slope, curv = gh @ alt_h, alt_h @ hprod(alt_h)
                except _LINEAR_FAILURES:
                    slope, curv = 0.0, 0.0
                if slope < 0:
                    # best point of the model along the clipped direction
                    t_alt = 1.0 if curv <= 0 else min(1.0, -slope / curv)
                    alt_pred = -(t_alt * slope + 0.5 * t_alt * t_alt * curv)
                    if alt_pred > pred:
                        s, pred, step_norm = t_alt * alt, alt_pred, t_alt * np.linalg.norm(alt_h)

        x_trial = x + s
        snap = ev.snapshot()
        accepted = False
        if pred > 0 and bounds.is_interior(x_trial):
            try:
                phi_trial = ev.refresh(x_trial)[0]
                ared = snap.phi - phi_trial
                noise = 10.0 * np.finfo(float).eps * max(1.0, abs(snap.phi))
                rho = 1.0 if (abs(ared) <= noise and abs(pred) <= noise) else ared / pred
                accepted = rho > 1e-4 and ared >= -noise
            except _LINEAR_FAILURES + (InteriorityError,) as exc:
                log.debug("trial evaluation failed: %s", exc)
                rho = -1.0
        else:
            rho = -1.0

        log.debug(
            "it %d phi %.10g |c| %.2e delta %.2e step %.2e alpha %.3f rho %.3f cg %d",
            its, snap.phi, primal, delta, step_norm, alpha, rho, k,
        )
        if accepted:
            x = ev.x
            if rho > 0.75 and step_norm >= 0.8 * delta:
                delta = max(delta, 2.5 * step_norm)
            elif rho < 0.25:
                delta = 0.25 * step_norm
            try:
                ev.gradient()
            except _LINEAR_FAILURES as exc:
                status = "linear-solver-failure"
                message = f"gradient evaluation failed: {exc}"
                break
            primal, dual, stat, z, eps_p, eps_d = measures()
        else:
            ev.restore(snap)
            delta = 0.25 * (step_norm if step_norm > 0 else delta)
            if delta < 1e-14 * (1.0 + np.linalg.norm(x)):
                status = "iteration-limit"
                message = "trust region collapsed"
                break

    st = ev.state
    return dict(
        status=status,
        message=message,
        iterations=its,
        cg=cg_total,
        x=st.x.copy(),
        y=st.y.copy(),
        w=st.w.copy(),
        z=z,
        phi=st.phi,
        f=st.f,
        primal=primal,
        dual=dual,
        stationarity=stat,
        eps_p=eps_p,
        eps_d=eps_d,
        evaluator=ev,
    )
