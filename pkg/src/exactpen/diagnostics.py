"""Dense reference computations and threshold-penalty diagnostics.

Everything here forms matrices explicitly and is meant for small problems:
ground truth for the matrix-free operators, the threshold penalty value
``sigma*``, first-order KKT checks and curvature on critical cones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .augsys import RankDeficientError, assemble
from .scaling import ScalingParams, build_scaling

__all__ = [
    "DenseOracle",
    "dense_oracles",
    "fd_hessian",
    "fd_steps",
    "ThresholdReport",
    "threshold_sigma",
    "KktReport",
    "verify_kkt",
    "penalty_cone_curvature",
    "refine_kkt_point",
    "range_projector",
    "DerivativeCheck",
    "check_point",
    "derivative_checks",
    "backend_agreement",
    "hessian_check",
]


def range_projector(M, rank_tol=None):
    """Orthogonal projector onto ``range(M)``; raises on rank deficiency."""
    n, m = M.shape
    if m == 0:
        return np.zeros((n, n))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    tol = rank_tol if rank_tol is not None else max(n, m) * np.finfo(float).eps * s[0]
    if s[-1] <= tol:
        raise RankDeficientError(
            f"matrix of {m} columns has numerical rank {int(np.sum(s > tol))}", int(np.sum(s > tol)), m
        )
    return U @ U.T


@dataclass
class DenseOracle:
    """Dense penalty quantities at one point.

    ``Y`` is the n-by-m Jacobian of the nonlinear multiplier estimate, so
    ``Y @ u`` matches the matrix-free ``y_product``.
    """

    phi: float
    y: np.ndarray
    w: np.ndarray
    g_sigma: np.ndarray
    grad: np.ndarray
    Y: np.ndarray
    H_sigma: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    extras: dict = field(default_factory=dict)


def _dense_sprod(problem, x, u):
    """m-by-n matrix of ``S(x, u)``."""
    if problem.m == 0:
        return np.zeros((0, problem.n))
    return np.column_stack([problem.sprod(x, u, e) for e in np.eye(problem.n)])


def dense_oracles(problem, x, sigma, scaling_params=None, linear_block=None, strict=True):
    """Dense evaluation of the penalty and its derivative approximations.

    ``problem`` supplies the penalized constraints; ``linear_block = (B, d)``
    adds unpenalized explicit linear constraints ``B^T x = d``.
    """
    x = np.asarray(x, dtype=float)
    lo, up = problem.bounds.lower, problem.bounds.upper
    params = scaling_params or ScalingParams.default(lo, up)
    sc = build_scaling(x, lo, up, params, strict=strict)
    n, m1 = problem.n, problem.m
    B, d = linear_block if linear_block is not None else (np.zeros((n, 0)), np.zeros(0))
    m2 = B.shape[1]

    f = problem.obj(x)
    g = problem.grad(x)
    c = problem.cons(x)
    A = problem.dense_jac(x)
    C = np.hstack([A, B])
    q = sc.q
    N = C.T @ (q[:, None] * C)
    try:
        cf = sla.cho_factor(N)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("C^T Q C is singular", None, m1 + m2) from exc
    mult = sla.cho_solve(cf, C.T @ (q * g) - sigma * np.concatenate([c, B.T @ x - d]))
    y, w = mult[:m1], mult[m1:]
    g_sigma = g - C @ mult
    H = problem.dense_hl(x, y)
    R = np.diag(sc.qprime * g_sigma)
    S = np.vstack([_dense_sprod(problem, x, q * g_sigma), np.zeros((m2, n))])
    YWt = sla.cho_solve(cf, C.T @ (q[:, None] * H + R - sigma * np.eye(n)) + S)
    Y = YWt[:m1].T
    grad = g - A @ y - Y @ c
    B1 = H - A @ Y.T - Y @ A.T
    Acat = np.hstack([A, np.zeros((n, m2))])
    Pt = Acat @ sla.cho_solve(cf, C.T)
    B2 = H - Pt @ (q[:, None] * H + R - sigma * np.eye(n)) - (H * q[None, :] + R - sigma * np.eye(n)) @ Pt.T
    return DenseOracle(
        phi=float(f - c @ y),
        y=y,
        w=w,
        g_sigma=g_sigma,
        grad=grad,
        Y=Y,
        H_sigma=H,
        B1=0.5 * (B1 + B1.T),
        B2=0.5 * (B2 + B2.T),
        extras={"q": q, "qprime": sc.qprime, "C": C, "YW": YWt.T},
    )


def fd_steps(x, bounds=None):
    """Central-difference steps scaled to ``|x_j|`` and kept inside ``bounds``."""
    x = np.asarray(x, dtype=float)
    h = np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(x))
    if bounds is not None:
        h = np.minimum(h, 0.5 * np.minimum(x - bounds.lower, bounds.upper - x))
    return h


def fd_hessian(grad_fun, x, step=None, bounds=None):
    """Symmetrized finite-difference Jacobian of a gradient map.

    Central differences by default.  With ``bounds``, a component too close
    to a bound for a central step is differenced one-sidedly (second order)
    into the interior instead.
    """
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(fd_steps(x) if step is None else np.asarray(step, dtype=float), x.shape).copy()
    direction = np.zeros(x.size)
    if bounds is not None:
        room_lo, room_up = x - bounds.lower, bounds.upper - x
        tight = np.minimum(room_lo, room_up) <= 4.0 * h
        direction[tight] = np.where(room_lo[tight] <= room_up[tight], 1.0, -1.0)
        h[tight] = np.minimum(h[tight], 0.25 * np.maximum(room_lo, room_up)[tight])
    g0 = None
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        if direction[j] == 0.0:
            e[j] = h[j]
            cols.append((grad_fun(x + e) - grad_fun(x - e)) / (2 * h[j]))
            continue
        e[j] = direction[j] * h[j]
        if g0 is None:
            g0 = grad_fun(x)
        cols.append(direction[j] * (-3.0 * g0 + 4.0 * grad_fun(x + e) - grad_fun(x + 2 * e)) / (2 * h[j]))
    H = np.column_stack(cols)
    return 0.5 * (H + H.T)


# --- threshold penalty ---------------------------------------------------------


@dataclass
class ThresholdReport:
    sigma_star: float
    sigma_bar: float
    mode: str
    eigen_residual: float


def _threshold_operator_dense(problem, x, y, mode, params):
    lo, up = problem.bounds.lower, problem.bounds.upper
    sc = build_scaling(x, lo, up, params, strict=False)
    s = sc.sqrt_q
    A = problem.dense_jac(x)
    P = range_projector(s[:, None] * A)
    H = problem.dense_hl(x, y)
    K = P @ (s[:, None] * H * s[None, :]) @ P
    if mode == "explicit" and problem.linear_indices:
        B = A[:, list(problem.linear_indices)]
        Pb = np.eye(problem.n) - range_projector(s[:, None] * B)
        K = Pb @ K @ Pb
    return 0.5 * (K + K.T)


def threshold_sigma(problem, x, y, mode="implicit", method="dense", scaling_params=None,
                    kkt_tol=1e-6, check_kkt=True, tol=1e-6):
    """Threshold penalty value ``sigma* = max(lambda_max / 2, 0)``.

    ``lambda_max`` is the largest eigenvalue of ``P Q^{1/2} H_L Q^{1/2} P``,
    with ``P`` the orthogonal projector onto ``range(Q^{1/2} A)``.  In
    ``explicit`` mode the operator is additionally sandwiched by the projector
    onto the complement of ``range(Q^{1/2} B)`` for the declared linear
    constraints, which can only lower the value.

    ``method="eigsh"`` applies the projected operator matrix-free (projections
    through augmented-system solves) and computes the top eigenvalue with a
    Lanczos iteration; useful for grid problems.
    """
    if mode not in ("implicit", "explicit"):
        raise ValueError("mode must be 'implicit' or 'explicit'")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, up = problem.bounds.lower, problem.bounds.upper
    params = scaling_params or ScalingParams.default(lo, up)
    if check_kkt:
        z = problem.grad(x) - problem.jprod(x, y)
        rep = verify_kkt(problem, x, y, z, tolerance=kkt_tol)
        if not rep.is_first_order:
            raise ValueError(f"point is not approximately first-order KKT: {rep.summary()}")

    if method == "dense":
        K = _threshold_operator_dense(problem, x, y, mode, params)
        evals, evecs = np.linalg.eigh(K)
        lam, v = evals[-1], evecs[:, -1]
        resid = float(np.linalg.norm(K @ v - lam * v))
    elif method == "eigsh":
        op = _threshold_operator(problem, x, y, mode, params)
        lam_arr, vecs = spla.eigsh(op, k=1, which="LA", tol=tol)
        lam, v = float(lam_arr[0]), vecs[:, 0]
        resid = float(np.linalg.norm(op.matvec(v) - lam * v))
    else:
        raise ValueError("method must be 'dense' or 'eigsh'")
    sigma_bar = 0.5 * float(lam)
    return ThresholdReport(max(sigma_bar, 0.0), sigma_bar, mode, resid)


def _threshold_operator(problem, x, y, mode, params):
    lo, up = problem.bounds.lower, problem.bounds.upper
    sc = build_scaling(x, lo, up, params, strict=False)
    s = sc.sqrt_q
    backend = "sne" if problem.has_jacobian else "craig"
    # projections onto range(Q^{1/2} A) via the symmetric augmented system
    full = assemble(problem, x, sc, backend=backend)

    def proj(sys_, cols, v):
        p, _, _ = sys_.solve(np.zeros(problem.n), cols(v))
        return p

    def p_full(v):
        return proj(full, lambda u: problem.jtprod(x, s * u), v)

    p_lin = None
    if mode == "explicit" and problem.linear_indices:
        # the linear block is small: project with its normal equations
        B, _ = problem.linear_block()
        SB = s[:, None] * B
        factor = sla.cho_factor(SB.T @ SB)

        def p_lin(v):
            return v - SB @ sla.cho_solve(factor, SB.T @ v)

    def matvec(v):
        v = np.ravel(v)
        if p_lin is not None:
            v = p_lin(v)
        u = p_full(v)
        u = s * problem.hlprod(x, y, s * u)
        u = p_full(u)
        if p_lin is not None:
            u = p_lin(u)
        return u

    return spla.LinearOperator((problem.n, problem.n), matvec=matvec, dtype=float)


# --- KKT checks ----------------------------------------------------------------


@dataclass
class KktReport:
    primal_feas: float
    dual_feas: float
    complementarity: float
    sign_conditions: float
    bound_violation: float
    tolerance: float
    is_first_order: bool
    cone_min_curvature: float | None = None

    def summary(self):
        return (
            f"primal {self.primal_feas:.2e}, dual {self.dual_feas:.2e}, "
            f"compl {self.complementarity:.2e}, sign {self.sign_conditions:.2e}, "
            f"bounds {self.bound_violation:.2e}"
        )


def _active_masks(x, bounds, tol):
    lo, up = bounds.lower, bounds.upper
    at_lo = np.isfinite(lo) & (x - lo <= tol * (1.0 + np.abs(lo)))
    at_up = np.isfinite(up) & (up - x <= tol * (1.0 + np.abs(up)))
    return at_lo, at_up


def verify_kkt(problem, x, y, z, tolerance=1e-8, curvature=False):
    """First-order KKT residuals and optional second-order cone curvature.

    Dual feasibility is measured as ``||g - A y - z||_inf``.  Complementarity
    requires ``z_j = 0`` off the active set; the sign conditions require
    ``z_j >= 0`` at lower and ``z_j <= 0`` at upper bounds.  With
    ``curvature=True`` the smallest eigenvalue of the Lagrangian Hessian on
    ``{p : p_j = 0 for active j, A^T p = 0}`` is reported.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    bounds = problem.bounds
    viol = float(max(np.max(bounds.lower - x, initial=0.0), np.max(x - bounds.upper, initial=0.0), 0.0))
    c = problem.cons(x)
    primal = float(np.linalg.norm(c, np.inf)) if c.size else 0.0
    dual = float(np.linalg.norm(problem.grad(x) - problem.jprod(x, y) - z, np.inf))
    at_lo, at_up = _active_masks(x, bounds, tolerance)
    inactive = ~(at_lo | at_up)
    compl = float(np.max(np.abs(z[inactive]), initial=0.0))
    sign = float(max(np.max(-z[at_lo], initial=0.0), np.max(z[at_up], initial=0.0)))
    ok = max(primal, dual, compl, sign, viol) <= tolerance
    report = KktReport(primal, dual, compl, sign, viol, tolerance, bool(ok))
    if curvature:
        free = np.flatnonzero(inactive)
        H = problem.dense_hl(x, y)[np.ix_(free, free)]
        A = problem.dense_jac(x)[free]
        Z = sla.null_space(A.T) if A.size else np.eye(free.size)
        report.cone_min_curvature = float(np.linalg.eigvalsh(Z.T @ H @ Z)[0]) if Z.shape[1] else np.inf
    return report


def penalty_cone_curvature(problem, x, z, sigma, scaling_params=None, linear_block=None, tol=1e-8):
    """Smallest eigenvalue of the penalty Hessian on ``{p : p_j = 0 where z_j != 0}``.

    At a feasible KKT point the dropped third-derivative term vanishes, so
    the B1 matrix from :func:`dense_oracles` is the exact Hessian there.
    With ``linear_block`` the cone is further restricted to ``null(B^T)``.
    """
    orc = dense_oracles(problem, x, sigma, scaling_params, linear_block, strict=False)
    free = np.flatnonzero(np.abs(np.asarray(z)) <= tol)
    Hf = orc.B1[np.ix_(free, free)]
    if linear_block is not None and linear_block[0].shape[1]:
        Z = sla.null_space(linear_block[0][free].T)
        Hf = Z.T @ Hf @ Z
    if Hf.shape[0] == 0:
        return np.inf
    return float(np.linalg.eigvalsh(Hf)[0])


def refine_kkt_point(problem, x, y, active_lower=None, active_upper=None, iterations=20, tol=1e-13):
    """Newton polish of an approximate KKT point with a fixed active set.

    Active variables are pinned to their bounds; the remaining variables and
    the multipliers solve ``g - A y = 0`` (free part), ``c = 0``.  Returns
    ``(x, y, z)``.
    """
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    bounds = problem.bounds
    if active_lower is None or active_upper is None:
        al, au = _active_masks(x, bounds, 1e-6)
        active_lower = al if active_lower is None else active_lower
        active_upper = au if active_upper is None else active_upper
    x[active_lower] = bounds.lower[active_lower]
    x[active_upper] = bounds.upper[active_upper]
    free = np.flatnonzero(~(active_lower | active_upper))
    nf = free.size
    for _ in range(iterations):
        g = problem.grad(x)
        A = problem.dense_jac(x)
        r1 = (g - A @ y)[free]
        r2 = problem.cons(x)
        if max(np.linalg.norm(r1, np.inf), np.linalg.norm(r2, np.inf) if r2.size else 0.0) <= tol:
            break
        H = problem.dense_hl(x, y)[np.ix_(free, free)]
        Af = A[free]
        K = np.block([[H, -Af], [-Af.T, np.zeros((problem.m, problem.m))]])
        step = np.linalg.solve(K, -np.concatenate([r1, -r2]))
        x[free] += step[:nf]
        y += step[nf:]
    z = problem.grad(x) - problem.jprod(x, y)
    z[free] = 0.0
    return x, y, z


# --- derivative consistency ------------------------------------------------------


@dataclass
class DerivativeCheck:
    """Worst relative errors over a set of sample points."""

    gradient_fd: float = 0.0
    adjoint: float = 0.0
    oracle: float = 0.0
    points: int = 0
    tolerances: dict = field(default_factory=lambda: {"gradient_fd": 1e-6, "adjoint": 1e-9, "oracle": 1e-9})

    @property
    def passed(self):
        return all(getattr(self, key) <= tol for key, tol in self.tolerances.items())

    def merge(self, other):
        self.gradient_fd = max(self.gradient_fd, other.gradient_fd)
        self.adjoint = max(self.adjoint, other.adjoint)
        self.oracle = max(self.oracle, other.oracle)
        self.points += other.points


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(1.0, np.linalg.norm(b)))


def _make_penalty(problem, sigma, explicit, **kwargs):
    from .explicitlin import ExplicitPenaltyEvaluator
    from .penalty import PenaltyEvaluator

    if explicit:
        return ExplicitPenaltyEvaluator(problem, sigma, **kwargs)
    return PenaltyEvaluator(problem, sigma, **kwargs)


def check_point(problem, x, sigma, rng, explicit=False, fd_step=None):
    """Compare matrix-free penalty derivatives against FD and dense oracles at ``x``.

    Covers the gradient against central differences of ``phi`` (relative to
    ``max(1, ||grad phi||)``), the adjoint identity ``v.(Y u) = u.(Y^T v)``,
    and the products ``Y u``, ``Y^T v``, B1 ``d`` and B2 ``d`` against
    :func:`dense_oracles`.
    """
    from .model.base import NonlinearPart

    x = np.asarray(x, dtype=float)
    evs = {mode: _make_penalty(problem, sigma, explicit, hessian_mode=mode) for mode in ("B1", "B2")}
    ev = evs["B2"]
    for e in evs.values():
        e.refresh(x)
    grad = ev.gradient()

    h = fd_steps(x, problem.bounds) if fd_step is None else np.full(x.size, float(fd_step))
    probe = _make_penalty(problem, sigma, explicit)
    fd = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h[i]
        fd[i] = (probe.refresh(x + e)[0] - probe.refresh(x - e)[0]) / (2 * h[i])
    grad_err = _rel(fd, grad)

    m = ev.m1
    u = rng.standard_normal(m)
    v = rng.standard_normal(x.size)
    d = rng.standard_normal(x.size)
    Yu = ev.y_product(u)
    Ytv = ev.yt_product(v)
    scale = max(1.0, np.linalg.norm(v) * np.linalg.norm(Yu), np.linalg.norm(u) * np.linalg.norm(Ytv))
    adjoint = abs(v @ Yu - u @ Ytv) / scale

    if explicit:
        orc = dense_oracles(NonlinearPart(problem), x, sigma, linear_block=problem.linear_block())
    else:
        orc = dense_oracles(problem, x, sigma)
    oracle = max(
        abs(ev.phi - orc.phi) / max(1.0, abs(orc.phi)),
        _rel(ev.y, orc.y),
        _rel(grad, orc.grad),
        _rel(Yu, orc.Y @ u),
        _rel(Ytv, orc.Y.T @ v),
        _rel(evs["B1"].hess_product(d), orc.B1 @ d),
        _rel(ev.hess_product(d), orc.B2 @ d),
    )
    return DerivativeCheck(grad_err, float(adjoint), float(oracle), 1)


def derivative_checks(problem, sigma, points=20, seed=0, explicit=False):
    """Run :func:`check_point` at ``points`` random interior points."""
    from .model import random_interior_point

    rng = np.random.default_rng(seed)
    total = DerivativeCheck()
    for _ in range(points):
        x = random_interior_point(problem, rng)
        total.merge(check_point(problem, x, sigma, rng, explicit=explicit))
    return total


def backend_agreement(problem, x, sigma, explicit=False, eta=1e-12):
    """Largest relative disagreement of ``phi`` and ``grad phi`` across solve paths.

    Compares symmetric-direct, symmetric-iterative and unsymmetric-direct
    evaluations at ``x``.
    """
    from .augsys import SolveSettings

    paths = [
        dict(kind="symmetric", backend="sne"),
        dict(kind="symmetric", backend="craig", settings=SolveSettings(eta=eta, max_inner=10 * (problem.n + problem.m))),
        dict(kind="unsymmetric", backend="lu"),
    ]
    values = []
    for kw in paths:
        ev = _make_penalty(problem, sigma, explicit, **kw)
        ev.refresh(x)
        values.append((ev.phi, ev.gradient().copy()))
    phi_ref, g_ref = values[0]
    worst = 0.0
    for phi, g in values[1:]:
        worst = max(worst, abs(phi - phi_ref) / max(1.0, abs(phi_ref)), _rel(g, g_ref))
    return worst


def hessian_check(problem, x, sigma, explicit=False):
    """Relative gaps between the dense B1, B2 and an FD Hessian of ``phi`` at ``x``.

    Meaningful at (nearly) feasible points, where the Gauss-Newton terms
    dropped by B1 and B2 vanish.  Returns ``(err_B1, err_B2)``.
    """
    x = np.asarray(x, dtype=float)
    ev = _make_penalty(problem, sigma, explicit)

    def grad(z):
        ev.refresh(z)
        return ev.gradient().copy()

    H = fd_hessian(grad, x, bounds=problem.bounds)
    ev.refresh(x)
    n = x.size
    cols = {mode: _make_penalty(problem, sigma, explicit, hessian_mode=mode) for mode in ("B1", "B2")}
    errs = []
    for mode in ("B1", "B2"):
        e = cols[mode]
        e.refresh(x)
        M = np.column_stack([e.hess_product(col) for col in np.eye(n)])
        errs.append(float(np.linalg.norm(M - H) / max(1.0, np.linalg.norm(H))))
    return tuple(errs)
