"""Smooth exact penalty ``phi(x) = f(x) - c(x)^T y(x)`` and its derivatives.

The multiplier estimate ``y(x)`` solves the shifted, Q-weighted least-squares
problem ``min_y ||Q^{1/2}(g - A y)||^2 + 2 sigma c^T y``, equivalently

    A^T Q A y = A^T Q g - sigma c.

Every quantity below comes from the one augmented system assembled in
:meth:`PenaltyEvaluator.refresh`:

* ``gradient``      ``g_sigma - Y c`` (one extra solve)
* ``y_product``     ``Y u`` with ``Y`` the Jacobian of ``y(x)`` (one solve)
* ``yt_product``    ``Y^T v`` (one solve)
* ``hess_product``  Gauss-Newton approximations B1 or B2 (two solves)

Internally the constraint matrix is ``C = [A B]`` where ``B`` holds explicit
linear constraints that are not penalized; ``B`` is empty for the plain
penalty.  See :mod:`exactpen.explicitlin`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augsys import SolveSettings, assemble
from .scaling import ScalingParams, build_scaling

__all__ = ["PenaltyState", "PenaltyEvaluator", "HESSIAN_MODES"]

HESSIAN_MODES = ("B1", "B2")


@dataclass
class PenaltyState:
    """Everything cached at one point; replaced as a whole by ``refresh``."""

    x: np.ndarray
    scaling: object
    f: float
    g: np.ndarray
    c: np.ndarray
    c_lin: np.ndarray
    y: np.ndarray
    w: np.ndarray
    g_sigma: np.ndarray
    g_partial: np.ndarray
    phi: float
    system: object
    grad_phi: np.ndarray | None = None

    @property
    def multipliers(self):
        return np.concatenate([self.y, self.w])


class PenaltyEvaluator:
    """Penalty value and derivative products for one optimization trajectory.

    Parameters
    ----------
    problem:
        An :class:`~exactpen.model.NlpProblem`.
    sigma:
        Penalty parameter (``sigma >= 0``).
    hessian_mode:
        ``"B1"`` or ``"B2"`` (default).  B2 needs no second-Jacobian products.
    kind:
        ``"symmetric"`` (default) or ``"unsymmetric"`` augmented system.
    backend:
        ``"sne"`` (default), ``"lu"`` or ``"craig"``.
    settings:
        :class:`~exactpen.augsys.SolveSettings` for the iterative backend.
    scaling_params:
        Optional :class:`~exactpen.scaling.ScalingParams`.
    warm_start:
        Start iterative multiplier solves from the previous estimate.
    """

    def __init__(
        self,
        problem,
        sigma,
        hessian_mode="B2",
        kind="symmetric",
        backend="sne",
        settings=None,
        scaling_params=None,
        warm_start=True,
    ):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if hessian_mode not in HESSIAN_MODES:
            raise ValueError(f"hessian_mode must be one of {HESSIAN_MODES}")
        self.problem = problem
        self.sigma = float(sigma)
        self.hessian_mode = hessian_mode
        self.kind = kind
        self.backend = backend
        self.settings = settings or SolveSettings()
        bounds = problem.bounds
        self.scaling_params = scaling_params or ScalingParams.default(bounds.lower, bounds.upper)
        self.scaling_params.validate(bounds.lower, bounds.upper)
        self.warm_start = warm_start
        self.n_solves = 0
        self.state = None
        self._init_linear_block(None, None)

    # explicit linear block; empty for the plain penalty
    def _init_linear_block(self, B, d):
        n = self.problem.n
        self.B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float)
        self.d = np.zeros(0) if d is None else np.asarray(d, dtype=float)
        self.m1 = self.problem.m
        self.m2 = self.B.shape[1]

    # --- state management --------------------------------------------------
    def snapshot(self):
        """Opaque handle to the current cached state."""
        return self.state

    def restore(self, snap):
        """Reinstate a snapshot without re-factorizing."""
        self.state = snap

    def set_sigma(self, sigma):
        """Change sigma; the cached point must be refreshed again."""
        self.sigma = float(sigma)
        self.state = None

    def _require(self):
        if self.state is None:
            raise RuntimeError("evaluator has not been refreshed at a point")
        return self.state

    def _solve(self, top, bottom, transpose=False, q0=None, system=None):
        self.n_solves += 1
        system = self.state.system if system is None else system
        return system.solve(top, bottom, transpose=transpose, q0=q0)

    # --- evaluation --------------------------------------------------------
    def refresh(self, x):
        """Evaluate at ``x``; returns ``(phi, y, g_sigma)``."""
        prob = self.problem
        x = np.array(x, dtype=float)
        scaling = build_scaling(x, prob.bounds.lower, prob.bounds.upper, self.scaling_params)
        f = prob.obj(x)
        g = np.asarray(prob.grad(x), dtype=float)
        c = np.asarray(prob.cons(x), dtype=float)
        c_lin = self.B.T @ x - self.d
        system = assemble(
            prob,
            x,
            scaling,
            kind=self.kind,
            backend=self.backend,
            settings=self.settings,
            linear_block=self.B if self.m2 else None,
        )
        q0 = None
        if self.warm_start and self.backend == "craig" and self.state is not None:
            q0 = self.state.multipliers
        bottom = self.sigma * np.concatenate([c, c_lin])
        if self.kind == "symmetric":
            _, mult, _ = self._solve(scaling.sqrt_q * g, bottom, q0=q0, system=system)
        else:
            p, mult, _ = self._solve(g, bottom, system=system)
        y, w = mult[: self.m1], mult[self.m1 :]
        if self.kind == "symmetric":
            g_partial = g - prob.jprod(x, y) if self.m1 else g.copy()
            g_sigma = g_partial - self.B @ w
        else:
            g_sigma = p
            g_partial = g_sigma + self.B @ w
        phi = float(f - c @ y)
        self.state = PenaltyState(x, scaling, float(f), g, c, c_lin, y, w, g_sigma, g_partial, phi, system)
        return phi, y, g_sigma

    @property
    def phi(self):
        return self._require().phi

    @property
    def x(self):
        return self._require().x

    @property
    def y(self):
        return self._require().y

    @property
    def g_sigma(self):
        return self._require().g_sigma

    # --- building blocks ---------------------------------------------------
    def _h(self, v):
        s = self.state
        return self.problem.hlprod(s.x, s.y, v)

    def _r(self, v):
        return self.state.scaling.qprime * self.state.g_sigma * v

    def _qg(self):
        s = self.state
        return s.scaling.q * s.g_sigma

    def _cprod(self, wall):
        s = self.state
        out = self.problem.jprod(s.x, wall[: self.m1]) if self.m1 else np.zeros(self.problem.n)
        return out + self.B @ wall[self.m1 :] if self.m2 else out

    def _ctprod(self, v):
        s = self.state
        head = self.problem.jtprod(s.x, v) if self.m1 else np.zeros(0)
        return np.concatenate([head, self.B.T @ v]) if self.m2 else head

    def _s_pad(self, v):
        s = self.state
        head = self.problem.sprod(s.x, self._qg(), v) if self.m1 else np.zeros(0)
        return np.concatenate([head, np.zeros(self.m2)]) if self.m2 else head

    def _st(self, wall):
        """``S_sigma^T w = T(x, w) (Q g_sigma)``; linear columns contribute nothing."""
        s = self.state
        if not self.m1:
            return np.zeros(self.problem.n)
        return self.problem.tprod(s.x, wall[: self.m1], self._qg())

    # --- products with the multiplier Jacobian -----------------------------
    def _y_full(self, uall):
        """``[Y W] u`` for a multiplier-sized ``u`` (length m1 + m2)."""
        s = self._require()
        sigma = self.sigma
        zero = np.zeros(self.problem.n)
        if self.kind == "symmetric":
            v, w, _ = self._solve(zero, uall)
            Cw = self._cprod(w)
            return self._h(s.scaling.sqrt_q * v) + sigma * Cw - self._r(Cw) - self._st(w)
        vbar, w, _ = self._solve(zero, uall)
        return self._h(s.scaling.q * vbar) + self._r(vbar) - sigma * vbar - self._st(w)

    def _yt_full(self, v):
        """``[Y W]^T v`` (length m1 + m2)."""
        s = self._require()
        sigma = self.sigma
        Hv = self._h(v)
        Sv = self._s_pad(v)
        if self.kind == "symmetric":
            top = s.scaling.sqrt_q * Hv
            bottom = self._ctprod(sigma * v - self._r(v)) - Sv
            _, out, _ = self._solve(top, bottom)
            return out
        top = s.scaling.q * Hv + self._r(v) - sigma * v
        _, out, _ = self._solve(top, -Sv, transpose=True)
        return out

    def y_product(self, u):
        """``Y_sigma u`` for ``u`` of length m."""
        u = np.asarray(u, dtype=float)
        return self._y_full(np.concatenate([u, np.zeros(self.m2)]))

    def yt_product(self, v):
        """``Y_sigma^T v`` (length m)."""
        return self._yt_full(np.asarray(v, dtype=float))[: self.m1]

    def gradient(self):
        """``grad phi = g_sigma - Y c`` (partial Lagrangian gradient with a linear block)."""
        s = self._require()
        if s.grad_phi is None:
            s.grad_phi = s.g_partial - self.y_product(s.c) if self.m1 else s.g_partial.copy()
        return s.grad_phi

    # --- weighted pseudoinverse products -----------------------------------
    def _inverse_normal(self, r):
        """``-(C^T Q C)^{-1} r`` and the matching ``C``-image, from one solve."""
        self._require()
        top, w, _ = self._solve(np.zeros(self.problem.n), r)
        return w, top

    def ptilde(self, v):
        """``[A 0] (C^T Q C)^{-1} C^T v``."""
        w, _ = self._inverse_normal(self._ctprod(v))
        return -self.problem.jprod(self.state.x, w[: self.m1]) if self.m1 else np.zeros(self.problem.n)

    def ptilde_t(self, v):
        """``C (C^T Q C)^{-1} [A^T v; 0]``."""
        if not self.m1:
            return np.zeros(self.problem.n)
        r = np.concatenate([self.problem.jtprod(self.state.x, v), np.zeros(self.m2)])
        w, _ = self._inverse_normal(r)
        return -self._cprod(w)

    # --- Hessian approximations --------------------------------------------
    def hess_product(self, d):
        """B1 or B2 times ``d``."""
        s = self._require()
        d = np.asarray(d, dtype=float)
        Hd = self._h(d)
        if not self.m1:
            return Hd
        sigma = self.sigma
        if self.hessian_mode == "B1":
            return Hd - self.problem.jprod(s.x, self.yt_product(d)) - self.y_product(self.problem.jtprod(s.x, d))
        q = s.scaling.q
        left = self.ptilde(q * Hd + self._r(d) - sigma * d)
        t = self.ptilde_t(d)
        right = self._h(q * t) + self._r(t) - sigma * t
        return Hd - left - right
