"""Evaluation contract for equality- and bound-constrained problems.

Conventions follow the penalty literature: ``A(x)`` is the n-by-m matrix whose
columns are constraint gradients, so ``jprod(x, w) = A(x) @ w`` returns an
n-vector and ``jtprod(x, v) = A(x).T @ v`` returns an m-vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Bounds",
    "NlpProblem",
    "EvalCounters",
    "CountedProblem",
    "KktPoint",
    "NonlinearPart",
    "fd_step",
]

_EPS = np.finfo(float).eps


def fd_step(x):
    """Central-difference step ``eps**(1/3) * (1 + ||x||)``."""
    return _EPS ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x))


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise ValueError("bounds may not contain NaN")
        if np.any(lo >= up):
            raise ValueError("fixed or inverted bounds are not supported; eliminate fixed variables")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def free(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def n(self):
        return self.lower.size

    def is_interior(self, x):
        return bool(np.all((x > self.lower) & (x < self.upper)))

    def distance(self, x):
        """Componentwise ``min(x - l, u - x)`` (infinite for free variables)."""
        return np.minimum(x - self.lower, self.upper - x)


class NlpProblem:
    """Base class for ``min f(x)  s.t.  c(x) = 0,  l <= x <= u``.

    Subclasses set ``n``, ``m``, ``bounds``, ``x0`` and implement ``obj``,
    ``grad``, ``cons``, ``jprod``, ``jtprod`` and ``hlprod``.  ``jac`` is
    needed only by direct linear-algebra backends.

    Problems may declare some constraints linear through
    ``linear_indices``; those must have constant gradients and zero Hessians.
    """

    name = "nlp"
    n: int
    m: int
    bounds: Bounds
    x0: np.ndarray
    linear_indices: tuple = ()

    # --- required ---------------------------------------------------------
    def obj(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def cons(self, x):
        raise NotImplementedError

    def jprod(self, x, w):
        raise NotImplementedError

    def jtprod(self, x, v):
        raise NotImplementedError

    def hlprod(self, x, y, v):
        """Lagrangian Hessian product ``(H(x) - sum_i y_i H_i(x)) v``."""
        raise NotImplementedError

    # --- optional ---------------------------------------------------------
    def jac(self, x):
        """Explicit n-by-m Jacobian (columns are constraint gradients)."""
        raise NotImplementedError(f"{self.name} does not provide an explicit Jacobian")

    @property
    def has_jacobian(self):
        return type(self).jac is not NlpProblem.jac

    def tprod(self, x, w, v):
        """``T(x, w) v = sum_i w_i H_i(x) v`` from two Lagrangian products."""
        zero = np.zeros(self.m)
        return self.hlprod(x, zero, v) - self.hlprod(x, w, v)

    def sprod(self, x, u, v):
        """``S(x, u) v``: entries ``u^T H_i(x) v``.

        Central differences of ``t -> A(x + t v)^T u``; exact overrides are
        preferred where available.
        """
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return np.zeros(self.m)
        t = fd_step(x) / nv
        return (self.jtprod(x + t * v, u) - self.jtprod(x - t * v, u)) / (2.0 * t)

    def preconditioner(self, x, q):
        """Optional problem-specific preconditioner for ``A^T Q A``.

        Returns ``None`` or a ``(solve, sigma_min_bound)`` pair, where
        ``solve(r)`` applies the inverse of the preconditioner and
        ``sigma_min_bound`` (possibly ``None``) is a lower bound on the
        smallest singular value of the preconditioned scaled Jacobian.
        """
        return None

    # --- helpers ----------------------------------------------------------
    @property
    def nonlinear_indices(self):
        lin = set(self.linear_indices)
        return tuple(i for i in range(self.m) if i not in lin)

    def linear_block(self):
        """``(B, d)`` with ``B^T x = d`` for the declared linear constraints."""
        idx = list(self.linear_indices)
        if not idx:
            return np.zeros((self.n, 0)), np.zeros(0)
        B = np.empty((self.n, len(idx)))
        for k, i in enumerate(idx):
            e = np.zeros(self.m)
            e[i] = 1.0
            B[:, k] = self.jprod(self.x0, e)
        d = B.T @ self.x0 - self.cons(self.x0)[idx]
        return B, d

    def dense_jac(self, x):
        if self.has_jacobian:
            J = self.jac(x)
            return J.toarray() if sp.issparse(J) else np.asarray(J, dtype=float)
        return np.column_stack([self.jprod(x, e) for e in np.eye(self.m)]) if self.m else np.zeros((self.n, 0))

    def dense_hl(self, x, y):
        H = np.column_stack([self.hlprod(x, y, e) for e in np.eye(self.n)])
        return 0.5 * (H + H.T)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r} n={self.n} m={self.m}>"


@dataclass
class EvalCounters:
    """Operator counts reported alongside a solve."""

    n_fg: int = 0
    n_Hv: int = 0
    n_Av: int = 0
    n_ATv: int = 0

    def reset(self):
        self.n_fg = self.n_Hv = self.n_Av = self.n_ATv = 0

    def as_dict(self):
        return {"n_fg": self.n_fg, "n_Hv": self.n_Hv, "n_Av": self.n_Av, "n_ATv": self.n_ATv}

    def copy(self):
        return EvalCounters(**self.as_dict())


class CountedProblem(NlpProblem):
    """Delegating wrapper that counts operator applications.

    ``obj``/``grad`` count toward ``n_fg``; ``hlprod`` and exact ``tprod``
    and ``sprod`` overrides toward ``n_Hv``; ``jprod`` toward ``n_Av``;
    ``jtprod`` toward ``n_ATv``.  Default ``tprod``/``sprod`` are charged
    for the products they are built from.  Counter updates are not
    synchronized: keep one in-flight evaluation per wrapped instance.
    """

    def __init__(self, problem):
        self.inner = problem
        self.counters = EvalCounters()
        self.name = problem.name
        self.n = problem.n
        self.m = problem.m
        self.bounds = problem.bounds
        self.x0 = problem.x0
        self.linear_indices = problem.linear_indices

    def obj(self, x):
        self.counters.n_fg += 1
        return self.inner.obj(x)

    def grad(self, x):
        self.counters.n_fg += 1
        return self.inner.grad(x)

    def cons(self, x):
        return self.inner.cons(x)

    def jprod(self, x, w):
        self.counters.n_Av += 1
        return self.inner.jprod(x, w)

    def jtprod(self, x, v):
        self.counters.n_ATv += 1
        return self.inner.jtprod(x, v)

    def hlprod(self, x, y, v):
        self.counters.n_Hv += 1
        return self.inner.hlprod(x, y, v)

    def tprod(self, x, w, v):
        if type(self.inner).tprod is NlpProblem.tprod:
            return NlpProblem.tprod(self, x, w, v)
        self.counters.n_Hv += 1
        return self.inner.tprod(x, w, v)

    def sprod(self, x, u, v):
        if type(self.inner).sprod is NlpProblem.sprod:
            return NlpProblem.sprod(self, x, u, v)
        self.counters.n_Hv += 1
        return self.inner.sprod(x, u, v)

    def jac(self, x):
        return self.inner.jac(x)

    @property
    def has_jacobian(self):
        return self.inner.has_jacobian

    def preconditioner(self, x, q):
        return self.inner.preconditioner(x, q)

    def linear_block(self):
        return self.inner.linear_block()


class NonlinearPart(NlpProblem):
    """View of a problem restricted to its nonlinear constraints."""

    def __init__(self, problem):
        self.inner = problem
        self.idx = np.asarray(problem.nonlinear_indices, dtype=int)
        self.name = problem.name
        self.n = problem.n
        self.m = self.idx.size
        self.bounds = problem.bounds
        self.x0 = problem.x0
        self.linear_indices = ()

    def _scatter(self, w):
        full = np.zeros(self.inner.m)
        full[self.idx] = w
        return full

    def obj(self, x):
        return self.inner.obj(x)

    def grad(self, x):
        return self.inner.grad(x)

    def cons(self, x):
        return self.inner.cons(x)[self.idx]

    def jprod(self, x, w):
        return self.inner.jprod(x, self._scatter(w))

    def jtprod(self, x, v):
        return self.inner.jtprod(x, v)[self.idx]

    def hlprod(self, x, y, v):
        return self.inner.hlprod(x, self._scatter(y), v)

    def tprod(self, x, w, v):
        return self.inner.tprod(x, self._scatter(w), v)

    def sprod(self, x, u, v):
        return self.inner.sprod(x, u, v)[self.idx]

    def jac(self, x):
        J = self.inner.jac(x)
        return J[:, self.idx]

    @property
    def has_jacobian(self):
        return self.inner.has_jacobian


@dataclass
class KktPoint:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    active_set: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)

    @classmethod
    def from_bounds(cls, x, y, z, bounds, tol=1e-8):
        x = np.asarray(x, dtype=float)
        dist = bounds.distance(x)
        active = np.flatnonzero(dist <= tol * (1.0 + np.abs(x)))
        return cls(x, y, z, active)
