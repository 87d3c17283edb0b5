"""Small analytic and standard test problems."""

from __future__ import annotations

import numpy as np

from .base import Bounds, NlpProblem

__all__ = ["Toy1D", "RandQP", "HS113"]


class Toy1D(NlpProblem):
    """``min x^2/2  s.t.  x - 1 = 0`` with optional bound ``x >= 0``.

    The penalty threshold at the solution ``(x, y) = (1, 1)`` is 1/2.
    """

    def __init__(self, bounded=False, x0=5.0):
        self.name = "toy1d-bounded" if bounded else "toy1d"
        self.n = 1
        self.m = 1
        lower = np.array([0.0 if bounded else -np.inf])
        self.bounds = Bounds(lower, np.array([np.inf]))
        self.x0 = np.array([float(x0)])
        self.solution = (np.array([1.0]), np.array([1.0]), np.array([0.0]))

    def obj(self, x):
        return 0.5 * float(x[0] ** 2)

    def grad(self, x):
        return np.array([x[0]], dtype=float)

    def cons(self, x):
        return np.array([x[0] - 1.0])

    def jprod(self, x, w):
        return np.array([w[0]], dtype=float)

    def jtprod(self, x, v):
        return np.array([v[0]], dtype=float)

    def hlprod(self, x, y, v):
        return np.array([v[0]], dtype=float)

    def jac(self, x):
        return np.ones((1, 1))

    def tprod(self, x, w, v):
        return np.zeros(1)

    def sprod(self, x, u, v):
        return np.zeros(1)


class RandQP(NlpProblem):
    """Seeded convex QP with linear equalities and a planted KKT point.

    The first ``n_lower`` variables carry ``x >= 0``; the first ``n_active``
    of those are active at the planted solution with strictly positive bound
    multipliers.  The next ``n_box`` variables lie in ``[-1, 2]`` and stay
    inactive.  Remaining variables are free.  ``dependent=True`` makes the
    last constraint the sum of the first two, so ``A`` is rank deficient.
    """

    def __init__(self, n=10, m=3, seed=0, bounds=True, n_lower=4, n_active=2, n_box=2,
                 dependent=False):
        if m < 1 or n <= m:
            raise ValueError("randqp needs 1 <= m < n")
        if not bounds:
            n_lower = n_active = n_box = 0
        if n_lower + n_box > n or n_active > n_lower or n_active > n - m:
            raise ValueError("randqp bound layout does not fit n and m")
        rng = np.random.default_rng(seed)
        self.name = "randqp"
        self.n = n
        self.m = m
        self.seed = seed

        G = rng.standard_normal((n, n))
        self.H = G @ G.T / n + np.eye(n)
        A = rng.standard_normal((n, m))
        if dependent:
            if m < 3:
                raise ValueError("dependent=True needs m >= 3")
            A[:, -1] = A[:, 0] + A[:, 1]
        self.A = A

        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
        lower[:n_lower] = 0.0
        box = slice(n_lower, n_lower + n_box)
        lower[box] = -1.0
        upper[box] = 2.0
        self.bounds = Bounds(lower, upper)

        xs = rng.standard_normal(n)
        xs[:n_lower] = rng.uniform(0.5, 1.5, n_lower)
        xs[:n_active] = 0.0
        xs[box] = rng.uniform(0.0, 1.0, n_box)
        zs = np.zeros(n)
        zs[:n_active] = rng.uniform(0.5, 1.5, n_active)
        ys = rng.standard_normal(m)
        self.g0 = A @ ys + zs - self.H @ xs
        self.b = A.T @ xs
        self.solution = (xs, ys, zs)

        x0 = np.zeros(n)
        x0[:n_lower] = 1.0
        x0[box] = 0.5
        self.x0 = x0

    def obj(self, x):
        return float(0.5 * x @ self.H @ x + self.g0 @ x)

    def grad(self, x):
        return self.H @ x + self.g0

    def cons(self, x):
        return self.A.T @ x - self.b

    def jprod(self, x, w):
        return self.A @ w

    def jtprod(self, x, v):
        return self.A.T @ v

    def hlprod(self, x, y, v):
        return self.H @ v

    def jac(self, x):
        return self.A

    def tprod(self, x, w, v):
        return np.zeros(self.n)

    def sprod(self, x, u, v):
        return np.zeros(self.m)


def _hs113_g(x):
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = x
    return np.array([
        105.0 - 4 * x1 - 5 * x2 + 3 * x7 - 9 * x8,
        -10 * x1 + 8 * x2 + 17 * x7 - 2 * x8,
        8 * x1 - 2 * x2 - 5 * x9 + 2 * x10 + 12,
        -3 * (x1 - 2) ** 2 - 4 * (x2 - 3) ** 2 - 2 * x3 ** 2 + 7 * x4 + 120,
        -5 * x1 ** 2 - 8 * x2 - (x3 - 6) ** 2 + 2 * x4 + 40,
        -0.5 * (x1 - 8) ** 2 - 2 * (x2 - 4) ** 2 - 3 * x5 ** 2 + x6 + 30,
        -x1 ** 2 - 2 * (x2 - 2) ** 2 + 2 * x1 * x2 - 14 * x5 + 6 * x6,
        3 * x1 - 6 * x2 - 12 * (x9 - 8) ** 2 + 7 * x10,
    ])


def _hs113_dg(x):
    """10-by-8 matrix of inequality gradients."""
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = x
    J = np.zeros((10, 8))
    J[[0, 1, 6, 7], 0] = [-4, -5, 3, -9]
    J[[0, 1, 6, 7], 1] = [-10, 8, 17, -2]
    J[[0, 1, 8, 9], 2] = [8, -2, -5, 2]
    J[[0, 1, 2, 3], 3] = [-6 * (x1 - 2), -8 * (x2 - 3), -4 * x3, 7]
    J[[0, 1, 2, 3], 4] = [-10 * x1, -8, -2 * (x3 - 6), 2]
    J[[0, 1, 4, 5], 5] = [-(x1 - 8), -4 * (x2 - 4), -6 * x5, 1]
    J[[0, 1, 4, 5], 6] = [-2 * x1 + 2 * x2, -4 * (x2 - 2) + 2 * x1, -14, 6]
    J[[0, 1, 8, 9], 7] = [3, -6, -24 * (x9 - 8), 7]
    return J


def _hs113_hessians():
    G = np.zeros((8, 10, 10))
    G[3][0, 0], G[3][1, 1], G[3][2, 2] = -6, -8, -4
    G[4][0, 0], G[4][2, 2] = -10, -2
    G[5][0, 0], G[5][1, 1], G[5][4, 4] = -1, -4, -6
    G[6][0, 0], G[6][1, 1] = -2, -4
    G[6][0, 1] = G[6][1, 0] = 2
    G[7][8, 8] = -24
    return G


class HS113(NlpProblem):
    """Hock-Schittkowski problem 113 with one slack per inequality.

    Variables are ``(x_1..x_10, s_1..s_8)`` with ``s >= 0`` and constraints
    ``g_i(x) - s_i = 0``.  The first three constraints are linear.
    """

    name = "hs113"
    linear_indices = (0, 1, 2)

    _HF = np.diag([2.0, 2, 2, 8, 2, 4, 10, 14, 4, 2])
    _HF[0, 1] = _HF[1, 0] = 1.0
    _G = _hs113_hessians()

    def __init__(self):
        self.n = 18
        self.m = 8
        lower = np.concatenate([np.full(10, -np.inf), np.zeros(8)])
        self.bounds = Bounds(lower, np.full(18, np.inf))
        xs = np.array([2.0, 3, 5, 5, 1, 2, 7, 3, 6, 10])
        self.x0 = np.concatenate([xs, np.maximum(_hs113_g(xs), 1.0)])
        self.f_opt = 24.3062091

    def obj(self, x):
        x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = x[:10]
        return float(
            x1 ** 2 + x2 ** 2 + x1 * x2 - 14 * x1 - 16 * x2 + (x3 - 10) ** 2
            + 4 * (x4 - 5) ** 2 + (x5 - 3) ** 2 + 2 * (x6 - 1) ** 2 + 5 * x7 ** 2
            + 7 * (x8 - 11) ** 2 + 2 * (x9 - 10) ** 2 + (x10 - 7) ** 2 + 45
        )

    def grad(self, x):
        x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = x[:10]
        g = np.zeros(18)
        g[:10] = [
            2 * x1 + x2 - 14, 2 * x2 + x1 - 16, 2 * (x3 - 10), 8 * (x4 - 5),
            2 * (x5 - 3), 4 * (x6 - 1), 10 * x7, 14 * (x8 - 11), 4 * (x9 - 10),
            2 * (x10 - 7),
        ]
        return g

    def cons(self, x):
        return _hs113_g(x[:10]) - x[10:]

    def jac(self, x):
        return np.vstack([_hs113_dg(x[:10]), -np.eye(8)])

    def jprod(self, x, w):
        return self.jac(x) @ w

    def jtprod(self, x, v):
        return self.jac(x).T @ v

    def hlprod(self, x, y, v):
        out = np.zeros(18)
        out[:10] = self._HF @ v[:10] - np.einsum("i,ijk,k->j", y, self._G, v[:10])
        return out

    def tprod(self, x, w, v):
        out = np.zeros(18)
        out[:10] = np.einsum("i,ijk,k->j", w, self._G, v[:10])
        return out

    def sprod(self, x, u, v):
        return np.einsum("j,ijk,k->i", u[:10], self._G, v[:10])
