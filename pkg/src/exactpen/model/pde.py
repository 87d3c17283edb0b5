"""Five-point finite-difference control problems on the square (-1, 1)^2.

Both problems use an N-by-N grid of interior nodes with spacing
``h = 2/(N + 1)``.  Homogeneous Dirichlet values on the boundary are folded
into the difference operator, so only interior unknowns appear.  State and
control share the node layout ``k = i + N*j`` and the variable vector is
``x = (u, z)`` with ``n = 2 N^2`` and ``m = N^2``.

Face-based operators:

* ``D`` maps nodal values to differences across the ``2 N (N+1)`` cell faces
  (a boundary neighbour contributes zero).
* ``F`` maps nodal coefficients to faces by averaging the two adjacent nodes;
  faces on the boundary take the value of their single interior node.

The variable-coefficient operator is ``L(z) = D^T diag(F z) D``, which equals
the standard 5-point Laplacian (times ``h^2``) when ``z = 1``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .base import Bounds, NlpProblem

__all__ = ["GridOperators", "InversePoisson", "PoissonBoltzmann"]

FORCE_FREQ = np.pi - 0.125


class GridOperators:
    """Sparse difference and averaging operators for an N-by-N interior grid."""

    def __init__(self, N):
        if N < 3:
            raise ValueError("grid size N must be at least 3")
        self.N = N
        self.h = 2.0 / (N + 1)
        coords = -1.0 + self.h * np.arange(1, N + 1)
        X1, X2 = np.meshgrid(coords, coords, indexing="xy")
        self.x1 = X1.ravel()
        self.x2 = X2.ravel()

        ones = np.ones(N + 1)
        d1 = sp.diags([ones[:N], -ones[:N]], [0, -1], shape=(N + 1, N))
        avg = np.full(N + 1, 0.5)
        a1 = sp.diags([avg[:N], avg[:N]], [0, -1], shape=(N + 1, N)).tolil()
        a1[0, 0] = 1.0
        a1[N, N - 1] = 1.0
        eye = sp.identity(N)
        self.D = sp.vstack([sp.kron(eye, d1), sp.kron(d1, eye)]).tocsr()
        self.F = sp.vstack([sp.kron(eye, a1.tocsr()), sp.kron(a1.tocsr(), eye)]).tocsr()
        self.DT = self.D.T.tocsr()
        self.FT = self.F.T.tocsr()
        self.laplacian = (self.DT @ self.D).tocsc()

    @property
    def size(self):
        return self.N * self.N

    def stiffness(self, z):
        return (self.DT @ sp.diags(self.F @ z) @ self.D).tocsc()

    def forcing(self):
        return -np.sin(FORCE_FREQ * self.x1) * np.sin(FORCE_FREQ * self.x2)


def _unit_q(q, nu):
    return q is not None and np.all(q[:nu] == 1.0)


class InversePoisson(NlpProblem):
    """Recover a diffusion coefficient from a target state.

    ``min  h^2/2 ||u - u_d||^2 + alpha h^2/2 ||z||^2``
    ``s.t. L(z) u = h^2 f,  z >= 0``.

    The target ``u_d`` solves the discrete equation for a piecewise-constant
    coefficient that is raised by 0.5 on a disc and by another 0.5 on a
    diamond, both centred at (0.2, 0.2).
    """

    name = "invpoisson-fd"

    def __init__(self, N=16, alpha=1e-4):
        self.grid = GridOperators(N)
        self.alpha = float(alpha)
        nu = self.grid.size
        self.nu = nu
        self.n = 2 * nu
        self.m = nu
        self.bounds = Bounds(
            np.concatenate([np.full(nu, -np.inf), np.zeros(nu)]), np.full(2 * nu, np.inf)
        )
        self.x0 = np.ones(2 * nu)
        self.rhs = self.grid.h ** 2 * self.grid.forcing()
        self.z_true = self.true_coefficient()
        self.u_target = spla.spsolve(self.grid.stiffness(self.z_true), self.rhs)

    def true_coefficient(self):
        g = self.grid
        d1 = g.x1 - 0.2
        d2 = g.x2 - 0.2
        disc = np.hypot(d1, d2) <= 0.3
        diamond = np.abs(d1) + np.abs(d2) <= 0.6
        return 1.0 + 0.5 * disc + 0.5 * diamond

    def _split(self, x):
        return x[: self.nu], x[self.nu :]

    def obj(self, x):
        u, z = self._split(x)
        h2 = self.grid.h ** 2
        r = u - self.u_target
        return 0.5 * h2 * float(r @ r) + 0.5 * self.alpha * h2 * float(z @ z)

    def grad(self, x):
        u, z = self._split(x)
        h2 = self.grid.h ** 2
        return np.concatenate([h2 * (u - self.u_target), self.alpha * h2 * z])

    def cons(self, x):
        u, z = self._split(x)
        return self.grid.stiffness(z) @ u - self.rhs

    def jac(self, x):
        u, z = self._split(x)
        g = self.grid
        Az = g.FT @ sp.diags(g.D @ u) @ g.D
        return sp.vstack([g.stiffness(z), Az]).tocsr()

    def jprod(self, x, w):
        u, z = self._split(x)
        g = self.grid
        Dw = g.D @ w
        return np.concatenate([g.DT @ ((g.F @ z) * Dw), g.FT @ ((g.D @ u) * Dw)])

    def jtprod(self, x, v):
        u, z = self._split(x)
        vu, vz = self._split(v)
        g = self.grid
        return g.DT @ ((g.F @ z) * (g.D @ vu)) + g.DT @ ((g.D @ u) * (g.F @ vz))

    def tprod(self, x, w, v):
        du, dz = self._split(v)
        g = self.grid
        Dw = g.D @ w
        return np.concatenate([g.DT @ ((g.F @ dz) * Dw), g.FT @ (Dw * (g.D @ du))])

    def hlprod(self, x, y, v):
        du, dz = self._split(v)
        h2 = self.grid.h ** 2
        return np.concatenate([h2 * du, self.alpha * h2 * dz]) - self.tprod(x, y, v)

    def sprod(self, x, u, v):
        su, sz = self._split(u)
        du, dz = self._split(v)
        g = self.grid
        return g.DT @ ((g.F @ dz) * (g.D @ su)) + g.DT @ ((g.D @ du) * (g.F @ sz))

    def preconditioner(self, x, q):
        """``A_u^T A_u`` with ``A_u = L(z)``; exact when the u-block of Q is I."""
        _, z = self._split(x)
        lu = spla.splu(self.grid.stiffness(z))
        bound = 1.0 if _unit_q(q, self.nu) else None
        return (lambda r: lu.solve(lu.solve(r, trans="T")), bound)


class PoissonBoltzmann(NlpProblem):
    """Distributed control of a semilinear Poisson-Boltzmann equation.

    ``min  h^2/2 ||u - u_d||^2 + alpha h^2/2 ||z||^2``
    ``s.t. L u + h^2 sinh(u) = h^2 (f + z),  z >= 0``

    with ``L`` the 5-point Laplacian and ``u_d = 10`` on ``[0.25, 0.75]^2``,
    5 elsewhere.
    """

    name = "poisson-boltzmann-fd"

    def __init__(self, N=16, alpha=1e-4):
        self.grid = GridOperators(N)
        self.alpha = float(alpha)
        nu = self.grid.size
        self.nu = nu
        self.n = 2 * nu
        self.m = nu
        self.bounds = Bounds(
            np.concatenate([np.full(nu, -np.inf), np.zeros(nu)]), np.full(2 * nu, np.inf)
        )
        self.x0 = np.ones(2 * nu)
        g = self.grid
        inner = (g.x1 >= 0.25) & (g.x1 <= 0.75) & (g.x2 >= 0.25) & (g.x2 <= 0.75)
        self.u_target = np.where(inner, 10.0, 5.0)
        self.force = g.forcing()

    def _split(self, x):
        return x[: self.nu], x[self.nu :]

    def obj(self, x):
        u, z = self._split(x)
        h2 = self.grid.h ** 2
        r = u - self.u_target
        return 0.5 * h2 * float(r @ r) + 0.5 * self.alpha * h2 * float(z @ z)

    def grad(self, x):
        u, z = self._split(x)
        h2 = self.grid.h ** 2
        return np.concatenate([h2 * (u - self.u_target), self.alpha * h2 * z])

    def cons(self, x):
        u, z = self._split(x)
        h2 = self.grid.h ** 2
        return self.grid.laplacian @ u + h2 * np.sinh(u) - h2 * (self.force + z)

    def _state_block(self, u):
        return (self.grid.laplacian + sp.diags(self.grid.h ** 2 * np.cosh(u))).tocsc()

    def jac(self, x):
        u, _ = self._split(x)
        return sp.vstack([self._state_block(u), -self.grid.h ** 2 * sp.identity(self.nu)]).tocsr()

    def jprod(self, x, w):
        u, _ = self._split(x)
        h2 = self.grid.h ** 2
        return np.concatenate([self.grid.laplacian @ w + h2 * np.cosh(u) * w, -h2 * w])

    def jtprod(self, x, v):
        u, _ = self._split(x)
        vu, vz = self._split(v)
        h2 = self.grid.h ** 2
        return self.grid.laplacian @ vu + h2 * np.cosh(u) * vu - h2 * vz

    def tprod(self, x, w, v):
        u, _ = self._split(x)
        du, _ = self._split(v)
        return np.concatenate([self.grid.h ** 2 * np.sinh(u) * w * du, np.zeros(self.nu)])

    def hlprod(self, x, y, v):
        du, dz = self._split(v)
        h2 = self.grid.h ** 2
        return np.concatenate([h2 * du, self.alpha * h2 * dz]) - self.tprod(x, y, v)

    def sprod(self, x, u, v):
        xu, _ = self._split(x)
        su, _ = self._split(u)
        du, _ = self._split(v)
        return self.grid.h ** 2 * np.sinh(xu) * su * du

    def preconditioner(self, x, q):
        """``A_u^T A_u`` with the symmetric state Jacobian ``A_u``."""
        u, _ = self._split(x)
        lu = spla.splu(self._state_block(u))
        bound = 1.0 if _unit_q(q, self.nu) else None
        return (lambda r: lu.solve(lu.solve(r, trans="T")), bound)
