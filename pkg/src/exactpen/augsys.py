"""Augmented systems behind every penalty evaluation.

With ``C`` the n-by-m matrix of constraint gradients (possibly ``[A B]`` when
linear constraints are kept explicit) and ``Q`` the bound scaling, two block
forms are supported::

    symmetric     [ I        Q^{1/2} C ] [p]   [a]
                  [ C^T Q^{1/2}    0   ] [q] = [b]

    unsymmetric   [ I      C ] [p]   [a]
                  [ C^T Q  0 ] [q] = [b]

The unsymmetric matrix can also be solved transposed.  Backends:

``sne``    R factor of ``Q^{1/2} C`` (dense orthogonal factorization) used
           through semi-normal equations plus one refinement step.
``lu``     sparse LU of the assembled block matrix plus one refinement step.
``craig``  factorization-free preconditioned Golub-Kahan (CRAIG) iteration on
           the symmetric form, with residual- or error-based termination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "RankDeficientError",
    "InnerSolveError",
    "SolverConfigurationError",
    "SolveSettings",
    "SolveStats",
    "ConstraintColumns",
    "AugSystem",
    "assemble",
]

KINDS = ("symmetric", "unsymmetric")
BACKENDS = ("sne", "lu", "craig")
PRECONDITIONERS = ("auto", "problem", "exact", "jacobi", "none")


class RankDeficientError(np.linalg.LinAlgError):
    """The scaled constraint matrix does not have full column rank."""

    def __init__(self, message, rank=None, m=None):
        super().__init__(message)
        self.rank = rank
        self.m = m


class InnerSolveError(RuntimeError):
    """The iterative solver hit its iteration cap; carries the best iterate."""

    def __init__(self, message, p, q, residual, iterations):
        super().__init__(message)
        self.p = p
        self.q = q
        self.residual = residual
        self.iterations = iterations


class SolverConfigurationError(ValueError):
    """Inconsistent solve settings, e.g. error-based mode without a bound."""


@dataclass(frozen=True)
class SolveSettings:
    """Tolerances and termination mode for the iterative backend.

    ``criterion="residual"`` stops when the preconditioned residual is below
    ``eta`` times the preconditioned right-hand side norm.
    ``criterion="error"`` stops when a certified bound on the energy-norm
    error is below ``eta`` times the iterate norm; this requires a lower bound
    on the smallest singular value of the preconditioned scaled Jacobian.
    """

    eta: float = 1e-10
    criterion: str = "residual"
    sigma_min_bound: float | None = None
    max_inner: int = 1000
    preconditioner: str = "auto"

    def __post_init__(self):
        if not self.eta > 0:
            raise SolverConfigurationError("eta must be positive")
        if self.criterion not in ("residual", "error"):
            raise SolverConfigurationError(f"unknown criterion {self.criterion!r}")
        if self.sigma_min_bound is not None and not self.sigma_min_bound > 0:
            raise SolverConfigurationError("sigma_min_bound must be positive")
        if self.max_inner < 1:
            raise SolverConfigurationError("max_inner must be at least 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise SolverConfigurationError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    rhs_norm: float = 0.0
    error_bound: float | None = None
    residual_before_refinement: float | None = None


class ConstraintColumns:
    """The matrix ``C`` at a point, as products and optionally as a matrix.

    ``C = A(x)`` by default; ``extra`` appends constant columns (the explicit
    linear block ``B``).
    """

    def __init__(self, problem, x, extra=None):
        self.problem = problem
        self.x = x
        self.n = problem.n
        self.m1 = problem.m
        self.extra = None if extra is None or extra.shape[1] == 0 else np.asarray(extra, dtype=float)
        self.m = self.m1 + (0 if self.extra is None else self.extra.shape[1])
        self._matrix = None

    def matvec(self, w):
        out = self.problem.jprod(self.x, w[: self.m1]) if self.m1 else np.zeros(self.n)
        if self.extra is not None:
            out = out + self.extra @ w[self.m1 :]
        return out

    def rmatvec(self, v):
        head = self.problem.jtprod(self.x, v) if self.m1 else np.zeros(0)
        if self.extra is None:
            return head
        return np.concatenate([head, self.extra.T @ v])

    @property
    def has_matrix(self):
        return self.problem.has_jacobian or self.m1 == 0

    def matrix(self):
        """Explicit ``C`` (sparse if the problem Jacobian is sparse)."""
        if self._matrix is None:
            if self.m1:
                J = self.problem.jac(self.x)
                J = J.tocsr() if sp.issparse(J) else np.asarray(J, dtype=float)
            else:
                J = np.zeros((self.n, 0))
            if self.extra is not None:
                J = sp.hstack([J, sp.csr_matrix(self.extra)]).tocsr() if sp.issparse(J) else np.hstack([J, self.extra])
            self._matrix = J
        return self._matrix

    def dense(self):
        C = self.matrix()
        return C.toarray() if sp.issparse(C) else C


def _scale_rows(C, d):
    if sp.issparse(C):
        return sp.diags(d) @ C
    return d[:, None] * C


class AugSystem:
    """One assembled augmented system at a fixed point.

    Construct through :func:`assemble`.  The factorization (direct backends)
    or preconditioner (iterative backend) is built once and reused by every
    :meth:`solve`.
    """

    def __init__(self, columns, scaling, kind="symmetric", backend="sne", settings=None):
        if kind not in KINDS:
            raise SolverConfigurationError(f"unknown system kind {kind!r}")
        if backend not in BACKENDS:
            raise SolverConfigurationError(f"unknown backend {backend!r}")
        if kind == "unsymmetric" and backend == "craig":
            raise SolverConfigurationError("the unsymmetric system is available with direct backends only")
        if backend != "craig" and not columns.has_matrix:
            raise SolverConfigurationError(
                f"backend {backend!r} needs an explicit Jacobian; use backend='craig'"
            )
        self.columns = columns
        self.scaling = scaling
        self.kind = kind
        self.backend = backend
        self.settings = settings or SolveSettings()
        self.n = columns.n
        self.m = columns.m
        self.q = scaling.q
        self.sqrt_q = scaling.sqrt_q
        if self.m == 0:
            return
        if backend == "sne":
            self._factor_sne()
        elif backend == "lu":
            self._factor_lu()
        else:
            self._setup_preconditioner()

    # --- direct: semi-normal equations --------------------------------------
    def _factor_sne(self):
        M = _scale_rows(self.columns.dense(), self.sqrt_q)
        self._C = self.columns.dense()
        R = np.linalg.qr(M, mode="r")
        diag = np.abs(np.diag(R))
        tol = max(M.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
        if R.shape[0] < self.m or np.any(diag <= tol):
            rank = int(np.sum(diag > tol))
            raise RankDeficientError(
                f"scaled constraint matrix is rank deficient (rank {rank} < {self.m})", rank, self.m
            )
        self._R = R[: self.m]

    def _normal_solve(self, r):
        t = sla.solve_triangular(self._R, r, trans="T", check_finite=False)
        return sla.solve_triangular(self._R, t, check_finite=False)

    def _sne_once(self, a, b, transpose):
        C, q, s = self._C, self.q, self.sqrt_q
        if self.kind == "symmetric":
            M = s[:, None] * C
            y = self._normal_solve(M.T @ a - b)
            return a - M @ y, y
        if transpose:
            y = self._normal_solve(C.T @ a - b)
            return a - q * (C @ y), y
        y = self._normal_solve(C.T @ (q * a) - b)
        return a - C @ y, y

    # --- direct: sparse LU -------------------------------------------------
    def _factor_lu(self):
        C = self.columns.matrix()
        C = sp.csr_matrix(C) if not sp.issparse(C) else C
        self._C = C
        eye = sp.identity(self.n, format="csr")
        if self.kind == "symmetric":
            M = sp.diags(self.sqrt_q) @ C
            K = sp.bmat([[eye, M], [M.T, None]], format="csc")
        else:
            K = sp.bmat([[eye, C], [C.T @ sp.diags(self.q), None]], format="csc")
        try:
            self._lu = spla.splu(K)
        except RuntimeError as exc:
            raise RankDeficientError(f"augmented matrix is singular: {exc}", None, self.m) from exc
        U = self._lu.U.diagonal()
        if not np.all(np.isfinite(U)) or np.min(np.abs(U)) <= self.n * np.finfo(float).eps * np.max(np.abs(U)):
            raise RankDeficientError("augmented matrix is numerically singular", None, self.m)

    def _lu_once(self, a, b, transpose):
        sol = self._lu.solve(np.concatenate([a, b]), trans="T" if transpose else "N")
        return sol[: self.n], sol[self.n :]

    # --- residuals ----------------------------------------------------------
    def apply(self, p, q, transpose=False):
        """Block matrix times ``(p, q)`` using the stored matrix."""
        C = self._C
        if self.kind == "symmetric":
            return p + self.sqrt_q * (C @ q), C.T @ (self.sqrt_q * p)
        if transpose:
            return p + self.q * (C @ q), C.T @ p
        return p + C @ q, C.T @ (self.q * p)

    def _residual(self, a, b, p, q, transpose):
        ta, tb = self.apply(p, q, transpose)
        return a - ta, b - tb

    # --- public -------------------------------------------------------------
    def solve(self, top, bottom, transpose=False, q0=None):
        """Solve for ``(p, q)``; returns ``(p, q, stats)``.

        ``transpose`` selects the transposed unsymmetric system.  ``q0`` is an
        optional starting guess for the multiplier block, used only by the
        iterative backend.
        """
        a = np.asarray(top, dtype=float)
        b = np.asarray(bottom, dtype=float)
        if a.shape != (self.n,) or b.shape != (self.m,):
            raise ValueError(f"right-hand side shapes {a.shape}, {b.shape} do not match ({self.n}, {self.m})")
        if transpose and self.kind == "symmetric":
            transpose = False
        if self.m == 0:
            return a.copy(), np.zeros(0), SolveStats(rhs_norm=float(np.linalg.norm(a)))
        if self.backend == "craig":
            return self._craig(a, b, q0)

        once = self._sne_once if self.backend == "sne" else self._lu_once
        p, q = once(a, b, transpose)
        ra, rb = self._residual(a, b, p, q, transpose)
        before = float(np.hypot(np.linalg.norm(ra), np.linalg.norm(rb)))
        dp, dq = once(ra, rb, transpose)
        p2, q2 = p + dp, q + dq
        ra2, rb2 = self._residual(a, b, p2, q2, transpose)
        after = float(np.hypot(np.linalg.norm(ra2), np.linalg.norm(rb2)))
        if after > before:
            # refinement never makes things worse in the reported norm
            p2, q2, after = p, q, before
        stats = SolveStats(
            iterations=1,
            residual=after,
            rhs_norm=float(np.hypot(np.linalg.norm(a), np.linalg.norm(b))),
            residual_before_refinement=before,
        )
        return p2, q2, stats

    # --- iterative: preconditioned CRAIG --------------------------------------
    def _setup_preconditioner(self):
        choice = self.settings.preconditioner
        problem = self.columns.problem
        bound = None
        solve = None
        if choice == "auto":
            choice = "problem" if self.columns.extra is None else "exact"
            if not self.columns.has_matrix and choice == "exact":
                choice = "none"
        if choice == "problem":
            if self.columns.extra is not None:
                raise SolverConfigurationError("problem preconditioners do not cover an explicit linear block")
            got = problem.preconditioner(self.columns.x, self.q)
            if got is None:
                choice = "exact" if self.columns.has_matrix else "none"
            else:
                solve, bound = got
        if choice == "exact":
            if not self.columns.has_matrix:
                raise SolverConfigurationError("exact preconditioner needs an explicit Jacobian")
            M = _scale_rows(self.columns.dense(), self.sqrt_q)
            try:
                factor = sla.cho_factor(M.T @ M, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise RankDeficientError("scaled constraint matrix is rank deficient", None, self.m) from exc
            d = np.abs(np.diag(factor[0]))
            if d.min() <= np.sqrt(self.m * np.finfo(float).eps) * d.max():
                raise RankDeficientError("scaled constraint matrix is rank deficient", None, self.m)
            solve = lambda r: sla.cho_solve(factor, r, check_finite=False)  # noqa: E731
            bound = 1.0
        elif choice == "jacobi":
            if not self.columns.has_matrix:
                raise SolverConfigurationError("jacobi preconditioner needs an explicit Jacobian")
            M = _scale_rows(self.columns.matrix(), self.sqrt_q)
            colsq = np.asarray(M.multiply(M).sum(axis=0)).ravel() if sp.issparse(M) else np.sum(M * M, axis=0)
            if np.any(colsq <= 0):
                raise RankDeficientError("scaled constraint matrix has a zero column", None, self.m)
            solve = lambda r: r / colsq  # noqa: E731
        elif choice == "none":
            solve = np.array  # copies, so z never aliases w
        self.preconditioner = choice
        self._precond = solve
        self.sigma_min_bound = self.settings.sigma_min_bound if self.settings.sigma_min_bound is not None else bound
        if self.settings.criterion == "error" and self.sigma_min_bound is None:
            raise SolverConfigurationError(
                "error-based termination needs sigma_min_bound (none supplied or implied by the preconditioner)"
            )

    def _mprod(self, z):
        return self.sqrt_q * self.columns.matvec(z)

    def _mtprod(self, v):
        return self.columns.rmatvec(self.sqrt_q * v)

    def _craig(self, a, b, q0):
        settings = self.settings
        P = self._precond
        pinv_b = P(b)
        full_rhs_norm = float(np.sqrt(a @ a + max(b @ pinv_b, 0.0)))

        if q0 is not None:
            q_start = np.asarray(q0, dtype=float).copy()
            a_shift = a - self._mprod(q_start)
        else:
            q_start = np.zeros(self.m)
            a_shift = a
        bhat = b - self._mtprod(a_shift)

        w = bhat.copy()
        z = P(w)
        beta = float(np.sqrt(max(w @ z, 0.0)))
        shifted_norm = beta
        target_res = settings.eta * min(full_rhs_norm, shifted_norm) if q0 is not None else settings.eta * full_rhs_norm

        phat = np.zeros(self.n)
        qc = np.zeros(self.m)
        Pqc = np.zeros(self.m)
        sigma = self.sigma_min_bound
        stats = SolveStats(rhs_norm=full_rhs_norm)

        def finish(k, res, err):
            stats.iterations = k
            stats.residual = res
            stats.error_bound = err
            return a_shift + phat, q_start + qc, stats

        def error_bound(r):
            return None if sigma is None else float(np.sqrt(r * r / sigma ** 2 + r * r / sigma ** 4))

        if beta == 0.0:
            return finish(0, 0.0, 0.0 if sigma is not None else None)

        w /= beta
        z /= beta
        v = np.zeros(self.n)
        d = np.zeros(self.m)
        Pd = np.zeros(self.m)
        t = 0.0
        res = beta
        beta_k = beta  # beta_1 drives the first coefficient
        best = None
        for k in range(1, settings.max_inner + 1):
            vnew = self._mprod(z) - (beta_k * v if k > 1 else 0.0)
            alpha = float(np.linalg.norm(vnew))
            if alpha == 0.0:
                raise RankDeficientError("Golub-Kahan process broke down (alpha = 0)", None, self.m)
            v = vnew / alpha
            t = beta / alpha if k == 1 else -beta_k * t / alpha
            d = (z - (beta_k * d if k > 1 else 0.0)) / alpha
            Pd = (w - (beta_k * Pd if k > 1 else 0.0)) / alpha
            phat += t * v
            qc -= t * d
            Pqc -= t * Pd

            wnew = self._mtprod(v) - alpha * w
            znew = P(wnew)
            beta_k = float(np.sqrt(max(wnew @ znew, 0.0)))
            res = beta_k * abs(t)
            err = error_bound(res)

            if settings.criterion == "residual":
                done = res <= target_res
            else:
                if q0 is None:
                    p_full = a_shift + phat
                    norm = np.sqrt(p_full @ p_full + max(qc @ Pqc, 0.0))
                else:
                    norm = np.sqrt(phat @ phat + max(qc @ Pqc, 0.0))
                done = err <= settings.eta * norm
            if best is None or res < best[0]:
                best = (res, phat.copy(), qc.copy())
            if done or beta_k == 0.0:
                return finish(k, res, err)
            w = wnew / beta_k
            z = znew / beta_k
        res, phat, qc = best
        raise InnerSolveError(
            f"CRAIG did not reach the requested tolerance in {settings.max_inner} iterations",
            a_shift + phat,
            q_start + qc,
            res,
            settings.max_inner,
        )


def assemble(problem, x, scaling, kind="symmetric", backend="sne", settings=None, linear_block=None):
    """Build the augmented system for ``problem`` at ``x``.

    ``linear_block`` optionally appends explicit linear-constraint columns
    ``B`` to the Jacobian, giving the three-block system used when linear
    constraints stay explicit.
    """
    columns = ConstraintColumns(problem, np.asarray(x, dtype=float), linear_block)
    return AugSystem(columns, scaling, kind=kind, backend=backend, settings=settings)
