"""Smooth bound scaling q(x), its derivative, and the diagonal operators Q and R.

The scaling q_i(x_i) is a C^1 concave approximation of
min{x_i - l_i, u_i - x_i} that vanishes exactly on active bounds and equals
one for free variables.  A quadratic band of width omega_i around the
midpoint of a doubly-bounded interval smooths the kink of the min.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "InteriorityError",
    "ScalingParams",
    "ScalingDiag",
    "default_omega",
    "q_value",
    "q_derivative",
    "build_scaling",
    "r_product",
]


class InteriorityError(ValueError):
    """Raised when a point is on or outside its bounds."""


def default_omega(lower, upper):
    """Smoothing widths ``min(1, (u - l)/2)``; 1 where a bound is infinite."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    with np.errstate(invalid="ignore"):
        width = upper - lower
    omega = np.ones_like(lower)
    both = np.isfinite(lower) & np.isfinite(upper)
    omega[both] = np.minimum(1.0, 0.5 * width[both])
    return omega


@dataclass(frozen=True)
class ScalingParams:
    """Smoothing widths and the optional unit cap.

    ``capped=True`` additionally smooths ``min(q, 1)`` with a quadratic
    blend on ``[1 - cap_band, 1 + cap_band]``, which keeps Q bounded when a
    variable sits far from a bound.  The default reproduces the uncapped
    three-branch definition.
    """

    omega: np.ndarray
    capped: bool = False
    cap_band: float = 0.5

    @classmethod
    def default(cls, lower, upper, capped=False):
        return cls(omega=default_omega(lower, upper), capped=capped)

    def validate(self, lower, upper):
        omega = np.asarray(self.omega, dtype=float)
        if np.any(omega <= 0):
            raise ValueError("smoothing widths must be positive")
        both = np.isfinite(lower) & np.isfinite(upper)
        if np.any(omega[both] >= (upper - lower)[both]):
            raise ValueError("smoothing width must be smaller than u - l")
        if not 0.0 < self.cap_band < 1.0:
            raise ValueError("cap_band must lie in (0, 1)")


def q_value(x, lower, upper, omega):
    """Scalar scaling value; branches are tested top to bottom."""
    if np.isinf(lower) and np.isinf(upper):
        return 1.0
    if np.isfinite(lower) and np.isfinite(upper) and abs(upper + lower - 2.0 * x) <= omega:
        t = 2.0 * x - upper - lower
        return 0.5 * (upper - lower) - 0.25 * omega - t * t / (4.0 * omega)
    return min(x - lower, upper - x)


def q_derivative(x, lower, upper, omega):
    """Scalar derivative of :func:`q_value`.

    The middle branch is the analytic derivative ``-(2x - u - l)/omega``.
    """
    if np.isinf(lower) and np.isinf(upper):
        return 0.0
    if np.isfinite(lower) and np.isfinite(upper) and abs(upper + lower - 2.0 * x) <= omega:
        return -(2.0 * x - upper - lower) / omega
    if x - lower < upper - x:
        return 1.0
    if x - lower > upper - x:
        return -1.0
    # unreachable for omega > 0: the midpoint always falls in the band
    return 0.0


@dataclass(frozen=True)
class ScalingDiag:
    """Diagonal of Q(x) and of its derivative at a point."""

    q: np.ndarray
    qprime: np.ndarray

    @property
    def sqrt_q(self):
        return np.sqrt(self.q)

    @property
    def n(self):
        return self.q.size


def _vector_q(x, lower, upper, omega):
    n = x.size
    q = np.empty(n)
    qp = np.empty(n)
    free = np.isinf(lower) & np.isinf(upper)
    both = np.isfinite(lower) & np.isfinite(upper)
    q[free] = 1.0
    qp[free] = 0.0

    rest = ~free
    dl = x - lower
    du = upper - x
    with np.errstate(invalid="ignore"):
        t = 2.0 * x - upper - lower
    band = both & (np.abs(t) <= omega)
    q[band] = 0.5 * (upper - lower)[band] - 0.25 * omega[band] - t[band] ** 2 / (4.0 * omega[band])
    qp[band] = -t[band] / omega[band]

    side = rest & ~band
    q[side] = np.minimum(dl[side], du[side])
    qp[side] = np.where(dl[side] < du[side], 1.0, np.where(dl[side] > du[side], -1.0, 0.0))
    return q, qp


def _cap(q, qp, band):
    # smooth min(q, 1): identity below 1 - band, constant above 1 + band
    lo, hi = 1.0 - band, 1.0 + band
    out = q.copy()
    dout = qp.copy()
    top = q >= hi
    out[top] = 1.0
    dout[top] = 0.0
    mid = (q > lo) & ~top
    s = q[mid] - lo
    out[mid] = q[mid] - s * s / (4.0 * band)
    dout[mid] = qp[mid] * (1.0 - s / (2.0 * band))
    return out, dout


def build_scaling(x, lower, upper, params=None, strict=True):
    """Evaluate Q(x) and Q'(x) componentwise at a strictly interior point.

    ``strict=False`` also accepts points on the bounds (where ``q = 0``),
    which is what KKT-point diagnostics need.

    Raises:
        InteriorityError: if some ``x_j`` is not strictly inside its bounds
            (or, with ``strict=False``, lies outside them).
    """
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if params is None:
        params = ScalingParams.default(lower, upper)
    bad = ~((x > lower) & (x < upper)) if strict else ~((x >= lower) & (x <= upper))
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise InteriorityError(
            f"point is not strictly interior at {idx.size} component(s), first index {idx[0]}"
        )
    q, qp = _vector_q(x, lower, upper, np.asarray(params.omega, dtype=float))
    if params.capped:
        # free variables keep q = 1 exactly
        bounded = np.isfinite(lower) | np.isfinite(upper)
        q[bounded], qp[bounded] = _cap(q[bounded], qp[bounded], params.cap_band)
    return ScalingDiag(q=q, qprime=qp)


def r_product(scaling, v):
    """R(x, v) as a vector: ``q'(x) * v``."""
    return scaling.qprime * np.asarray(v, dtype=float)
