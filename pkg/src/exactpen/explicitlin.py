"""Penalty with linear constraints kept explicit.

A problem may declare some constraints linear (``problem.linear_indices``).
Instead of penalizing them, the penalty below only involves the nonlinear
constraints ``c(x)`` while the linear ones ``B^T x = d`` are left to the
minimizer.  The multiplier estimates ``(y, w)`` then solve

    C^T Q C (y; w) = C^T Q g - sigma (c; B^T x - d),   C = [A B],

and ``phi(x) = f(x) - c(x)^T y(x)``.  All products reuse the implicit
machinery with ``C`` in place of ``A``; ``y``-products pad with zeros for the
``w`` block and transposed products drop it.
"""

from __future__ import annotations

import numpy as np

from .model.base import NonlinearPart
from .penalty import PenaltyEvaluator

__all__ = [
    "ExplicitPenaltyEvaluator",
    "refresh_explicit",
    "gradient_explicit",
    "yw_products",
    "pseudoinverse_products",
]


class ExplicitPenaltyEvaluator(PenaltyEvaluator):
    """Penalty over the nonlinear constraints with ``B^T x = d`` kept explicit.

    ``problem`` is the full problem; its declared linear constraints form
    ``(B, d)`` unless ``linear_block`` is given.  Keyword arguments are passed
    to :class:`~exactpen.penalty.PenaltyEvaluator`.
    """

    def __init__(self, problem, sigma, linear_block=None, **kwargs):
        self.full_problem = problem
        nonlinear = NonlinearPart(problem)
        super().__init__(nonlinear, sigma, **kwargs)
        B, d = linear_block if linear_block is not None else problem.linear_block()
        self._init_linear_block(B, d)

    @property
    def w(self):
        return self._require().w

    def refresh(self, x):
        """Evaluate at ``x``; returns ``(phi, y, w, g_sigma)``.

        ``g_sigma = g - A y - B w`` is the full Lagrangian gradient; the
        partial gradient ``g - A y`` is kept in the state for the penalty
        gradient.
        """
        phi, y, g_sigma = super().refresh(x)
        return phi, y, self.state.w, g_sigma

    def linear_residual(self, x=None):
        x = self.x if x is None else np.asarray(x, dtype=float)
        return self.B.T @ x - self.d

    # [Y W] u and [Y W]^T v
    def yw_product(self, u_all):
        """``[Y W] (u_1; u_2)``."""
        return self._y_full(np.asarray(u_all, dtype=float))

    def ywt_product(self, v):
        """``[Y W]^T v`` as one vector of length m1 + m2."""
        return self._yt_full(np.asarray(v, dtype=float))

    def normal_pinv(self, v):
        """``(C^T Q C)^{-1} C^T v``."""
        w, _ = self._inverse_normal(self._ctprod(np.asarray(v, dtype=float)))
        return -w

    def range_pinv(self, u_all):
        """``C (C^T Q C)^{-1} (u_1; u_2)``."""
        w, _ = self._inverse_normal(np.asarray(u_all, dtype=float))
        return -self._cprod(w)


def refresh_explicit(evaluator, x):
    return evaluator.refresh(x)


def gradient_explicit(evaluator):
    """``g - A y - Y c``, the penalty gradient with unpenalized linear constraints."""
    return evaluator.gradient()


def yw_products(evaluator, u=None, v=None):
    """``Y u`` and/or ``Y^T v`` for the nonlinear multiplier Jacobian.

    Returns ``(Yu, Ytv)`` with ``None`` for the product not requested.
    """
    Yu = evaluator.y_product(u) if u is not None else None
    Ytv = evaluator.yt_product(v) if v is not None else None
    return Yu, Ytv


def pseudoinverse_products(evaluator, v=None, u=None):
    """``(C^T Q C)^{-1} C^T v`` and/or ``C (C^T Q C)^{-1} u``."""
    left = evaluator.normal_pinv(v) if v is not None else None
    right = evaluator.range_pinv(u) if u is not None else None
    return left, right
