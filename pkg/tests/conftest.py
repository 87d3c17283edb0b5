import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


class QuadraticProblem:
    """``min x^T H x / 2 + g0^T x  s.t.  A^T x = b`` with given bounds (test helper)."""

    def __new__(cls, H, g0, A, b, lower=None, upper=None, x0=None, linear=True):
        from exactpen.model.base import Bounds, NlpProblem

        class _Quadratic(NlpProblem):
            def __init__(self):
                self.name = "quadratic"
                self.H = np.asarray(H, float)
                self.g0 = np.asarray(g0, float)
                self.A = np.asarray(A, float)
                self.b = np.asarray(b, float)
                self.n, self.m = self.A.shape
                lo = np.full(self.n, -np.inf) if lower is None else np.asarray(lower, float)
                up = np.full(self.n, np.inf) if upper is None else np.asarray(upper, float)
                self.bounds = Bounds(lo, up)
                self.x0 = np.zeros(self.n) if x0 is None else np.asarray(x0, float)
                self.linear_indices = tuple(range(self.m)) if linear else ()

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

        return _Quadratic()


@pytest.fixture
def quadratic_problem():
    return QuadraticProblem


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
