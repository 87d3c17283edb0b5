"""Problem contract, counters and the built-in problem library."""

from __future__ import annotations

import numpy as np

from .base import (
    Bounds,
    CountedProblem,
    EvalCounters,
    KktPoint,
    NlpProblem,
    NonlinearPart,
    fd_step,
)
from .library import HS113, RandQP, Toy1D
from .pde import GridOperators, InversePoisson, PoissonBoltzmann

__all__ = [
    "Bounds",
    "CountedProblem",
    "EvalCounters",
    "KktPoint",
    "NlpProblem",
    "NonlinearPart",
    "fd_step",
    "HS113",
    "RandQP",
    "Toy1D",
    "GridOperators",
    "InversePoisson",
    "PoissonBoltzmann",
    "PROBLEMS",
    "make_problem",
    "wrap_with_counters",
    "random_interior_point",
]


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# name -> (factory, {param: converter})
_FAMILIES = {
    "toy1d": (lambda **kw: Toy1D(bounded=False, **kw), {"x0": float}),
    "toy1d-bounded": (lambda **kw: Toy1D(bounded=True, **kw), {"x0": float}),
    "randqp": (
        RandQP,
        {
            "n": int,
            "m": int,
            "seed": int,
            "bounds": _as_bool,
            "n_lower": int,
            "n_active": int,
            "n_box": int,
            "dependent": _as_bool,
        },
    ),
    "hs113": (HS113, {}),
    "invpoisson-fd": (InversePoisson, {"N": int, "alpha": float}),
    "poisson-boltzmann-fd": (PoissonBoltzmann, {"N": int, "alpha": float}),
}

PROBLEMS = tuple(_FAMILIES)

_ALIASES = {"grid": "N"}


def make_problem(name, params=None):
    """Build a library problem from a name and a key-value map.

    Values may be strings (as they arrive from the command line) or already
    typed.  ``grid`` is accepted as an alias for ``N``.
    """
    if name not in _FAMILIES:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    factory, schema = _FAMILIES[name]
    kwargs = {}
    for key, value in (params or {}).items():
        key = _ALIASES.get(key, key)
        if key not in schema:
            raise ValueError(f"problem {name!r} does not accept parameter {key!r}")
        try:
            kwargs[key] = schema[key](value)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad value for {name} parameter {key!r}: {value!r}") from exc
    return factory(**kwargs)


def wrap_with_counters(problem):
    """Return ``(wrapped, counters)``; the wrapper shares the counter object."""
    wrapped = CountedProblem(problem)
    return wrapped, wrapped.counters


def random_interior_point(problem, rng, spread=1.0):
    """Random strictly interior point near ``x0``.

    Free components get Gaussian perturbations; bounded ones are drawn so that
    they stay at least a small margin away from their bounds.
    """
    lo, up = problem.bounds.lower, problem.bounds.upper
    x0 = np.asarray(problem.x0, dtype=float)
    x = x0 + spread * rng.standard_normal(problem.n)
    both = np.isfinite(lo) & np.isfinite(up)
    only_lo = np.isfinite(lo) & ~np.isfinite(up)
    only_up = ~np.isfinite(lo) & np.isfinite(up)
    x[both] = lo[both] + (up[both] - lo[both]) * rng.uniform(0.1, 0.9, both.sum())
    x[only_lo] = lo[only_lo] + (x0[only_lo] - lo[only_lo]) * rng.uniform(0.5, 1.5, only_lo.sum())
    x[only_up] = up[only_up] - (up[only_up] - x0[only_up]) * rng.uniform(0.5, 1.5, only_up.sum())
    return x
