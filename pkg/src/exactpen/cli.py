"""Command-line harness: ``solve``, ``sweep``, ``threshold`` and ``check``.

Single runs print a JSON object (``"schema": 1``); sweeps print CSV.  Exit
status is 0 when the run succeeded (converged / all checks passed), 1 when
it did not, and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .diagnostics import backend_agreement, derivative_checks, refine_kkt_point, threshold_sigma, verify_kkt
from .model import PROBLEMS, make_problem, random_interior_point
from .model.base import NlpProblem
from .solver import SolverConfig, minimize

SCHEMA = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# fixed column order of sweep output
SWEEP_COLUMNS = (
    "problem",
    "params",
    "criterion",
    "eta",
    "sigma",
    "status",
    "Its.",
    "#f,g",
    "#Hv",
    "#Av",
    "#ATv",
    "f",
    "primal",
    "dual",
    "seconds",
)
_RESULT_COLUMNS = ("Its.", "#f,g", "#Hv", "#Av", "#ATv", "f", "primal", "dual")
_RECORD_KEYS = {"primal": "primal_residual", "dual": "dual_residual"}


class UsageError(Exception):
    pass


def _parse_params(items):
    params = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        params[key.strip()] = value.strip()
    return params


def _problem_from_args(args):
    params = _parse_params(args.param)
    if args.grid is not None:
        params["N"] = args.grid
    if args.problem == "randqp" and "seed" not in params:
        params["seed"] = args.seed
    try:
        return make_problem(args.problem, params), params
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _has_own_preconditioner(problem):
    return type(problem).preconditioner is not NlpProblem.preconditioner


def _config_from_args(args, problem, **overrides):
    backend = args.backend
    if backend == "auto":
        backend = "craig" if _has_own_preconditioner(problem) else "sne"
    values = dict(
        sigma=args.sigma,
        epsilon=args.epsilon,
        eta=args.eta,
        termination=args.criterion,
        hessian_mode=args.hessian,
        max_iterations=args.max_iters,
        sigma_update=args.sigma_update,
        explicit_linear=args.explicit_linear == "on",
        backend=backend,
        kind=args.system,
        preconditioner=args.preconditioner,
        sigma_min_bound=args.sigma_min_bound,
    )
    values.update(overrides)
    config = SolverConfig(**values)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(payload, out):
    _emit(json.dumps(_jsonable({"schema": SCHEMA, **payload}), indent=2) + "\n", out)


def run_record(name, params, config, report, seconds=None):
    """Flat record of one solve: problem, config echo, report fields and counters."""
    counters = report.counters.as_dict()
    record = {
        "problem": name,
        "params": dict(params),
        "config": {k: v for k, v in vars(config).items()},
        "status": report.status,
        "message": report.message,
        "Its.": report.iterations,
        "#f,g": counters["n_fg"],
        "#Hv": counters["n_Hv"],
        "#Av": counters["n_Av"],
        "#ATv": counters["n_ATv"],
        "counters": counters,
    }
    report_fields = report.to_dict()
    report_fields.pop("counters")
    record.update({k: v for k, v in report_fields.items() if k not in record})
    if seconds is not None:
        record["seconds"] = seconds
    return record


# --- subcommands -----------------------------------------------------------------


def cmd_solve(args):
    problem, params = _problem_from_args(args)
    config = _config_from_args(args, problem)
    start = time.perf_counter()
    report = minimize(problem, config)
    record = run_record(args.problem, params, config, report, time.perf_counter() - start)
    _emit_json({"command": "solve", **record}, args.out)
    return EXIT_OK if report.converged else EXIT_FAIL


def _sweep_row(task):
    args, criterion, eta = task
    problem, params = _problem_from_args(args)
    config = _config_from_args(args, problem, termination=criterion, eta=eta)
    start = time.perf_counter()
    try:
        report = minimize(problem, config)
    except Exception as exc:  # a failed row is reported, not fatal
        return {"problem": args.problem, "params": params, "criterion": criterion, "eta": eta,
                "sigma": config.sigma, "status": f"error: {exc}"}
    rec = run_record(args.problem, params, config, report, time.perf_counter() - start)
    rec.update(criterion=criterion, eta=eta)
    return rec


def _csv_row(rec):
    failed = rec.get("status") != "converged"
    row = {}
    for col in SWEEP_COLUMNS:
        value = rec.get(_RECORD_KEYS.get(col, col), "")
        if col == "params":
            value = ";".join(f"{k}={v}" for k, v in sorted(rec.get("params", {}).items()))
        elif failed and col in _RESULT_COLUMNS:
            value = "*"
        elif isinstance(value, float):
            value = f"{value:.6g}"
        row[col] = value
    return row


def cmd_sweep(args):
    problem, _ = _problem_from_args(args)
    _config_from_args(args, problem)  # validate flags before spawning work
    tasks = [(args, crit, eta) for crit in args.criteria for eta in args.etas]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_sweep_row, tasks))
    else:
        records = [_sweep_row(t) for t in tasks]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(_csv_row(rec))
    _emit(buf.getvalue(), args.out)
    return EXIT_OK if all(r.get("status") == "converged" for r in records) else EXIT_FAIL


def _kkt_point(problem, args):
    """Solve, then polish the result on its active set."""
    config = _config_from_args(args, problem, sigma_update="heuristic")
    report = minimize(problem, config)
    x, y, z = refine_kkt_point(problem, report.x, report.y)
    return report, x, y, z


def cmd_threshold(args):
    problem, params = _problem_from_args(args)
    report, x, y, z = _kkt_point(problem, args)
    kkt = verify_kkt(problem, x, y, z, tolerance=args.kkt_tol)
    payload = {"command": "threshold", "problem": args.problem, "params": params,
               "solve_status": report.status, "kkt": vars(kkt)}
    if not kkt.is_first_order:
        payload["error"] = "no first-order KKT point found; " + kkt.summary()
        _emit_json(payload, args.out)
        return EXIT_FAIL
    method = args.method
    if method == "auto":
        method = "dense" if problem.n <= 600 else "eigsh"
    for mode in ("implicit", "explicit"):
        th = threshold_sigma(problem, x, y, mode=mode, method=method, kkt_tol=args.kkt_tol)
        payload[f"sigma_star_{mode}"] = th.sigma_star
        payload[f"sigma_bar_{mode}"] = th.sigma_bar
        payload[f"eigen_residual_{mode}"] = th.eigen_residual
    _emit_json(payload, args.out)
    return EXIT_OK


def cmd_check(args):
    problem, params = _problem_from_args(args)
    sigma = args.sigma
    suites = {}
    plain = derivative_checks(problem, sigma, points=args.points, seed=args.seed)
    suites["implicit"] = plain
    if problem.linear_indices:
        suites["explicit"] = derivative_checks(problem, sigma, points=args.points, seed=args.seed, explicit=True)
    rng = np.random.default_rng(args.seed)
    x = random_interior_point(problem, rng)
    agreement = backend_agreement(problem, x, sigma)
    payload = {"command": "check", "problem": args.problem, "params": params, "sigma": sigma, "suites": {}}
    passed = agreement <= args.backend_tol
    for name, chk in suites.items():
        payload["suites"][name] = {
            "gradient_fd": chk.gradient_fd,
            "adjoint": chk.adjoint,
            "oracle": chk.oracle,
            "points": chk.points,
            "tolerances": chk.tolerances,
            "passed": chk.passed,
        }
        passed = passed and chk.passed
    payload["backend_agreement"] = {"max_relative_gap": agreement, "tolerance": args.backend_tol,
                                    "passed": agreement <= args.backend_tol}
    payload["passed"] = passed
    _emit_json(payload, args.out)
    return EXIT_OK if passed else EXIT_FAIL


# --- argument parsing ------------------------------------------------------------


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _criteria_list(text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in items if v not in ("residual", "error")]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"criteria must be residual and/or error, got {text!r}")
    return items


def _add_common(p, sigma_default=1.0):
    p.add_argument("--problem", required=True, choices=PROBLEMS)
    p.add_argument("--grid", type=int, default=None, help="grid size N for PDE problems")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="problem parameter (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=sigma_default)
    p.add_argument("--out", default=None, help="write the report here instead of stdout")


def _add_solver(p):
    p.add_argument("--eta", type=float, default=1e-10, help="inner solve tolerance")
    p.add_argument("--criterion", choices=("residual", "error"), default="residual")
    p.add_argument("--hessian", choices=("B1", "B2"), default="B2")
    p.add_argument("--explicit-linear", choices=("on", "off"), default="off")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--sigma-update", choices=("off", "heuristic"), default="off")
    p.add_argument("--backend", choices=("auto", "sne", "lu", "craig"), default="auto")
    p.add_argument("--system", choices=("symmetric", "unsymmetric"), default="symmetric")
    p.add_argument("--preconditioner", choices=("auto", "problem", "exact", "jacobi", "none"), default="auto")
    p.add_argument("--sigma-min-bound", type=float, default=None,
                   help="lower bound on the smallest singular value for error-based termination")


def build_parser():
    parser = argparse.ArgumentParser(prog="exactpen", description="Smooth exact penalty solver and diagnostics.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="minimize the penalty for one problem")
    _add_common(p)
    _add_solver(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="solve for several inner tolerances; CSV output")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--etas", type=_float_list, default=[1e-2, 1e-4, 1e-6, 1e-8, 1e-10])
    p.add_argument("--criteria", type=_criteria_list, default=["residual", "error"])
    p.add_argument("--jobs", type=int, default=1, help="rows solved in parallel")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("threshold", help="threshold penalty values at a computed KKT point")
    _add_common(p, sigma_default=10.0)
    _add_solver(p)
    p.add_argument("--method", choices=("auto", "dense", "eigsh"), default="auto")
    p.add_argument("--kkt-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("check", help="derivative and backend consistency checks")
    _add_common(p)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--backend-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2


if __name__ == "__main__":
    sys.exit(main())
