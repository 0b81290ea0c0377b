"""Command-line front end.

Exit codes: 0 on success or convergence, 2 on a soft failure (iteration cap
reached, a residual above tolerance, a failed benchmark row), 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from .ambiguity import build_moment_lp, discretize_density, mesh_width, moment_discretization_error
from .bench import FIGURE_COLUMNS, figure_rows, format_table, load_case, run_checks
from .config import ProblemConfig, SolverConfig, load_config, parse_config
from .errors import ConfigError, DROCError
from .kkt import DEFAULT_TOLERANCES, verify
from .lp import lp_certificate
from .outer import (
    TRACE_COLUMNS,
    check_merit_gradient,
    multistart_init,
    reoptimize_dual,
    solve,
)
from .outputs import atomic_write, fmt, read_solution, solution_rows, write_csv, write_manifest

logger = logging.getLogger("droc")

EXIT_OK, EXIT_ERROR, EXIT_SOFT = 0, 1, 2
BENCH_SEED = 42
GRADIENT_TOL = 1e-4


def _threads(args):
    if getattr(args, "threads", None) is not None:
        return max(1, int(args.threads))
    env = os.environ.get("DROC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DROC_THREADS must be an integer, got {env!r}") from None
    return 1


def _config(args) -> ProblemConfig:
    path = getattr(args, "config_path", None) or getattr(args, "config", None)
    if path is None:
        raise ConfigError("a config file is required (--config PATH)")
    return load_config(path)


def _out_dir(args, cfg=None):
    out = getattr(args, "out", None) or (cfg.output.directory if cfg is not None else "out")
    os.makedirs(out, exist_ok=True)
    return out


def _seed(args, default):
    seed = getattr(args, "seed", None)
    return int(default if seed is None else seed)


def _tolerances(cfg):
    tol = dict(DEFAULT_TOLERANCES, gradient=GRADIENT_TOL)
    tol.update(cfg.solver.tolerances)
    return tol


def _worstcase_rows(support, costs, q):
    return [[i + 1, fmt(p), fmt(c), fmt(w)] for i, (p, c, w) in enumerate(zip(support.points, costs, q))]


# solve ---------------------------------------------------------------------

def run_solve(cfg: ProblemConfig, seed: int, threads=1):
    """Multistart (if enabled), penalty solve and dual re-solve at the returned control."""
    problem = cfg.build_problem(threads=threads)
    M = int(cfg.solver.multistart)
    if M > 0:
        start = multistart_init(problem, M, seed)
        logger.info("multistart: best y.b = %.6f (draw %d of %d)", start.yTb, start.draw, M)
        problem = replace(problem, v=start.v, y=start.y)
    else:
        res, _ = reoptimize_dual(problem, problem.v)
        problem = replace(problem, y=res.dual)
    report = solve(problem, cfg.build_schedule(), step_rule=cfg.solver.step_rule,
                   strategy=cfg.solver.strategy, precondition=cfg.solver.precondition,
                   gradient_check=cfg.solver.gradient_check)
    lp, costs = reoptimize_dual(problem, report.v)
    return problem, report, lp, costs


def cmd_solve(args):
    cfg = _config(args)
    seed = _seed(args, cfg.solver.seed)
    out = _out_dir(args, cfg)
    problem, report, lp, costs = run_solve(cfg, seed, _threads(args))
    tol = _tolerances(cfg)
    cert = verify(problem, report.v, lp.dual)

    extra = {f"y_{i + 1}": v for i, v in enumerate(lp.dual)}
    extra.update({f"y_penalty_{i + 1}": v for i, v in enumerate(report.y)})
    extra.update({
        "objective": report.objective, "objective_lp": lp.objective, "merit": report.merit,
        "G_eps": report.G_eps, "max_g": report.max_g, "pg_norm": report.pg_norm,
        "epsilon": report.epsilon, "rho": report.rho, "status": report.status,
    })
    files = [os.path.join(out, n) for n in ("solution.csv", "worstcase.csv", "kkt.txt")]
    header, rows = solution_rows(report.grid, extra)
    write_csv(files[0], header, rows)
    write_csv(files[1], ["scenario_index", "p", "cost", "q"], _worstcase_rows(problem.support, costs, lp.primal))
    atomic_write(files[2], "y_source = dual LP at the returned control\n" + cert.to_text(tol))
    if cfg.output.trace:
        files.append(os.path.join(out, "trace.csv"))
        write_csv(files[-1], TRACE_COLUMNS, [[fmt(v) if not isinstance(v, int) else v for v in r.row()]
                                             for r in report.trace])
    write_manifest(out, "solve", cfg.digest(), seed, __version__, files)
    print(f"status = {report.status}")
    print(f"objective = {report.objective:.6f}")
    print(f"objective_lp = {lp.objective:.6f}")
    print(f"gap = {abs(report.objective - lp.objective):.3e}")
    print(f"outer_iterations = {len(report.trace)}")
    print(f"evaluations = {report.evaluations}")
    return EXIT_OK if report.converged else EXIT_SOFT


# inner ---------------------------------------------------------------------

def cmd_inner(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    values, _ = read_solution(args.control_file)
    grid = cfg.build_grid(values)
    problem = cfg.build_problem(threads=_threads(args), grid=grid)
    lp, costs = reoptimize_dual(problem, grid.flat())
    data = build_moment_lp(problem.spec, problem.support, costs)
    cert = lp_certificate(data, lp)
    primal = float(costs @ lp.primal)
    dual = float(lp.dual @ data.b)
    lines = [
        "q = " + " ".join(f"{v:.6g}" for v in lp.primal),
        "y = " + " ".join(f"{v:.10g}" for v in lp.dual),
        f"primal_objective = {primal:.10g}",
        f"dual_objective = {dual:.10g}",
        f"duality_gap = {abs(primal - dual):.3e}",
        f"complementarity = {cert['complementarity']:.3e}",
    ]
    text = "\n".join(lines) + "\n"
    files = [os.path.join(out, "inner.txt"), os.path.join(out, "worstcase.csv")]
    atomic_write(files[0], text)
    write_csv(files[1], ["scenario_index", "p", "cost", "q"], _worstcase_rows(problem.support, costs, lp.primal))
    write_manifest(out, "inner", cfg.digest(), None, __version__, files)
    print(text, end="")
    return EXIT_OK


# check ---------------------------------------------------------------------

def cmd_check(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    values, keyed = read_solution(args.solution_file)
    try:
        y = np.array([float(keyed[f"y_{i}"]) for i in (1, 2, 3)])
    except KeyError:
        raise ConfigError(f"{args.solution_file} has no y_1..y_3 rows") from None
    grid = cfg.build_grid(values)
    problem = replace(cfg.build_problem(threads=_threads(args), grid=grid), v=grid.flat(), y=y)
    if "rho" in keyed:
        problem = replace(problem, rho=float(keyed["rho"]))
    tol = _tolerances(cfg)
    cert = verify(problem, grid.flat(), y)
    grad = check_merit_gradient(problem)
    ok = cert.passes({k: v for k, v in tol.items() if k != "gradient"}) and grad.max_rel_error <= tol["gradient"]
    text = cert.to_text({k: v for k, v in tol.items() if k != "gradient"})
    text += (f"gradient_fd_max_rel_error = {grad.max_rel_error:.6e}\n"
             f"tol_gradient = {tol['gradient']:g}\n"
             f"all_passed = {str(ok).lower()}\n")
    path = os.path.join(out, "check.txt")
    atomic_write(path, text)
    write_manifest(out, "check", cfg.digest(), None, __version__, [path])
    print(text, end="")
    return EXIT_OK if ok else EXIT_SOFT


# discretize ----------------------------------------------------------------

def cmd_discretize(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    spec = cfg.build_spec()
    density = cfg.build_density()
    m = int(cfg.ambiguity.m)
    rows, lines, ok = [], [], True
    for cells in (m, 2 * m):
        support, weights = discretize_density(spec, density, cells, mode=cfg.ambiguity.placement)
        e1, e2 = moment_discretization_error(spec, support, weights)
        dp = mesh_width(spec, cells)
        b1, b2 = dp, 2.0 * spec.p_upper * dp
        ok = ok and e1 <= b1 and e2 <= b2
        rows += [[cells, i + 1, fmt(p), fmt(w)] for i, (p, w) in enumerate(zip(support.points, weights))]
        lines.append(f"m = {cells}: e1 = {e1:.6e} (bound {b1:.6e}), e2 = {e2:.6e} (bound {b2:.6e})")
    files = [os.path.join(out, "discretize.csv"), os.path.join(out, "discretize.txt")]
    write_csv(files[0], ["m", "index", "p", "weight"], rows)
    text = "\n".join(lines) + f"\nwithin_bounds = {str(ok).lower()}\n"
    atomic_write(files[1], text)
    write_manifest(out, "discretize", cfg.digest(), None, __version__, files)
    print(text, end="")
    return EXIT_OK if ok else EXIT_SOFT


# bench ---------------------------------------------------------------------

def bench_config(case, solver: SolverConfig | None = None) -> ProblemConfig:
    """Problem config equivalent to a benchmark case."""
    params = {f.name: getattr(case.params, f.name) for f in fields(case.params)}
    raw = {
        "model": {"name": "fedbatch", "params": params, "x0": list(case.x0), "t_f": case.t_f},
        "ambiguity": {"mu": case.spec.mu, "sigma": case.spec.sigma, "p_lower": case.spec.p_lower,
                      "p_upper": case.spec.p_upper, "m": case.m},
        "control": {"n": case.n_pieces, "lower": case.box.lower.tolist(), "upper": case.box.upper.tolist()},
        "solver": asdict(solver or SolverConfig()),
    }
    return parse_config(json.dumps(raw, sort_keys=True))


def cmd_bench(args):
    case = load_case(getattr(args, "case", None))
    cfg = _config(args) if (getattr(args, "config", None) or getattr(args, "config_path", None)) else None
    cfg = cfg or bench_config(case)
    seed = _seed(args, BENCH_SEED)
    out = _out_dir(args)
    solved = {}

    def solve_fn():
        _, report, lp, _ = run_solve(cfg, seed, _threads(args))
        solved["report"] = report
        return report.objective, lp.objective

    checks = run_checks(case, None if args.no_solve else solve_fn)
    files = []
    strategies = {"reference": case.reference_grid(),
                  "constant_0.01": case.grid(np.full((case.n_pieces, 1), 0.01))}
    if "report" in solved:
        strategies["solved"] = solved["report"].grid
    for name, grid in strategies.items():
        path = os.path.join(out, f"figure_{name}.csv")
        write_csv(path, FIGURE_COLUMNS, [[fmt(r[0]), r[1], fmt(r[2]), fmt(r[3]), fmt(r[4]), fmt(r[5])]
                                         for r in figure_rows(case, grid)])
        files.append(path)
    table = format_table(checks)
    files.append(os.path.join(out, "bench.txt"))
    atomic_write(files[-1], table)
    write_manifest(out, "bench", cfg.digest(), seed, __version__, files)
    print(table, end="")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SOFT


# entry point ---------------------------------------------------------------

def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="problem config (JSON)")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--seed", type=int, default=default, help="random seed for multistart")
    parser.add_argument("--threads", type=int, default=default,
                        help="worker threads for scenario integration (env DROC_THREADS)")
    parser.add_argument("--quiet", action="store_true", default=default, help="only print results")


def build_parser():
    parser = argparse.ArgumentParser(prog="droc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"droc {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the robust control problem")
    p.add_argument("config_path", nargs="?")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("inner", help="worst-case distribution for a fixed control")
    p.add_argument("config_path", nargs="?")
    p.add_argument("--control", dest="control_file", required=True, help="control CSV")
    p.set_defaults(func=cmd_inner)

    p = sub.add_parser("check", help="optimality certificate of a solution file")
    p.add_argument("config_path", nargs="?")
    p.add_argument("--solution", dest="solution_file", required=True, help="solution.csv from solve")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("discretize", help="discretize the configured density")
    p.add_argument("config_path", nargs="?")
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("bench", help="fed-batch benchmark reproduction table")
    p.add_argument("--case", help="benchmark data file (default: packaged)")
    p.add_argument("--no-solve", action="store_true", help="skip the full solve rows")
    p.set_defaults(func=cmd_bench)

    for action in sub.choices.values():
        _global_flags(action, suppress=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DROCError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
