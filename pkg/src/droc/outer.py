"""Outer minimization over the control parameters v and the dual vector y.

The end-point constraints ``h_i - y.a^i <= 0`` are smoothed, summed and
penalized quadratically:

    J(v, y) = y.b + rho/2 * G_eps(v, y)**2,   G_eps = sum_i smooth(g_i, eps)

J is minimized by projected gradient with Armijo backtracking inside a
penalty/tolerance schedule.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .ambiguity import AmbiguitySpec, DiscreteSupport, MomentLPData, build_moment_lp
from .control import ControlGrid
from .errors import InfeasibleSupport, LineSearchFailure, MaxIterations, MissingSensitivities
from .integrator import (
    DEFAULT_STEPS_PER_PIECE,
    Trajectory,
    cost_gradient,
    integrate_batch,
    integrate_many_controls,
)
from .lp import check_feasible_support, solve_dual_isp

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
MIN_STEP = 1e-14
TRACE_COLUMNS = ("k", "rho", "omega", "eta", "merit", "yTb", "G_eps", "max_g", "pg_norm")
STRATEGIES = ("joint", "alt-direction")


@dataclass(frozen=True)
class AlgorithmSchedule:
    rho0: float = 10.0
    alpha1: float = 10.0
    alpha2: float = 0.5
    alpha3: float = 0.5
    omega_star: float = 1e-5
    eta_star: float = 1e-6
    max_outer: int = 30
    max_inner: int = 200
    # geometric decrease of the smoothing width per outer round; 1.0 keeps it fixed
    epsilon_decay: float = 1.0

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.alpha1 > 1:
            raise ValueError("alpha1 must exceed 1")
        if not 0 < self.alpha2 < 1 or not 0 < self.alpha3 < 1:
            raise ValueError("alpha2 and alpha3 must lie in (0, 1)")
        if not (self.omega_star > 0 and self.eta_star > 0):
            raise ValueError("final tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ValueError("epsilon_decay must lie in (0, 1]")

    @property
    def omega0(self):
        return 1.0 / self.rho0

    @property
    def eta0(self):
        return 1.0 / self.rho0**0.1


@dataclass(frozen=True)
class PenaltyProblem:
    model: object
    grid: ControlGrid
    spec: AmbiguitySpec
    support: DiscreteSupport
    y: np.ndarray
    v: np.ndarray
    epsilon: float = 1e-3
    rho: float = 10.0
    steps_per_piece: int = DEFAULT_STEPS_PER_PIECE
    threads: int = 1

    def __post_init__(self):
        if not self.epsilon > 0 or not self.rho >= 0:
            raise ValueError("epsilon must be positive and rho nonnegative")
        v = np.asarray(self.v, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(3)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "y", y)

    @property
    def b(self):
        return np.array([1.0, self.spec.mu, self.spec.second_moment])

    @property
    def A(self):
        p = self.support.points
        return np.vstack([np.ones_like(p), p, p**2])

    @property
    def lower(self):
        return np.tile(self.grid.box.lower, self.grid.n)

    @property
    def upper(self):
        return np.tile(self.grid.box.upper, self.grid.n)

    def control(self):
        return self.grid.with_values(self.v)

    def trajectories(self, sensitivities=True) -> Trajectory:
        return integrate_batch(self.model, self.control(), self.support.points,
                               self.steps_per_piece, sensitivities=sensitivities,
                               threads=self.threads)


def constraint_value(costs, data: MomentLPData, y):
    """g_i = h_i - y.a^i; the constraints are feasible when every g_i <= 0."""
    return np.asarray(costs, dtype=float) - data.A.T @ np.asarray(y, dtype=float)


def smooth_constraint(g, epsilon):
    g = np.asarray(g, dtype=float)
    quad = (g + epsilon) ** 2 / (4.0 * epsilon)
    return np.where(g < -epsilon, 0.0, np.where(g > epsilon, g, quad))


def smooth_constraint_slope(g, epsilon):
    g = np.asarray(g, dtype=float)
    return np.where(g < -epsilon, 0.0, np.where(g > epsilon, 1.0, (g + epsilon) / (2.0 * epsilon)))


@dataclass
class MeritValue:
    value: float
    grad_v: np.ndarray | None
    grad_y: np.ndarray | None
    yTb: float
    G: float
    g: np.ndarray
    costs: np.ndarray

    @property
    def grad(self):
        return np.concatenate([self.grad_v, self.grad_y])

    @property
    def max_g(self):
        return float(self.g.max())


def merit(problem: PenaltyProblem, traj: Trajectory, gradient=True) -> MeritValue:
    """Merit value and gradients at ``(problem.v, problem.y)`` from ``traj``."""
    costs = problem.model.cost(traj.terminal_states)
    b, A = problem.b, problem.A
    y = problem.y
    g = costs - A.T @ y
    G = float(smooth_constraint(g, problem.epsilon).sum())
    yTb = float(y @ b)
    value = yTb + 0.5 * problem.rho * G**2
    grad_v = grad_y = None
    if gradient:
        if traj.terminal_sensitivity is None:
            raise MissingSensitivities("merit gradient needs scenario sensitivities")
        weight = problem.rho * G * smooth_constraint_slope(g, problem.epsilon)
        dh = cost_gradient(problem.model, traj)
        dh = dh.reshape(1, -1) if dh.ndim == 1 else dh
        grad_v = weight @ dh
        grad_y = b - A @ weight
    return MeritValue(value, grad_v, grad_y, yTb, G, g, costs)


def projected_gradient(grad, v, lower, upper, tol=0.0):
    """Zero the components that would push a bound-active v_i out of the box."""
    d = np.array(grad, dtype=float)
    n_v = len(v)
    dv = d[:n_v]
    at_lo = v <= lower + tol
    at_hi = v >= upper - tol
    dv[at_lo] = np.minimum(0.0, dv[at_lo])
    dv[at_hi] = np.maximum(0.0, dv[at_hi])
    d[:n_v] = dv
    return d


def projected_gradient_norm(grad, v, lower, upper, tol=0.0) -> float:
    return float(np.abs(projected_gradient(grad, v, lower, upper, tol)).max(initial=0.0))


@dataclass
class TraceRecord:
    k: int
    rho: float
    omega: float
    eta: float
    merit: float
    yTb: float
    G_eps: float
    max_g: float
    pg_norm: float
    inner_iterations: int = 0

    def row(self):
        return [getattr(self, c) for c in TRACE_COLUMNS]


@dataclass
class SolveReport:
    v: np.ndarray
    y: np.ndarray
    grid: ControlGrid
    objective: float
    merit: float
    G_eps: float
    max_g: float
    pg_norm: float
    epsilon: float
    rho: float
    converged: bool
    status: str
    trace: list = field(default_factory=list)
    merit_history: list = field(default_factory=list)
    evaluations: int = 0
    seconds: float = 0.0
    costs: np.ndarray | None = None
    strategy: str = "joint"
    # max relative FD error of the merit gradient at each outer start, when requested
    gradient_checks: list = field(default_factory=list)

    @property
    def feasibility_slack(self):
        """Bound on max g_i certified at termination (eta_star plus smoothing width)."""
        return self.max_g


class _Evaluator:
    """Merit evaluations in solver coordinates.

    With preconditioning the solver works on ``w`` in the unit box, with
    ``v = lower + (upper - lower) * w``, and on ``z`` with ``y = T z``, where
    ``y.a(p) = z0 + z1 (p - mu)/s + z2 ((p - mu)^2 - sigma^2)/s^2``.  In these
    coordinates ``y.b = z0``.  Without preconditioning both maps are identities.
    """

    def __init__(self, base: PenaltyProblem, precondition=True):
        self.base = base
        self.lower = base.lower
        self.upper = base.upper
        self.n_v = base.grid.n_v
        self.count = 0
        width = self.upper - self.lower
        if precondition:
            self.v_scale = np.where(width > 0, width, 1.0)
            self.v_shift = self.lower.copy()
            mu, sig = base.spec.mu, base.spec.sigma
            s = max(abs(base.spec.p_lower - mu), abs(base.spec.p_upper - mu))
            self.T = np.array([
                [1.0, -mu / s, (mu**2 - sig**2) / s**2],
                [0.0, 1.0 / s, -2.0 * mu / s**2],
                [0.0, 0.0, 1.0 / s**2],
            ])
        else:
            self.v_scale = np.ones(self.n_v)
            self.v_shift = np.zeros(self.n_v)
            self.T = np.eye(3)
        self.T_inv = np.linalg.inv(self.T)
        self.box_lo = (self.lower - self.v_shift) / self.v_scale
        self.box_hi = (self.upper - self.v_shift) / self.v_scale

    def to_solver(self, v, y):
        return np.concatenate([(v - self.v_shift) / self.v_scale, self.T_inv @ y])

    def to_original(self, w):
        v = self.v_shift + self.v_scale * w[:self.n_v]
        return np.clip(v, self.lower, self.upper), self.T @ w[self.n_v:]

    def solver_grad(self, ev):
        return np.concatenate([ev.grad_v * self.v_scale, self.T.T @ ev.grad_y])

    def __call__(self, w, rho, epsilon, gradient=True):
        v, y = self.to_original(w)
        prob = replace(self.base, v=v, y=y, rho=rho, epsilon=epsilon)
        traj = prob.trajectories(sensitivities=gradient)
        self.count += 1
        return merit(prob, traj, gradient=gradient)

    def pg_norm(self, w, ev):
        v, _ = self.to_original(w)
        return projected_gradient_norm(ev.grad, v, self.lower, self.upper)


def _line_search(evaluate, w, cur, pg, rho, epsilon, t0):
    """Backtracking by halving along the projected negative gradient."""
    lo, hi, n_v = evaluate.box_lo, evaluate.box_hi, evaluate.n_v
    pg2 = float(pg @ pg)
    t = t0
    while t >= MIN_STEP:
        trial = w - t * pg
        trial[:n_v] = np.clip(trial[:n_v], lo, hi)
        new = evaluate(trial, rho, epsilon)
        if new.value <= cur.value - ARMIJO_C1 * t * pg2:
            return trial, new, t
        t *= 0.5
    raise LineSearchFailure(f"no Armijo decrease for steps down to {MIN_STEP:g}")


def _inner_solve(evaluate, w, cur, rho, epsilon, omega, max_inner, step_rule, history):
    """Projected gradient on the merit at fixed (rho, epsilon).

    Stops when the projected-gradient norm in the original coordinates is
    below ``omega``.
    """
    n_v = evaluate.n_v
    prev = None
    for it in range(max_inner):
        if evaluate.pg_norm(w, cur) <= omega:
            return w, cur, it, False
        pg = projected_gradient(evaluate.solver_grad(cur), w[:n_v], evaluate.box_lo, evaluate.box_hi)
        t0 = 1.0
        if step_rule == "bb" and prev is not None:
            dw, dg = w - prev[0], pg - prev[1]
            curv = float(dw @ dg)
            if curv > 0:
                t0 = min(1e6, max(1e-10, float(dw @ dw) / curv))
        prev = (w.copy(), pg)
        try:
            w, cur, _ = _line_search(evaluate, w, cur, pg, rho, epsilon, t0)
        except LineSearchFailure:
            # no representable decrease left at this penalty level
            return w, cur, it, True
        history.append(cur.value)
    return w, cur, max_inner, False


def solve(problem: PenaltyProblem, schedule: AlgorithmSchedule = AlgorithmSchedule(),
          step_rule: str = "bb", strategy: str = "joint", precondition: bool = True,
          raise_on_cap: bool = False, callback=None, gradient_check: bool = False) -> SolveReport:
    """Quadratic-penalty outer loop started from ``(problem.v, problem.y)``.

    After each inner projected-gradient solve: if G_eps <= eta_k the
    feasibility tolerance is tightened, otherwise the penalty grows; the
    gradient tolerance shrinks every round.  Stops once G_eps <= eta_star and
    the projected-gradient norm is <= omega_star.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if step_rule not in ("unit", "bb"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    if strategy == "alt-direction":
        return _solve_alternating(problem, schedule, step_rule, raise_on_cap, callback)
    started = time.perf_counter()
    evaluate = _Evaluator(problem, precondition)
    w = evaluate.to_solver(np.clip(problem.v, problem.lower, problem.upper), problem.y)
    rho, omega, eta = schedule.rho0, schedule.omega0, schedule.eta0
    epsilon = problem.epsilon
    cur = evaluate(w, rho, epsilon)
    trace, history = [], [cur.value]
    converged = False

    checks = []
    for k in range(schedule.max_outer):
        if gradient_check:
            v_k, y_k = evaluate.to_original(w)
            err = check_merit_gradient(replace(problem, v=v_k, y=y_k, rho=rho, epsilon=epsilon)).max_rel_error
            checks.append(err)
            if err > 1e-4:
                logger.warning("outer %d: merit gradient differs from finite differences by %.2e", k, err)
        w, cur, inner_its, stalled = _inner_solve(
            evaluate, w, cur, rho, epsilon, omega, schedule.max_inner, step_rule, history,
        )
        pg_norm = evaluate.pg_norm(w, cur)
        rec = TraceRecord(k, rho, omega, eta, cur.value, cur.yTb, cur.G, cur.max_g, pg_norm, inner_its)
        trace.append(rec)
        logger.info("outer %d rho=%.3g omega=%.3g eta=%.3g J=%.6f yTb=%.6f G=%.3g pg=%.3g (%d inner%s)",
                    k, rho, omega, eta, cur.value, cur.yTb, cur.G, pg_norm, inner_its,
                    ", stalled" if stalled else "")
        if callback is not None:
            callback(rec)
        if cur.G <= eta:
            if cur.G <= schedule.eta_star and pg_norm <= schedule.omega_star:
                converged = True
                break
            eta *= schedule.alpha3
        else:
            rho *= schedule.alpha1
        omega *= schedule.alpha2
        if schedule.epsilon_decay < 1.0:
            epsilon *= schedule.epsilon_decay
        cur = evaluate(w, rho, epsilon)
        history.append(cur.value)

    v, y = evaluate.to_original(w)
    report = SolveReport(
        v=v, y=y, grid=problem.grid.with_values(v),
        objective=cur.yTb, merit=cur.value, G_eps=cur.G, max_g=cur.max_g,
        pg_norm=trace[-1].pg_norm if trace else float("nan"), epsilon=epsilon, rho=rho,
        converged=converged, status="converged" if converged else "max_iterations",
        trace=trace, merit_history=history, evaluations=evaluate.count,
        seconds=time.perf_counter() - started, costs=cur.costs, strategy="joint",
        gradient_checks=checks,
    )
    if not converged and raise_on_cap:
        raise MaxIterations(f"no convergence within {schedule.max_outer} outer iterations", report)
    return report


def _solve_alternating(problem, schedule, step_rule, raise_on_cap, callback):
    """Alternate an exact LP for y with projected-gradient steps on v.

    At fixed v the optimal y comes from the dual moment LP; the v-step
    descends the worst-case expectation, whose gradient is the
    q*-weighted sum of the scenario cost gradients.
    """
    started = time.perf_counter()
    lower, upper = problem.lower, problem.upper
    spec, support = problem.spec, problem.support
    evals = 0

    def worst_case(v, gradient=True):
        nonlocal evals
        prob = replace(problem, v=v)
        traj = prob.trajectories(sensitivities=gradient)
        evals += 1
        costs = problem.model.cost(traj.terminal_states)
        res = solve_dual_isp(build_moment_lp(spec, support, costs))
        grad = None
        if gradient:
            grad = res.primal @ cost_gradient(problem.model, traj).reshape(support.m, -1)
        return res, grad, costs

    v = np.clip(problem.v, lower, upper)
    res, grad, costs = worst_case(v)
    history, trace = [res.objective], []
    omega = schedule.omega0
    converged = False
    prev = None
    for k in range(schedule.max_outer * schedule.max_inner):
        pg = projected_gradient(grad, v, lower, upper)
        pg_norm = float(np.abs(pg).max(initial=0.0))
        if pg_norm <= schedule.omega_star:
            converged = True
            break
        t = 1.0
        if step_rule == "bb" and prev is not None:
            dz, dg = v - prev[0], pg - prev[1]
            curv = float(dz @ dg)
            if curv > 0:
                t = min(1e6, max(1e-10, float(dz @ dz) / curv))
        prev = (v.copy(), pg)
        pg2 = float(pg @ pg)
        while t >= MIN_STEP:
            trial = np.clip(v - t * pg, lower, upper)
            new = worst_case(trial)
            if new[0].objective <= res.objective - ARMIJO_C1 * t * pg2:
                break
            t *= 0.5
        else:
            break
        v = trial
        res, grad, costs = new
        history.append(res.objective)
        if k % schedule.max_inner == schedule.max_inner - 1:
            rec = TraceRecord(len(trace), 0.0, omega, 0.0, res.objective, res.objective, 0.0,
                              float((costs - res.dual @ problem.A).max()), pg_norm, schedule.max_inner)
            trace.append(rec)
            if callback is not None:
                callback(rec)
    pg_norm = projected_gradient_norm(grad, v, lower, upper)
    g = costs - problem.A.T @ res.dual
    trace.append(TraceRecord(len(trace), 0.0, omega, 0.0, res.objective, res.objective, 0.0,
                             float(g.max()), pg_norm, 0))
    report = SolveReport(
        v=v.copy(), y=res.dual.copy(), grid=problem.grid.with_values(v), objective=res.objective,
        merit=res.objective, G_eps=float(smooth_constraint(g, problem.epsilon).sum()),
        max_g=float(g.max()), pg_norm=pg_norm, epsilon=problem.epsilon, rho=0.0,
        converged=converged, status="converged" if converged else "max_iterations",
        trace=trace, merit_history=history, evaluations=evals,
        seconds=time.perf_counter() - started, costs=costs, strategy="alt-direction",
    )
    if not converged and raise_on_cap:
        raise MaxIterations("alternating strategy hit its iteration cap", report)
    return report


@dataclass
class MultistartResult:
    v: np.ndarray
    y: np.ndarray
    yTb: float
    draw: int
    values: np.ndarray


def multistart_init(problem: PenaltyProblem, M: int = 200, seed: int = 0) -> MultistartResult:
    """Best of ``M`` random box controls, each paired with its LP-optimal y.

    Every returned pair satisfies y.a^i >= h_i, i.e. is feasible for the
    dual problem.  Ties are broken by the lowest draw index.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    grid, support = problem.grid, problem.support
    if not check_feasible_support(problem.spec, support):
        raise InfeasibleSupport()
    rng = np.random.default_rng(seed)
    lo, hi = grid.box.lower, grid.box.upper
    draws = lo + (hi - lo) * rng.random((M, grid.n, grid.n_u))
    terminal = integrate_many_controls(problem.model, grid, draws, support.points,
                                       problem.steps_per_piece)
    values = np.empty(M)
    duals = np.empty((M, 3))
    for i in range(M):
        costs = problem.model.cost(terminal[i])
        res = solve_dual_isp(build_moment_lp(problem.spec, support, costs))
        values[i] = res.objective
        duals[i] = res.dual
    best = int(np.argmin(values))  # argmin returns the first minimum
    return MultistartResult(draws[best].reshape(-1), duals[best], float(values[best]), best, values)


def reoptimize_dual(problem: PenaltyProblem, v):
    """Exact worst-case value at fixed v: Dual-ISP on the scenario costs."""
    prob = replace(problem, v=v)
    traj = prob.trajectories(sensitivities=False)
    costs = problem.model.cost(traj.terminal_states)
    return solve_dual_isp(build_moment_lp(problem.spec, problem.support, costs)), costs


@dataclass
class GradientCheck:
    max_rel_error: float
    gradient: np.ndarray
    finite_difference: np.ndarray


def check_merit_gradient(problem: PenaltyProblem, step=1e-8) -> GradientCheck:
    """Central differences of the merit in every (v, y) coordinate.

    The error is ``max |fd - grad| / max |grad|``.  Steps are ``step`` times
    ``max(1, |z_j|)`` and are kept inside the control box.  Inside the
    smoothing band the merit's third derivatives scale like 1/epsilon, so the
    step must stay well below epsilon / |dg/dz|; larger steps show truncation
    error, not gradient error.
    """
    z = np.concatenate([problem.v, problem.y])
    n_v = problem.grid.n_v
    grad = merit(problem, problem.trajectories()).grad
    fd = np.empty_like(z)
    lo = np.concatenate([problem.lower, np.full(3, -np.inf)])
    hi = np.concatenate([problem.upper, np.full(3, np.inf)])

    def value(point):
        prob = replace(problem, v=point[:n_v], y=point[n_v:])
        return merit(prob, prob.trajectories(sensitivities=False), gradient=False).value

    for j in range(z.size):
        h = step * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] = min(z[j] + h, hi[j])
        zm[j] = max(z[j] - h, lo[j])
        fd[j] = (value(zp) - value(zm)) / (zp[j] - zm[j])
    scale = max(float(np.abs(grad).max()), 1e-300)
    return GradientCheck(float(np.abs(fd - grad).max() / scale), grad, fd)
