"""Controlled ODE models x' = f(x, u, p) with a terminal (Mayer) cost h(x).

All model callables are batched over scenarios: ``x`` has shape ``(m, n_x)``,
``u`` has shape ``(n_u,)`` (shared by every scenario) and ``p`` has shape
``(m,)``.  ``rhs`` returns ``(m, n_x)``, ``rhs_jac_x`` returns
``(m, n_x, n_x)`` and ``rhs_jac_u`` returns ``(m, n_x, n_u)``.  ``cost`` and
``cost_grad`` accept ``(..., n_x)``.

Time is normalized to [0, 1]; models built for a physical horizon fold the
horizon length into the right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, DivisionByZero, NumericalBlowup

BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class DynamicsModel:
    n_x: int
    n_u: int
    t_f: float
    x0: np.ndarray
    rhs: Callable
    rhs_jac_x: Callable
    rhs_jac_u: Callable
    cost: Callable
    cost_grad: Callable
    name: str = "model"
    # optional fused evaluator (x, u, p) -> (f, df/dx, df/du) sharing intermediates
    rhs_all: Callable | None = None

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 1:
            raise ValueError("n_x and n_u must be at least 1")
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.n_x,):
            raise DimensionMismatch(f"x0 has {x0.size} components, expected {self.n_x}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class ControlBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionMismatch("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n_u(self):
        return self.lower.size

    def contains(self, u, tol=0.0):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class FedBatchParams:
    """Kinetic constants of the microbial fed-batch process.

    ``m_S`` is the nominal maintenance rate; when a model is integrated the
    uncertain scenario value is passed as the parameter ``p`` instead.
    """

    d_X: float = 0.05
    mu_m: float = 2.7
    K_S: float = 280.0
    S_star: float = 100.0
    Y_S: float = 0.082
    rho_S: float = 945.0
    m_S: float = 2.2

    def __post_init__(self):
        for name in ("d_X", "mu_m", "K_S", "S_star", "Y_S", "rho_S", "m_S"):
            if not getattr(self, name) > 0:
                raise ValueError(f"FedBatchParams.{name} must be strictly positive")


def _batched(model, x, u, p):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if x.shape[-1] != model.n_x or u.shape[-1] != model.n_u:
        raise DimensionMismatch(
            f"expected x with {model.n_x} and u with {model.n_u} components, "
            f"got {x.shape[-1]} and {u.shape[-1]}"
        )
    if p.shape[0] != x.shape[0]:
        p = np.broadcast_to(p, (x.shape[0],))
    return x, u, p


def eval_rhs(model, x, u, p):
    """Evaluate f(x, u, p) for a single state (or a batch of states)."""
    single = np.ndim(x) == 1
    xb, ub, pb = _batched(model, x, u, p)
    dx = model.rhs(xb, ub, pb)
    if not np.all(np.isfinite(dx)):
        raise NumericalBlowup("non-finite right-hand side")
    return dx[0] if single else dx


def eval_jacobians(model, x, u, p):
    single = np.ndim(x) == 1
    xb, ub, pb = _batched(model, x, u, p)
    jx = model.rhs_jac_x(xb, ub, pb)
    ju = model.rhs_jac_u(xb, ub, pb)
    return (jx[0], ju[0]) if single else (jx, ju)


def fedbatch_model(params: FedBatchParams, t_f: float = 25.0, x0=(0.1, 20.0, 3.0)) -> DynamicsModel:
    """Fed-batch fermentation on normalized time; state is [X, S, V].

    The right-hand side is ``t_f * f`` and the cost is the negative terminal
    biomass.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,):
        raise DimensionMismatch("fed-batch initial state must be [X, S, V]")
    d_X, mu_m, K_S = params.d_X, params.mu_m, params.K_S
    S_star, Y_S, rho_S = params.S_star, params.Y_S, params.rho_S

    def unpack(x):
        X, S, V = x[:, 0], x[:, 1], x[:, 2]
        if np.any(V == 0.0):
            raise DivisionByZero("fed-batch volume reached zero")
        return X, S, V

    def growth(S):
        mu = mu_m * S / (S + K_S) * (1.0 - S / S_star)
        dmu = mu_m * (K_S / (S + K_S) ** 2 * (1.0 - S / S_star) - S / ((S + K_S) * S_star))
        return mu, dmu

    def rhs(x, u, p):
        X, S, V = unpack(x)
        mu, _ = growth(S)
        q_S = p + mu / Y_S
        feed = u[..., 0]
        out = np.empty_like(x)
        out[:, 0] = (mu - d_X) * X
        out[:, 1] = -q_S * X + (rho_S - S) / V * feed
        out[:, 2] = feed
        return t_f * out

    def jac_x(x, u, p):
        X, S, V = unpack(x)
        mu, dmu = growth(S)
        q_S = p + mu / Y_S
        feed = u[..., 0]
        J = np.zeros(x.shape + (3,))
        J[:, 0, 0] = mu - d_X
        J[:, 0, 1] = dmu * X
        J[:, 1, 0] = -q_S
        J[:, 1, 1] = -dmu / Y_S * X - feed / V
        J[:, 1, 2] = -(rho_S - S) * feed / V**2
        return t_f * J

    def jac_u(x, u, p):
        _, S, V = unpack(x)
        J = np.zeros(x.shape + (1,))
        J[:, 1, 0] = (rho_S - S) / V
        J[:, 2, 0] = 1.0
        return t_f * J

    def rhs_all(x, u, p):
        X, S, V = unpack(x)
        mu, dmu = growth(S)
        q_S = p + mu / Y_S
        feed = u[..., 0]
        m = x.shape[0]
        feed_gain = (rho_S - S) / V
        out = np.empty((m, 3))
        out[:, 0] = (mu - d_X) * X
        out[:, 1] = -q_S * X + feed_gain * feed
        out[:, 2] = feed
        J = np.zeros((m, 3, 3))
        J[:, 0, 0] = mu - d_X
        J[:, 0, 1] = dmu * X
        J[:, 1, 0] = -q_S
        J[:, 1, 1] = -dmu / Y_S * X - feed / V
        J[:, 1, 2] = -feed_gain * feed / V
        Ju = np.zeros((m, 3, 1))
        Ju[:, 1, 0] = feed_gain
        Ju[:, 2, 0] = 1.0
        return t_f * out, t_f * J, t_f * Ju

    def cost(x):
        return -np.asarray(x)[..., 0]

    def cost_grad(x):
        g = np.zeros(np.shape(x))
        g[..., 0] = -1.0
        return g

    return DynamicsModel(
        n_x=3, n_u=1, t_f=t_f, x0=x0,
        rhs=rhs, rhs_jac_x=jac_x, rhs_jac_u=jac_u,
        cost=cost, cost_grad=cost_grad, name="fedbatch", rhs_all=rhs_all,
    )


def growth_rate(params: FedBatchParams, S):
    S = np.asarray(S, dtype=float)
    return params.mu_m * S / (S + params.K_S) * (1.0 - S / params.S_star)


def linear_toy(a=0.0, c=0.0, x0=0.0, cost="square", t_f=1.0) -> DynamicsModel:
    """Scalar model x' = a*x + u + c*p with h(x) = x**2 or h(x) = -x.

    With ``a = c = 0`` this is the pure integrator x' = u; with ``a = 1`` and a
    zero control it is x' = x.
    """
    if cost not in ("square", "neg", "zero"):
        raise ValueError(f"unknown toy cost {cost!r}")

    def rhs(x, u, p):
        return t_f * (a * x + u[..., :1] + c * p[:, None])

    def jac_x(x, u, p):
        return np.full(x.shape + (1,), t_f * a)

    def jac_u(x, u, p):
        return np.full(x.shape + (1,), t_f * 1.0)

    if cost == "square":
        h, dh = (lambda x: np.asarray(x)[..., 0] ** 2), (lambda x: 2.0 * np.asarray(x, dtype=float))
    elif cost == "neg":
        h, dh = (lambda x: -np.asarray(x)[..., 0]), (lambda x: -np.ones(np.shape(x)))
    else:
        h, dh = (lambda x: np.zeros(np.shape(x)[:-1])), (lambda x: np.zeros(np.shape(x)))

    return DynamicsModel(
        n_x=1, n_u=1, t_f=t_f, x0=np.array([x0], dtype=float),
        rhs=rhs, rhs_jac_x=jac_x, rhs_jac_u=jac_u, cost=h, cost_grad=dh,
        name="toy:linear",
    )


def zero_toy() -> DynamicsModel:
    """f = 0 and h = 0: every worst-case expectation is zero."""
    model = linear_toy(a=0.0, c=0.0, x0=0.0, cost="zero")

    def rhs(x, u, p):
        return np.zeros_like(x)

    def jac_u(x, u, p):
        return np.zeros(x.shape + (1,))

    return DynamicsModel(
        n_x=1, n_u=1, t_f=1.0, x0=model.x0, rhs=rhs,
        rhs_jac_x=model.rhs_jac_x, rhs_jac_u=jac_u,
        cost=model.cost, cost_grad=model.cost_grad, name="toy:zero",
    )


@dataclass
class JacobianCheck:
    max_rel_error_x: float
    max_rel_error_u: float
    samples: int = field(default=0)

    @property
    def worst(self):
        return max(self.max_rel_error_x, self.max_rel_error_u)


def check_jacobians(model, xs, us, ps, rel_step=1e-6) -> JacobianCheck:
    """Compare analytic Jacobians with central differences at sample points.

    Each step is ``rel_step * max(1, |component|)``.  The error reported per
    sample is ``||FD - J|| / ||J||`` in the Frobenius norm.
    """
    worst_x = worst_u = 0.0
    for x, u, p in zip(np.atleast_2d(xs), np.atleast_2d(us), np.atleast_1d(ps)):
        jx, ju = eval_jacobians(model, x, u, p)
        fd_x = np.empty_like(jx)
        for k in range(model.n_x):
            h = rel_step * max(1.0, abs(x[k]))
            e = np.zeros(model.n_x)
            e[k] = h
            fd_x[:, k] = (eval_rhs(model, x + e, u, p) - eval_rhs(model, x - e, u, p)) / (2 * h)
        fd_u = np.empty_like(ju)
        for k in range(model.n_u):
            h = rel_step * max(1.0, abs(u[k]))
            e = np.zeros(model.n_u)
            e[k] = h
            fd_u[:, k] = (eval_rhs(model, x, u + e, p) - eval_rhs(model, x, u - e, p)) / (2 * h)
        worst_x = max(worst_x, _rel(fd_x, jx))
        worst_u = max(worst_u, _rel(fd_u, ju))
    return JacobianCheck(worst_x, worst_u, samples=len(np.atleast_1d(ps)))


def _rel(approx, exact):
    scale = np.linalg.norm(exact)
    err = np.linalg.norm(approx - exact)
    return err / scale if scale > 0 else err
