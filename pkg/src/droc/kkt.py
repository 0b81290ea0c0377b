"""First-order optimality certificate at a candidate (v, y).

The multipliers are identified with the worst-case probabilities q* of the
inner LP at the candidate control.  The moment residual is therefore
``||b - sum_i theta_i a^i||``; with the opposite sign (``b + sum ...``) the
condition cannot hold for nonnegative multipliers, since the first row
would read ``1 + sum theta_i = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ambiguity import build_moment_lp
from .integrator import Trajectory, integrate_batch
from .lp import solve_isp
from .outer import projected_gradient

SIGN_NOTE = "moment condition evaluated as b - sum theta_i a^i (theta = worst-case probabilities)"

DEFAULT_TOLERANCES = {
    "moment": 1e-6,
    "complementarity": 1e-6,
    "stationarity": 1e-3,
    "costate_terminal": 1e-9,
}


@dataclass
class KKTCertificate:
    theta: np.ndarray
    costate_terminal_residual: float
    moment_residual: float
    stationarity_residual: float
    complementarity_residual: float
    raw_stationarity_residual: float
    piece_gradient: np.ndarray
    costates: dict = field(default_factory=dict)
    note: str = SIGN_NOTE

    def residuals(self):
        return {
            "moment": self.moment_residual,
            "complementarity": self.complementarity_residual,
            "stationarity": self.stationarity_residual,
            "costate_terminal": self.costate_terminal_residual,
        }

    def passes(self, tolerances=None):
        tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
        return all(val <= tol[key] for key, val in self.residuals().items())

    def to_text(self, tolerances=None):
        tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
        lines = [
            f"moment_residual = {self.moment_residual:.6e}",
            f"complementarity_residual = {self.complementarity_residual:.6e}",
            f"stationarity_residual = {self.stationarity_residual:.6e}",
            f"raw_stationarity_residual = {self.raw_stationarity_residual:.6e}",
            f"costate_terminal_residual = {self.costate_terminal_residual:.6e}",
            "theta = " + " ".join(f"{t:.6g}" for t in self.theta),
        ]
        lines += [f"tol_{k} = {v:g}" for k, v in tol.items()]
        lines.append(f"passed = {str(self.passes(tolerances)).lower()}")
        lines.append(f"note = {self.note}")
        return "\n".join(lines) + "\n"


def integrate_costates(model, grid, p, theta, traj: Trajectory, interpolation="hermite"):
    """Backward RK4 for lambda' = -lambda df/dx with lambda(1) = theta dh/dx.

    ``p`` and ``theta`` may be arrays (one per scenario row of ``traj``).
    Returns ``(lam, lam_mid)``: costates at the mesh points, shape
    ``(m, N+1, n_x)``, and at the step midpoints, ``(m, N, n_x)``.  The forward
    state between mesh points is interpolated linearly or by cubic Hermite.
    """
    ps = np.atleast_1d(np.asarray(p, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    mesh, piece = traj.mesh, traj.piece_index
    states = traj.states
    m, N1, n_x = states.shape
    controls = grid.values[piece]  # (N, n_u)
    mid = _midpoint_states(model, grid, ps, traj, interpolation)

    lam = np.zeros((m, N1, n_x))
    lam_mid = np.zeros((m, N1 - 1, n_x))
    lam[:, -1] = theta[:, None] * model.cost_grad(states[:, -1])
    fx = model.rhs_jac_x
    for s in range(N1 - 2, -1, -1):
        u = controls[s]
        h = mesh[s + 1] - mesh[s]
        J1 = fx(states[:, s + 1], u, ps)
        Jm = fx(mid[:, s], u, ps)
        J0 = fx(states[:, s], u, ps)
        # integrate tau = 1 - t forward: dlam/dtau = lam J
        L = lam[:, s + 1]
        k1 = np.einsum("mi,mij->mj", L, J1)
        k2 = np.einsum("mi,mij->mj", L + 0.5 * h * k1, Jm)
        k3 = np.einsum("mi,mij->mj", L + 0.5 * h * k2, Jm)
        k4 = np.einsum("mi,mij->mj", L + h * k3, J0)
        lam[:, s] = L + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        end_slope = np.einsum("mi,mij->mj", lam[:, s], J0)
        lam_mid[:, s] = _hermite_mid_value(L, lam[:, s], k1, end_slope, h)
    return lam, lam_mid


def _hermite_mid_value(l1, l0, dtau1, dtau0, h):
    # tau-derivatives at both ends; midpoint of the cubic interpolant
    return 0.5 * (l0 + l1) + h / 8.0 * (dtau1 - dtau0)


def _midpoint_states(model, grid, ps, traj, interpolation):
    states = traj.states
    if interpolation == "linear":
        return 0.5 * (states[:, :-1] + states[:, 1:])
    if interpolation != "hermite":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    controls = grid.values[traj.piece_index]
    N = states.shape[1] - 1
    slopes_left = np.stack([model.rhs(states[:, s], controls[s], ps) for s in range(N)], axis=1)
    slopes_right = np.stack([model.rhs(states[:, s + 1], controls[s], ps) for s in range(N)], axis=1)
    h = np.diff(traj.mesh)[None, :, None]
    return 0.5 * (states[:, :-1] + states[:, 1:]) + h / 8.0 * (slopes_left - slopes_right)


def costate_gradient(model, grid, ps, lam, lam_mid, traj):
    """Per-piece integrals of sum_i lambda^i df/du, by Simpson on every step.

    Returns an ``(n, n_u)`` array: the gradient of sum_i theta_i h_i with
    respect to the control values.
    """
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    mesh, piece = traj.mesh, traj.piece_index
    states = traj.states
    controls = grid.values[piece]
    mid = _midpoint_states(model, grid, ps, traj, "hermite")
    out = np.zeros((grid.n, grid.n_u))
    fu = model.rhs_jac_u
    for s in range(mesh.size - 1):
        u = controls[s]
        h = mesh[s + 1] - mesh[s]
        a = np.einsum("mi,mij->j", lam[:, s], fu(states[:, s], u, ps))
        b = np.einsum("mi,mij->j", lam_mid[:, s], fu(mid[:, s], u, ps))
        c = np.einsum("mi,mij->j", lam[:, s + 1], fu(states[:, s + 1], u, ps))
        out[piece[s]] += h / 6.0 * (a + 4.0 * b + c)
    return out


def verify(problem, v, y, interpolation="hermite") -> KKTCertificate:
    """Optimality residuals of ``(v, y)`` for the penalty problem's data.

    ``problem`` is a :class:`droc.outer.PenaltyProblem`; only its model,
    grid, ambiguity data and integration settings are used.
    """
    grid = problem.grid.with_values(v)
    y = np.asarray(y, dtype=float)
    ps = problem.support.points
    traj = integrate_batch(problem.model, grid, ps, problem.steps_per_piece, threads=problem.threads)
    costs = problem.model.cost(traj.terminal_states)
    data = build_moment_lp(problem.spec, problem.support, costs)
    theta = solve_isp(data).primal

    moment = float(np.abs(data.b - data.A @ theta).max())
    slack = data.A.T @ y - costs
    complementarity = float(np.abs(theta * slack).max())

    lam, lam_mid = integrate_costates(problem.model, grid, ps, theta, traj, interpolation)
    terminal = theta[:, None] * problem.model.cost_grad(traj.terminal_states)
    terminal_res = float(np.abs(lam[:, -1] - terminal).max())
    r = costate_gradient(problem.model, grid, ps, lam, lam_mid, traj)
    flat = r.reshape(-1)
    lower = np.tile(grid.box.lower, grid.n)
    upper = np.tile(grid.box.upper, grid.n)
    projected = projected_gradient(flat, grid.flat(), lower, upper, tol=1e-12)
    active = theta > 0
    return KKTCertificate(
        theta=theta,
        costate_terminal_residual=terminal_res,
        moment_residual=moment,
        stationarity_residual=float(np.abs(projected).max(initial=0.0)),
        complementarity_residual=complementarity,
        raw_stationarity_residual=float(np.abs(flat).max(initial=0.0)),
        piece_gradient=r,
        costates={int(i): lam[i] for i in np.flatnonzero(active)},
    )
