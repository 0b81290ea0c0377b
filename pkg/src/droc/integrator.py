"""Fixed-step RK4 for the state and forward sensitivity systems.

The mesh is aligned with the control breakpoints: every control piece is
split into ``steps_per_piece`` equal substeps, so no step straddles a
discontinuity of the control.  Scenarios (parameter values) are integrated
as one vectorized batch; they never interact.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import BLOWUP_LIMIT
from .errors import MissingSensitivities, NumericalBlowup

DEFAULT_STEPS_PER_PIECE = 10


@dataclass
class Trajectory:
    """States (and optionally sensitivities) of ``m`` scenarios on one mesh.

    ``states`` has shape ``(m, N+1, n_x)``.  ``terminal_sensitivity`` is the
    ``(m, n_x, n_v)`` matrix S(1); ``sensitivities`` holds S at every mesh
    point, ``(m, N+1, n_x, n_v)``, only when requested.
    """

    mesh: np.ndarray
    states: np.ndarray
    scenario_params: np.ndarray
    piece_index: np.ndarray
    terminal_sensitivity: np.ndarray | None = None
    sensitivities: np.ndarray | None = None
    single: bool = False

    @property
    def m(self):
        return self.states.shape[0]

    @property
    def terminal_states(self):
        return self.states[:, -1, :]

    def scenario(self, i):
        return Trajectory(
            mesh=self.mesh,
            states=self.states[i:i + 1],
            scenario_params=self.scenario_params[i:i + 1],
            piece_index=self.piece_index,
            terminal_sensitivity=None if self.terminal_sensitivity is None else self.terminal_sensitivity[i:i + 1],
            sensitivities=None if self.sensitivities is None else self.sensitivities[i:i + 1],
            single=True,
        )


def build_mesh(breakpoints, steps_per_piece):
    """Mesh points and, per step, the index of the control piece it lies in."""
    if steps_per_piece < 1:
        raise ValueError("steps_per_piece must be at least 1")
    bp = np.asarray(breakpoints, dtype=float)
    n = bp.size - 1
    frac = np.arange(steps_per_piece) / steps_per_piece
    inner = (bp[:-1, None] + np.diff(bp)[:, None] * frac[None, :]).reshape(-1)
    mesh = np.append(inner, bp[-1])
    # exact breakpoints, no accumulated rounding
    mesh[::steps_per_piece] = bp
    piece = np.repeat(np.arange(n), steps_per_piece)
    return mesh, piece


def _guard(x):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BLOWUP_LIMIT):
        raise NumericalBlowup("state left the admissible range during integration")


def _integrate_states(model, controls, ps, mesh, piece):
    # controls: (n, n_u) shared by all rows, or (n, m, n_u) with one control per row
    m = ps.size
    x = np.tile(model.x0, (m, 1))
    out = np.empty((m, mesh.size, model.n_x))
    out[:, 0] = x
    f = model.rhs
    for s in range(mesh.size - 1):
        u = controls[piece[s]]
        h = mesh[s + 1] - mesh[s]
        k1 = f(x, u, ps)
        k2 = f(x + 0.5 * h * k1, u, ps)
        k3 = f(x + 0.5 * h * k2, u, ps)
        k4 = f(x + h * k3, u, ps)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(x)
        out[:, s + 1] = x
    return out


def _integrate_augmented(model, grid, ps, mesh, piece, store):
    m = ps.size
    n_x, n_u = model.n_x, model.n_u
    n_v = grid.n_v
    x = np.tile(model.x0, (m, 1))
    S = np.zeros((m, n_x, n_v))
    out = np.empty((m, mesh.size, n_x))
    out[:, 0] = x
    full = np.zeros((m, mesh.size, n_x, n_v)) if store else None
    fused = model.rhs_all
    if fused is None:
        def fused(xs, u, p):
            return model.rhs(xs, u, p), model.rhs_jac_x(xs, u, p), model.rhs_jac_u(xs, u, p)

    def stage(xs, Ss, u, lo, hi):
        dx, jx, ju = fused(xs, u, ps)
        dS = jx @ Ss
        # only the columns of the active piece are forced
        dS[:, :, lo:hi] += ju
        return dx, dS

    for s in range(mesh.size - 1):
        k = piece[s]
        u = grid.values[k]
        lo, hi = k * n_u, (k + 1) * n_u
        h = mesh[s + 1] - mesh[s]
        # sensitivity columns of later pieces are still identically zero
        Sa = S[:, :, :hi]
        k1x, k1s = stage(x, Sa, u, lo, hi)
        k2x, k2s = stage(x + 0.5 * h * k1x, Sa + 0.5 * h * k1s, u, lo, hi)
        k3x, k3s = stage(x + 0.5 * h * k2x, Sa + 0.5 * h * k2s, u, lo, hi)
        k4x, k4s = stage(x + h * k3x, Sa + h * k3s, u, lo, hi)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        S[:, :, :hi] = Sa + (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        _guard(x)
        out[:, s + 1] = x
        if store:
            full[:, s + 1] = S
    return out, S, full


def integrate_batch(model, grid, ps, steps_per_piece=DEFAULT_STEPS_PER_PIECE,
                    sensitivities=False, store_sensitivities=False, threads=1) -> Trajectory:
    """Integrate every scenario in ``ps`` under the control ``grid``.

    With ``threads > 1`` the scenarios are split into contiguous chunks run on
    a thread pool; results are identical to the single-batch run.
    """
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    mesh, piece = build_mesh(grid.breakpoints, steps_per_piece)
    want_sens = sensitivities or store_sensitivities

    def run(chunk):
        if want_sens:
            return _integrate_augmented(model, grid, chunk, mesh, piece, store_sensitivities)
        return _integrate_states(model, grid.values, chunk, mesh, piece), None, None

    if threads > 1 and ps.size > 1:
        chunks = np.array_split(ps, min(threads, ps.size))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
        states = np.concatenate([p[0] for p in parts])
        term = np.concatenate([p[1] for p in parts]) if want_sens else None
        full = np.concatenate([p[2] for p in parts]) if store_sensitivities else None
    else:
        states, term, full = run(ps)
    return Trajectory(mesh, states, ps, piece, term, full)


def integrate_many_controls(model, grid, values, ps, steps_per_piece=DEFAULT_STEPS_PER_PIECE):
    """Terminal states for every (control, scenario) pair in one vectorized pass.

    ``values`` has shape ``(B, n, n_u)``; returns ``(B, m, n_x)``.
    """
    values = np.asarray(values, dtype=float)
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    B, m = values.shape[0], ps.size
    mesh, piece = build_mesh(grid.breakpoints, steps_per_piece)
    rows = np.repeat(values, m, axis=0)  # (B*m, n, n_u)
    controls = np.ascontiguousarray(np.transpose(rows, (1, 0, 2)))
    states = _integrate_states(model, controls, np.tile(ps, B), mesh, piece)
    return states[:, -1, :].reshape(B, m, model.n_x)


def integrate(model, grid, p, steps_per_piece=DEFAULT_STEPS_PER_PIECE) -> Trajectory:
    traj = integrate_batch(model, grid, [p], steps_per_piece)
    traj.single = True
    return traj


def integrate_with_sensitivities(model, grid, p, steps_per_piece=DEFAULT_STEPS_PER_PIECE,
                                 store=False) -> Trajectory:
    traj = integrate_batch(model, grid, [p], steps_per_piece, sensitivities=True,
                           store_sensitivities=store)
    traj.single = True
    return traj


def terminal_costs(model, traj: Trajectory):
    return model.cost(traj.terminal_states)


def cost_gradient(model, traj: Trajectory):
    """Gradient of h(x(1)) with respect to the flat control parameters.

    Returns ``(m, n_v)``, or ``(n_v,)`` for a single-scenario trajectory.
    """
    if traj.terminal_sensitivity is None:
        raise MissingSensitivities("trajectory was integrated without sensitivities")
    dh = model.cost_grad(traj.terminal_states)
    grad = np.einsum("mi,miv->mv", dh, traj.terminal_sensitivity)
    return grad[0] if traj.single else grad
