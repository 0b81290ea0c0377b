"""Piecewise-constant control parametrization on normalized time [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ControlBox
from .errors import DimensionMismatch, OutOfDomain


@dataclass(frozen=True)
class ControlGrid:
    """Control pieces ``values[k]`` held on ``[breakpoints[k], breakpoints[k+1])``.

    Flattening is row-major: ``v = [v^1_1, ..., v^1_nu, v^2_1, ...]``.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    box: ControlBox

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        if bp.size < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1) if self.box.n_u == 1 else vals.reshape(1, -1)
        if vals.shape != (bp.size - 1, self.box.n_u):
            raise DimensionMismatch(
                f"values must have shape {(bp.size - 1, self.box.n_u)}, got {vals.shape}"
            )
        if not self.box.contains(vals, tol=1e-12):
            raise OutOfDomain("control values violate the box")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def n_u(self):
        return self.values.shape[1]

    @property
    def n_v(self):
        return self.values.size

    def flat(self):
        return self.values.reshape(-1).copy()

    def with_values(self, values):
        values = np.asarray(values, dtype=float).reshape(self.n, self.n_u)
        return replace(self, values=values)

    def piece_lengths(self):
        return np.diff(self.breakpoints)


def uniform_grid(n, box: ControlBox, values=None) -> ControlGrid:
    if n < 1:
        raise ValueError("need at least one control piece")
    if values is None:
        values = np.tile(box.lower, (n, 1))
    return ControlGrid(np.linspace(0.0, 1.0, n + 1), values, box)


def eval_control(grid: ControlGrid, t: float):
    """Control value at normalized time ``t`` (right-continuous; closed at 1)."""
    if not 0.0 <= t <= 1.0:
        raise OutOfDomain(f"t = {t} outside [0, 1]")
    k = int(np.searchsorted(grid.breakpoints, t, side="right")) - 1
    return grid.values[min(k, grid.n - 1)]


def direction_index(j: int, n_u: int, n: int | None = None):
    """Map the 1-based flat parameter index ``j`` to ``(piece k, component l)``.

    Both outputs are 1-based; a zero remainder maps to ``l = n_u``.
    """
    if j < 1 or (n is not None and j > n * n_u):
        raise OutOfDomain(f"parameter index {j} out of range")
    k = (j - 1) // n_u + 1
    l = (j - 1) % n_u + 1
    return k, l


def flat_index(k: int, l: int, n_u: int) -> int:
    return (k - 1) * n_u + l


def project_to_box(grid: ControlGrid, raw) -> ControlGrid:
    raw = np.asarray(raw, dtype=float).reshape(grid.n, grid.n_u)
    return grid.with_values(np.clip(raw, grid.box.lower, grid.box.upper))
