"""Moment ambiguity sets: mean/variance data, discrete supports and the
discretization of continuous densities into cell probabilities."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatch, InvalidDensity, MassMismatch, TooFewPoints

PLACEMENTS = ("endpoints", "midpoint")


@dataclass(frozen=True)
class AmbiguitySpec:
    """Distributions of a scalar parameter on ``[p_lower, p_upper]`` with mean
    ``mu`` and standard deviation ``sigma``."""

    mu: float
    sigma: float
    p_lower: float
    p_upper: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.p_lower < self.p_upper:
            raise ValueError("p_lower must be below p_upper")
        if not self.p_lower <= self.mu <= self.p_upper:
            raise ValueError("mu must lie inside the support interval")
        # a two-moment distribution on [l, u] exists iff (mu - l)(u - mu) >= sigma^2
        slack = (self.mu - self.p_lower) * (self.p_upper - self.mu) - self.sigma**2
        if slack < -1e-12 * max(1.0, self.sigma**2):
            raise ValueError(
                f"no distribution on [{self.p_lower}, {self.p_upper}] has mean {self.mu} "
                f"and standard deviation {self.sigma}"
            )

    @property
    def second_moment(self):
        return self.mu**2 + self.sigma**2


@dataclass(frozen=True)
class DiscreteSupport:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        if pts.size < 1:
            raise ValueError("support is empty")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("support points must be distinct and sorted")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def m(self):
        return self.points.size


@dataclass(frozen=True)
class MomentLPData:
    """``max c.q  s.t.  A q = b, q >= 0`` with columns ``a^i = [1, p_i, p_i^2]``."""

    b: np.ndarray
    A: np.ndarray
    c: np.ndarray

    @property
    def m(self):
        return self.A.shape[1]

    def column(self, i):
        return self.A[:, i]


def cell_edges(spec: AmbiguitySpec, m: int):
    return np.linspace(spec.p_lower, spec.p_upper, m + 1)


def characteristic_grid(spec: AmbiguitySpec, m: int, mode: str = "endpoints") -> DiscreteSupport:
    """One characteristic element per equal-width cell of ``[p_lower, p_upper]``.

    ``endpoints`` spreads the elements evenly from ``p_lower`` to ``p_upper``
    inclusive (element ``i`` still lies in cell ``i``); ``midpoint`` takes the
    cell centres.
    """
    if mode not in PLACEMENTS:
        raise ValueError(f"unknown placement mode {mode!r}")
    if mode == "endpoints":
        if m < 3:
            raise TooFewPoints(f"need at least 3 support points, got {m}")
        i = np.arange(m)
        pts = spec.p_lower + i / (m - 1) * (spec.p_upper - spec.p_lower)
        pts[-1] = spec.p_upper
        return DiscreteSupport(pts)
    if m < 1:
        raise TooFewPoints("need at least one cell")
    edges = cell_edges(spec, m)
    return DiscreteSupport(0.5 * (edges[:-1] + edges[1:]))


def build_moment_lp(spec: AmbiguitySpec, support: DiscreteSupport, costs) -> MomentLPData:
    costs = np.asarray(costs, dtype=float).reshape(-1)
    if costs.size != support.m:
        raise DimensionMismatch(f"{costs.size} costs for {support.m} support points")
    if support.points[0] < spec.p_lower - 1e-12 or support.points[-1] > spec.p_upper + 1e-12:
        raise ValueError("support leaves the ambiguity interval")
    p = support.points
    A = np.vstack([np.ones_like(p), p, p**2])
    b = np.array([1.0, spec.mu, spec.second_moment])
    return MomentLPData(b=b, A=A, c=costs)


# densities ---------------------------------------------------------------

def uniform_density(spec: AmbiguitySpec):
    width = spec.p_upper - spec.p_lower

    def psi(p):
        return np.full(np.shape(p), 1.0 / width)

    return psi


def truncnorm_density(spec: AmbiguitySpec, mu: float, sigma: float):
    """Normal(mu, sigma) truncated to the ambiguity interval, renormalized."""
    a = (spec.p_lower - mu) / sigma
    b = (spec.p_upper - mu) / sigma
    dist = stats.truncnorm(a, b, loc=mu, scale=sigma)
    return dist.pdf


def table_density(path):
    """Piecewise-linear density through the (p, psi) rows of a two-column CSV."""
    ps, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                p, v = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            ps.append(p)
            vals.append(v)
    if len(ps) < 2:
        raise InvalidDensity("density table needs at least two rows")
    ps, vals = np.asarray(ps), np.asarray(vals)
    if np.any(vals < 0):
        raise InvalidDensity("density table has a negative entry")
    order = np.argsort(ps)
    ps, vals = ps[order], vals[order]

    def psi(p):
        return np.interp(p, ps, vals, left=0.0, right=0.0)

    return psi


def discretize_density(spec: AmbiguitySpec, density, m: int, quad_points: int = 64,
                       mode: str = "endpoints", mass_tol: float = 1e-6):
    """Cell probabilities ``q_d`` of ``density`` on ``m`` equal cells.

    Each cell integral uses composite Simpson with ``quad_points`` panels
    (rounded up to even).  Returns the characteristic support and weights
    renormalized to sum to one.
    """
    support = characteristic_grid(spec, m, mode)
    edges = cell_edges(spec, m)
    panels = quad_points + (quad_points % 2)
    weights = np.empty(m)
    simpson = np.ones(panels + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    for i in range(m):
        nodes = np.linspace(edges[i], edges[i + 1], panels + 1)
        vals = np.asarray(density(nodes), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise InvalidDensity("density is negative or non-finite on the support")
        h = (edges[i + 1] - edges[i]) / panels
        weights[i] = h / 3.0 * simpson @ vals
    total = weights.sum()
    if abs(total - 1.0) > mass_tol:
        raise MassMismatch(f"density integrates to {total:.9g} on the support, not 1")
    return support, weights / total


def mesh_width(spec: AmbiguitySpec, m: int) -> float:
    return float(np.max(np.diff(cell_edges(spec, m))))


def moment_discretization_error(spec: AmbiguitySpec, support: DiscreteSupport, weights):
    """Absolute mismatch of the first and second moments of the discretized law."""
    w = np.asarray(weights, dtype=float)
    p = support.points
    e1 = abs(p @ w - spec.mu)
    e2 = abs((p**2) @ w - spec.second_moment)
    return float(e1), float(e2)
