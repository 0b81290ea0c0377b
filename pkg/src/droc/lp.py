"""Dense two-phase primal simplex for the moment LP and its dual.

The inner problem is tiny (three equality rows), so a plain tableau with
Bland's rule is both fast and exact enough; the dual vector is recovered from
the final basis by one 3x3 solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ambiguity import AmbiguitySpec, DiscreteSupport, MomentLPData
from .errors import InfeasibleSupport, InternalError


class LPStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class LPResult:
    status: LPStatus
    primal: np.ndarray | None = None
    dual: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    basis: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status is LPStatus.OPTIMAL


PIVOT_TOL = 1e-11
FEAS_TOL = 1e-10


def _choose_entering(d, tol, rule):
    candidates = np.flatnonzero(d > tol)
    if candidates.size == 0:
        return None
    if rule == "dantzig":
        return int(candidates[np.argmax(d[candidates])])
    return int(candidates[0])


def _choose_leaving(T, basis, j):
    col = T[:-1, j]
    rows = np.flatnonzero(col > PIVOT_TOL)
    if rows.size == 0:
        return None
    ratios = T[rows, -1] / col[rows]
    best = ratios.min()
    # Bland tie-break: among minimal ratios, the lowest basic variable index
    tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
    return int(min(tied, key=lambda i: basis[i]))


def _pivot(T, basis, i, j):
    T[i] /= T[i, j]
    for r in range(T.shape[0]):
        if r != i and T[r, j] != 0.0:
            T[r] -= T[r, j] * T[i]
    basis[i] = j


def _run(T, basis, tol, rule, max_iter):
    """Maximize; the last row holds reduced costs and minus the objective."""
    it = 0
    while True:
        j = _choose_entering(T[-1, :-1], tol, rule)
        if j is None:
            return "optimal", it
        i = _choose_leaving(T, basis, j)
        if i is None:
            return "unbounded", it
        _pivot(T, basis, i, j)
        it += 1
        if it > max_iter:
            raise InternalError("simplex iteration limit exceeded")


def _phase_one(A, b):
    """Scale, flip and run phase one.

    Returns ``(T, basis, kept_rows, row_scale, iterations, feasible)``; on
    success ``T`` is the tableau over the original columns only.
    """
    r, n = A.shape
    scale = np.abs(A).max(axis=1)
    scale[scale == 0.0] = 1.0
    row_scale = 1.0 / scale
    row_scale[b * row_scale < 0] *= -1.0
    As = A * row_scale[:, None]
    bs = b * row_scale

    T = np.zeros((r + 1, n + r + 1))
    T[:r, :n] = As
    T[:r, n:n + r] = np.eye(r)
    T[:r, -1] = bs
    T[-1, :n] = As.sum(axis=0)
    T[-1, -1] = bs.sum()  # minus the phase-one objective (-sum of artificials)
    basis = list(range(n, n + r))
    _, it = _run(T, basis, PIVOT_TOL, "bland", 50 * (n + r) + 100)
    residual = T[-1, -1]
    if residual > FEAS_TOL * max(1.0, np.abs(bs).sum()):
        return None, None, None, row_scale, it, False

    # pivot zero-level artificials out, dropping redundant rows
    keep = []
    for i in range(r):
        if basis[i] >= n:
            row = np.abs(T[i, :n])
            j = int(np.argmax(row)) if row.size else -1
            if j >= 0 and row[j] > 1e-9:
                _pivot(T, basis, i, j)
                it += 1
                keep.append(i)
        else:
            keep.append(i)
    rows = keep + [r]
    T = np.hstack([T[rows, :n], T[rows, -1:]])
    basis = [basis[i] for i in keep]
    return T, basis, keep, row_scale, it, True


def simplex_max(A, b, c, rule="bland", max_iter=None) -> LPResult:
    """Solve ``max c.q  s.t.  A q = b, q >= 0``; dual is ``min y.b, A^T y >= c``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    r, n = A.shape
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivoting rule {rule!r}")
    T, basis, keep, row_scale, it1, feasible = _phase_one(A, b)
    if not feasible:
        return LPResult(LPStatus.INFEASIBLE, iterations=it1)

    cb = c[basis]
    T[-1, :-1] = c - cb @ T[:-1, :-1]
    T[-1, -1] = -cb @ T[:-1, -1]
    tol = 1e-11 * max(1.0, np.abs(c).max(initial=0.0))
    status, it2 = _run(T, basis, tol, rule, max_iter or 50 * (n + r) + 100)
    if status == "unbounded":
        return LPResult(LPStatus.UNBOUNDED, iterations=it1 + it2)

    # refine primal and dual from the final basis on the scaled data
    As = (A * row_scale[:, None])[keep]
    bs = (b * row_scale)[keep]
    B = As[:, basis]
    q = np.zeros(n)
    q[basis] = np.linalg.solve(B, bs)
    q[np.abs(q) < 1e-14] = 0.0
    y_scaled = np.zeros(r)
    y_scaled[keep] = np.linalg.solve(B.T, c[basis])
    y = y_scaled * row_scale
    return LPResult(
        LPStatus.OPTIMAL, primal=q, dual=y, objective=float(c @ q),
        iterations=it1 + it2, basis=sorted(basis),
    )


def solve_isp(data: MomentLPData, rule="bland") -> LPResult:
    """Worst-case expectation over distributions on the support matching the moments."""
    if data.m < 1:
        raise ValueError("empty support")
    res = simplex_max(data.A, data.b, data.c, rule=rule)
    if res.status is LPStatus.INFEASIBLE:
        raise InfeasibleSupport()
    if res.status is LPStatus.UNBOUNDED:
        raise InternalError("moment LP reported unbounded; its feasible set is a simplex")
    return res


def solve_dual_isp(data: MomentLPData, rule="bland") -> LPResult:
    """``min y.b  s.t.  y.a^i >= c_i``, read off the same simplex basis."""
    res = solve_isp(data, rule=rule)
    res.objective = float(res.dual @ data.b)
    return res


def check_feasible_support(spec: AmbiguitySpec, support: DiscreteSupport) -> bool:
    p = support.points
    A = np.vstack([np.ones_like(p), p, p**2])
    b = np.array([1.0, spec.mu, spec.second_moment])
    return _phase_one(A, b)[-1]


def lp_certificate(data: MomentLPData, res: LPResult):
    """Residuals of an optimal primal-dual pair: feasibility, gap, slackness."""
    q, y = res.primal, res.dual
    slack = data.A.T @ y - data.c
    return {
        "primal_infeasibility": float(np.abs(data.A @ q - data.b).max()),
        "negativity": float(max(0.0, -q.min())),
        "dual_infeasibility": float(max(0.0, -slack.min())),
        "gap": float(abs(data.c @ q - y @ data.b)),
        "complementarity": float(np.abs(q * slack).max()),
        "support_size": int(np.count_nonzero(q > 1e-10)),
    }
