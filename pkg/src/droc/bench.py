"""Fed-batch fermentation benchmark: reference data and reproduction harness."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ambiguity import AmbiguitySpec, DiscreteSupport, build_moment_lp, characteristic_grid
from .control import ControlGrid, uniform_grid
from .dynamics import ControlBox, FedBatchParams, fedbatch_model
from .integrator import DEFAULT_STEPS_PER_PIECE, integrate_batch
from .lp import LPResult, lp_certificate, solve_dual_isp, solve_isp

FIGURE_COLUMNS = ("t", "scenario_index", "m_S", "X", "S", "V")


@dataclass(frozen=True)
class BenchmarkCase:
    name: str
    params: FedBatchParams
    x0: tuple
    t_f: float
    spec: AmbiguitySpec
    m: int
    n_pieces: int
    box: ControlBox
    reference_control: np.ndarray
    reference_biomass: np.ndarray
    reference_q: np.ndarray
    J_star: float
    J_tilde_star: float
    format_version: int = 1

    def model(self):
        return fedbatch_model(self.params, t_f=self.t_f, x0=self.x0)

    def support(self) -> DiscreteSupport:
        return characteristic_grid(self.spec, self.m)

    def grid(self, values=None) -> ControlGrid:
        return uniform_grid(self.n_pieces, self.box, values)

    def reference_grid(self) -> ControlGrid:
        return self.grid(self.reference_control.reshape(self.n_pieces, -1))


def load_case(path=None) -> BenchmarkCase:
    """Read a benchmark case; the packaged fed-batch data by default."""
    if path is None:
        text = resources.files("droc").joinpath("data/fedbatch.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    mod, amb, ctl, ref = raw["model"], raw["ambiguity"], raw["control"], raw["reference"]
    return BenchmarkCase(
        name=raw["name"],
        params=FedBatchParams(**mod["params"]),
        x0=tuple(mod["x0"]),
        t_f=float(mod["t_f"]),
        spec=AmbiguitySpec(amb["mu"], amb["sigma"], amb["p_lower"], amb["p_upper"]),
        m=int(amb["m"]),
        n_pieces=int(ctl["n"]),
        box=ControlBox(ctl["lower"], ctl["upper"]),
        reference_control=np.asarray(ref["control"], dtype=float),
        reference_biomass=np.asarray(ref["terminal_biomass"], dtype=float),
        reference_q=np.asarray(ref["q_star"], dtype=float),
        J_star=float(ref["J_star"]),
        J_tilde_star=float(ref["J_tilde_star"]),
        format_version=int(raw.get("format_version", 1)),
    )


def reference_consistency(case: BenchmarkCase):
    """Expected cost and moments of the printed q* on the printed biomass list.

    Needs no simulation.
    """
    p = case.support().points
    q = case.reference_q
    return {
        "expected_cost": float(-(q @ case.reference_biomass)),
        "mean": float(q @ p),
        "second_moment": float(q @ p**2),
    }


def reproduce_trajectories(case: BenchmarkCase, steps_per_piece=DEFAULT_STEPS_PER_PIECE):
    """Terminal biomass of every scenario under the reference control."""
    traj = integrate_batch(case.model(), case.reference_grid(), case.support().points, steps_per_piece)
    return traj.terminal_states[:, 0].copy()


def worst_case_on(case: BenchmarkCase, biomass) -> LPResult:
    """Inner LP (and its dual) with costs ``-biomass``."""
    data = build_moment_lp(case.spec, case.support(), -np.asarray(biomass, dtype=float))
    return solve_dual_isp(data)


def reproduce_worst_case(case: BenchmarkCase, biomass=None):
    """Worst-case probabilities and expectation under the reference control."""
    if biomass is None:
        biomass = reproduce_trajectories(case)
    data = build_moment_lp(case.spec, case.support(), -np.asarray(biomass, dtype=float))
    res = solve_isp(data)
    return res.primal, res.objective


@dataclass
class BaselineResult:
    u: float
    biomass: np.ndarray
    terminal_states: np.ndarray
    q: np.ndarray
    objective: float

    @property
    def spread(self):
        return float(self.biomass.max() - self.biomass.min())


def constant_control_baseline(case: BenchmarkCase, u_const: float,
                              steps_per_piece=DEFAULT_STEPS_PER_PIECE) -> BaselineResult:
    grid = case.grid(np.full((case.n_pieces, case.box.n_u), float(u_const)))
    traj = integrate_batch(case.model(), grid, case.support().points, steps_per_piece)
    X = traj.terminal_states[:, 0].copy()
    q, obj = reproduce_worst_case(case, X)
    return BaselineResult(float(u_const), X, traj.terminal_states.copy(), q, obj)


def figure_rows(case: BenchmarkCase, grid: ControlGrid, steps_per_piece=DEFAULT_STEPS_PER_PIECE):
    """State trajectories of all scenarios as rows (t, scenario_index, m_S, X, S, V).

    ``t`` is in hours; scenario indices start at 1.
    """
    ps = case.support().points
    traj = integrate_batch(case.model(), grid, ps, steps_per_piece)
    rows = []
    for i, p in enumerate(ps):
        for t, x in zip(traj.mesh, traj.states[i]):
            rows.append((float(t * case.t_f), i + 1, float(p), float(x[0]), float(x[1]), float(x[2])))
    return rows


@dataclass
class BenchCheck:
    name: str
    passed: bool
    detail: str


def run_checks(case: BenchmarkCase, solve_fn=None):
    """Reproduction checks; ``solve_fn`` (no arguments, returning ``(J, J_tilde)``)
    adds the full-solve rows."""
    checks = []
    cons = reference_consistency(case)
    checks.append(BenchCheck("printed q* expected cost",
                             abs(cons["expected_cost"] - case.J_tilde_star) <= 1e-3,
                             f"{cons['expected_cost']:.5f} vs {case.J_tilde_star}"))
    checks.append(BenchCheck("printed q* mean", abs(cons["mean"] - case.spec.mu) <= 1e-3,
                             f"{cons['mean']:.5f} vs {case.spec.mu}"))
    checks.append(BenchCheck("printed q* second moment",
                             abs(cons["second_moment"] - case.spec.second_moment) <= 1e-3,
                             f"{cons['second_moment']:.5f} vs {case.spec.second_moment:.4f}"))
    in_box = bool(np.all((case.reference_control >= case.box.lower[0])
                         & (case.reference_control <= case.box.upper[0])))
    checks.append(BenchCheck("reference control in box", in_box, ""))

    X = reproduce_trajectories(case)
    err = float(np.abs(X - case.reference_biomass).max())
    checks.append(BenchCheck("terminal biomass", err <= 2e-3, f"max error {err:.2e}"))

    lp = worst_case_on(case, case.reference_biomass)
    q_err = float(np.abs(lp.primal - case.reference_q).max())
    checks.append(BenchCheck("LP on printed biomass: q*", q_err <= 1e-3,
                             "q = [" + ", ".join(f"{v:.4f}" for v in lp.primal) + "]"))
    checks.append(BenchCheck("LP on printed biomass: objective",
                             abs(lp.objective - case.J_tilde_star) <= 1e-3,
                             f"{lp.objective:.5f} vs {case.J_tilde_star}"))
    cert = lp_certificate(build_moment_lp(case.spec, case.support(), -case.reference_biomass), lp)
    checks.append(BenchCheck("LP duality gap", cert["gap"] <= 1e-8, f"{cert['gap']:.1e}"))

    base = constant_control_baseline(case, 0.01)
    _, ref_obj = reproduce_worst_case(case, X)
    checks.append(BenchCheck("constant 0.01 worse than reference", base.objective > ref_obj,
                             f"{base.objective:.5f} vs {ref_obj:.5f}"))
    checks.append(BenchCheck("constant 0.01 wider spread", base.spread > float(X.max() - X.min()),
                             f"{base.spread:.4f} vs {float(X.max() - X.min()):.4f}"))

    if solve_fn is not None:
        J, J_tilde = solve_fn()
        checks.append(BenchCheck("solve objective <= -4.0", J <= -4.0, f"{J:.5f}"))
        checks.append(BenchCheck("re-solved LP gap <= 0.15", abs(J - J_tilde) <= 0.15,
                                 f"{abs(J - J_tilde):.2e}"))
    return checks


def format_table(checks):
    width = max(len(c.name) for c in checks)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}".rstrip() for c in checks]
    return "\n".join(lines) + "\n"
