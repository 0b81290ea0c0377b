"""JSON problem configuration with strict key checking.

A config has five sections: ``model``, ``ambiguity``, ``control``, ``solver``
and ``output``.  Unknown keys anywhere are rejected, and every object built
from the config re-validates its own invariants.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .ambiguity import (
    PLACEMENTS,
    AmbiguitySpec,
    characteristic_grid,
    table_density,
    truncnorm_density,
    uniform_density,
)
from .control import ControlGrid
from .dynamics import ControlBox, FedBatchParams, fedbatch_model, linear_toy, zero_toy
from .errors import ConfigError
from .outer import STRATEGIES, AlgorithmSchedule, PenaltyProblem

SECTIONS = ("model", "ambiguity", "control", "solver", "output")
TOYS = ("zero", "linear")


@dataclass
class ModelConfig:
    name: str = "fedbatch"
    params: dict = field(default_factory=dict)
    x0: list | None = None
    t_f: float | None = None


@dataclass
class AmbiguityConfig:
    mu: float = 2.2
    sigma: float = 0.2
    p_lower: float = 1.76
    p_upper: float = 2.64
    m: int = 10
    placement: str = "endpoints"
    density: dict | None = None


@dataclass
class ControlConfig:
    n: int = 25
    lower: list = field(default_factory=lambda: [0.0])
    upper: list = field(default_factory=lambda: [0.04])
    breakpoints: list | None = None
    initial: list | None = None


@dataclass
class SolverConfig:
    rho0: float = 10.0
    alpha1: float = 10.0
    alpha2: float = 0.5
    alpha3: float = 0.5
    omega_star: float = 1e-5
    eta_star: float = 1e-6
    max_outer: int = 30
    max_inner: int = 200
    epsilon_decay: float = 1.0
    epsilon: float = 1e-3
    steps_per_piece: int = 10
    multistart: int = 200
    seed: int = 0
    strategy: str = "joint"
    step_rule: str = "bb"
    precondition: bool = True
    gradient_check: bool = False
    tolerances: dict = field(default_factory=dict)


@dataclass
class OutputConfig:
    directory: str = "out"
    trace: bool = True


SECTION_TYPES = {
    "model": ModelConfig,
    "ambiguity": AmbiguityConfig,
    "control": ControlConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
}
DENSITY_KEYS = {"uniform": set(), "truncnorm": {"mu", "sigma"}, "table": {"path"}}
TOLERANCE_KEYS = ("moment", "complementarity", "stationarity", "costate_terminal", "gradient")


@dataclass
class ProblemConfig:
    model: ModelConfig
    ambiguity: AmbiguityConfig
    control: ControlConfig
    solver: SolverConfig
    output: OutputConfig
    source: str = ""
    base_dir: str = "."

    def digest(self):
        return hashlib.sha256(self.source.encode()).hexdigest()

    # builders -------------------------------------------------------------

    def build_model(self):
        name, mc = self.model.name, self.model
        if name == "fedbatch":
            known = {f.name for f in fields(FedBatchParams)}
            _reject(mc.params, known, "model.params")
            kwargs = {}
            if mc.x0 is not None:
                kwargs["x0"] = tuple(float(v) for v in mc.x0)
            if mc.t_f is not None:
                kwargs["t_f"] = float(mc.t_f)
            return fedbatch_model(FedBatchParams(**mc.params), **kwargs)
        if name == "toy:zero":
            _reject(mc.params, set(), "model.params")
            return zero_toy()
        if name == "toy:linear":
            _reject(mc.params, {"a", "c", "cost"}, "model.params")
            x0 = 0.0 if mc.x0 is None else float(np.atleast_1d(mc.x0)[0])
            return linear_toy(x0=x0, t_f=1.0 if mc.t_f is None else float(mc.t_f), **mc.params)
        raise ConfigError(f"unknown model {name!r}; expected fedbatch or toy:<{'|'.join(TOYS)}>")

    def build_spec(self) -> AmbiguitySpec:
        a = self.ambiguity
        return AmbiguitySpec(float(a.mu), float(a.sigma), float(a.p_lower), float(a.p_upper))

    def build_support(self):
        return characteristic_grid(self.build_spec(), int(self.ambiguity.m), self.ambiguity.placement)

    def build_density(self):
        d = self.ambiguity.density
        if d is None:
            raise ConfigError("ambiguity.density is not set")
        spec = self.build_spec()
        if d["kind"] == "uniform":
            return uniform_density(spec)
        if d["kind"] == "truncnorm":
            return truncnorm_density(spec, float(d["mu"]), float(d["sigma"]))
        path = d["path"]
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        return table_density(path)

    def build_box(self) -> ControlBox:
        return ControlBox(self.control.lower, self.control.upper)

    def build_grid(self, values=None) -> ControlGrid:
        c = self.control
        box = self.build_box()
        if c.breakpoints is None:
            bp = np.linspace(0.0, 1.0, int(c.n) + 1)
        else:
            bp = np.asarray(c.breakpoints, dtype=float)
            if bp.size != int(c.n) + 1:
                raise ConfigError(f"control.breakpoints needs {int(c.n) + 1} entries")
        if values is None:
            if c.initial is not None:
                values = np.asarray(c.initial, dtype=float).reshape(int(c.n), box.n_u)
            else:
                values = np.tile(0.5 * (box.lower + box.upper), (int(c.n), 1))
        return ControlGrid(bp, np.asarray(values, dtype=float).reshape(int(c.n), box.n_u), box)

    def build_schedule(self) -> AlgorithmSchedule:
        s = self.solver
        return AlgorithmSchedule(
            rho0=s.rho0, alpha1=s.alpha1, alpha2=s.alpha2, alpha3=s.alpha3,
            omega_star=s.omega_star, eta_star=s.eta_star, max_outer=int(s.max_outer),
            max_inner=int(s.max_inner), epsilon_decay=s.epsilon_decay,
        )

    def build_problem(self, threads=1, grid=None) -> PenaltyProblem:
        grid = grid or self.build_grid()
        return PenaltyProblem(
            model=self.build_model(), grid=grid, spec=self.build_spec(),
            support=self.build_support(), y=np.zeros(3), v=grid.flat(),
            epsilon=float(self.solver.epsilon), rho=float(self.solver.rho0),
            steps_per_piece=int(self.solver.steps_per_piece), threads=threads,
        )

    def validate(self):
        """Build every object once so that invariant violations surface at load."""
        self.build_model()
        self.build_support()
        grid = self.build_grid()
        if grid.n_u != self.build_model().n_u:
            raise ConfigError("control box dimension does not match the model's control count")
        self.build_schedule()
        s = self.solver
        if s.strategy not in STRATEGIES:
            raise ConfigError(f"solver.strategy must be one of {STRATEGIES}")
        if s.step_rule not in ("unit", "bb"):
            raise ConfigError("solver.step_rule must be 'unit' or 'bb'")
        if int(s.multistart) < 0 or int(s.steps_per_piece) < 1 or not s.epsilon > 0:
            raise ConfigError("solver.multistart >= 0, steps_per_piece >= 1 and epsilon > 0 required")
        _reject(s.tolerances, set(TOLERANCE_KEYS), "solver.tolerances")
        if self.ambiguity.placement not in PLACEMENTS:
            raise ConfigError(f"ambiguity.placement must be one of {PLACEMENTS}")
        d = self.ambiguity.density
        if d is not None:
            if not isinstance(d, dict) or d.get("kind") not in DENSITY_KEYS:
                raise ConfigError("ambiguity.density.kind must be uniform, truncnorm or table")
            _reject(d, DENSITY_KEYS[d["kind"]] | {"kind"}, "ambiguity.density")
            missing = DENSITY_KEYS[d["kind"]] - set(d)
            if missing:
                raise ConfigError(f"ambiguity.density is missing {sorted(missing)}")
        return self


def _reject(given, allowed, where):
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_config(text: str, base_dir=".") -> ProblemConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    _reject(raw, SECTIONS, "config")
    sections = {}
    for name, cls in SECTION_TYPES.items():
        body = raw.get(name, {})
        _reject(body, {f.name for f in fields(cls)}, name)
        try:
            sections[name] = cls(**body)
        except TypeError as exc:
            raise ConfigError(f"bad {name} section: {exc}") from None
    cfg = ProblemConfig(**sections, source=text, base_dir=base_dir)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path) -> ProblemConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
