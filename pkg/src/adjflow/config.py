"""Run configuration schema (YAML) and builders for the model problem."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import ale, dg1d, params
from .primal import NewtonOptions, TimeGrid
from .qoi import QoiSpec
from .tableau import ButcherTableau, make_tableau


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoundaryConfig(_Strict):
    kind: Literal["constant", "piston"] = "constant"
    value: float = 0.0


class InitialConfig(_Strict):
    kind: Literal["constant", "sine"] = "constant"
    value: float = 0.0
    amplitude: float = 1.0
    wavenumber: float = 1.0


class ProblemConfig(_Strict):
    flux: Literal["burgers", "advection_diffusion"] = "burgers"
    nu: float = Field(0.0, ge=0.0)
    a: float = 1.0
    K: int = Field(20, ge=1)
    p: int = Field(3, ge=1)
    domain: tuple[float, float] = (0.0, 1.0)
    penalty: float = Field(1.0, gt=0.0)
    left_bc: BoundaryConfig = BoundaryConfig()
    right_bc: BoundaryConfig = BoundaryConfig()
    initial: InitialConfig = InitialConfig()
    initial_kind: Literal["analytic", "steady"] = "analytic"


class SignalConfig(_Strict):
    kind: Literal["spline", "sine", "ramp", "zero"] = "zero"
    spline: Literal["clamped", "mirrored_periodic"] = "clamped"
    knots: int = Field(2, ge=2)
    start: tuple[float, float] = (0.0, 0.0)
    end: tuple[float, float] = (0.0, 0.0)
    params: list[int] = []
    temporal_blend: bool = False
    amplitude: float = 0.0
    omega: float = 1.0
    rate: float = 1.0
    index: int | None = None


class MappingConfig(_Strict):
    kind: Literal["blended_rigid", "dilation", "static"] = "static"
    X0: float = 0.0
    R0: float = Field(0.1, gt=0.0)
    R1: float = Field(0.5, gt=0.0)
    blend: Literal["cubic", "quintic"] = "cubic"
    translation: SignalConfig = SignalConfig()
    dilation: SignalConfig | None = None
    gcl: bool = False


class TimeConfig(_Strict):
    T: float = Field(1.0, gt=0.0)
    N_t: int = Field(20, ge=1)
    tableau: Literal["dirk1", "dirk2", "dirk3"] = "dirk3"
    newton_tol: float = Field(1e-11, gt=0.0)
    newton_max_iter: int = Field(20, ge=1)


class QoiConfig(_Strict):
    name: str
    kind: Literal["boundary_work", "boundary_impulse", "domain_energy",
                  "terminal_state_norm", "point_value"]
    side: Literal["left", "right"] = "left"
    X: float | None = None


class ParametersConfig(_Strict):
    initial: list[float] = []
    lower: list[float] | None = None
    upper: list[float] | None = None


class OptimizeConfig(_Strict):
    objective: str
    constraint: str | None = None
    target: float | None = None
    gtol: float = 1e-8
    ctol: float = 1e-8
    max_iter: int = 200
    max_outer: int = 20
    memory: int = 10

    @model_validator(mode="after")
    def _target(self):
        if (self.constraint is None) != (self.target is None):
            raise ValueError("constraint and target must be given together")
        return self


class GradCheckConfig(_Strict):
    qoi: str | None = None
    taus: list[float] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]


class OrderStudyConfig(_Strict):
    kind: Literal["temporal", "spatial"] = "temporal"
    tableaus: list[Literal["dirk1", "dirk2", "dirk3"]] = ["dirk1", "dirk2", "dirk3"]
    N_t: list[int] = [10, 20, 40, 80, 160]
    orders: list[int] = [1, 2, 3]
    K: list[int] = [4, 8, 16, 32]


class GclCheckConfig(_Strict):
    state: float = 1.0
    newton_tol: float = 1e-14


class PathsConfig(_Strict):
    run_dir: str = "run"


class RunConfig(_Strict):
    problem: ProblemConfig = ProblemConfig()
    mapping: MappingConfig = MappingConfig()
    time: TimeConfig = TimeConfig()
    qoi: list[QoiConfig] = []
    parameters: ParametersConfig = ParametersConfig()
    optimize: OptimizeConfig | None = None
    grad_check: GradCheckConfig = GradCheckConfig()
    order_study: OrderStudyConfig = OrderStudyConfig()
    gcl_check: GclCheckConfig = GclCheckConfig()
    paths: PathsConfig = PathsConfig()
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        names = [q.name for q in self.qoi]
        if len(set(names)) != len(names):
            raise ValueError("QoI names must be unique")
        if self.optimize is not None:
            for ref in (self.optimize.objective, self.optimize.constraint):
                if ref is not None and ref not in names:
                    raise ValueError(f"optimize refers to unknown QoI {ref!r}")
        n = len(self.parameters.initial)
        for b in (self.parameters.lower, self.parameters.upper):
            if b is not None and len(b) != n:
                raise ValueError("bounds must match the parameter count")
        return self

    @property
    def n_params(self) -> int:
        return len(self.parameters.initial)

    def digest(self) -> str:
        text = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return RunConfig.model_validate(data)


# ---------------------------------------------------------------------------
# builders


def build_signal(cfg: SignalConfig, n_params: int, T: float):
    if cfg.kind == "zero":
        return params.ZeroSignal(n_params)
    if cfg.kind == "sine":
        return params.SineSignal(n_params, cfg.omega, cfg.amplitude, cfg.index)
    if cfg.kind == "ramp":
        return params.RampSignal(n_params, cfg.index, cfg.rate)
    sp = params.SplineSignal(T, cfg.knots, cfg.spline, tuple(cfg.start), tuple(cfg.end),
                             blend=cfg.temporal_blend)
    return params.ParamSignal(sp, cfg.params, n_params)


def build_mapping(cfg: RunConfig):
    m, n = cfg.mapping, cfg.n_params
    if m.kind == "static":
        return ale.StaticMapping(n)
    if m.kind == "dilation":
        return ale.DilationMapping(n, m.translation.index, m.translation.rate)
    dil = build_signal(m.dilation, n, cfg.time.T) if m.dilation is not None else None
    return ale.BlendedRigidMotion(build_signal(m.translation, n, cfg.time.T), m.X0, m.R0, m.R1,
                                  m.blend, dil)


def build_tableau(cfg: RunConfig) -> ButcherTableau:
    return make_tableau(cfg.time.tableau)


def build_grid(cfg: RunConfig, n_steps: int | None = None) -> TimeGrid:
    return TimeGrid.uniform(cfg.time.T, n_steps or cfg.time.N_t)


def build_newton(cfg: RunConfig) -> NewtonOptions:
    return NewtonOptions(tol=cfg.time.newton_tol, max_iter=cfg.time.newton_max_iter)


def _boundary(b: BoundaryConfig):
    return dg1d.PistonBoundary() if b.kind == "piston" else dg1d.ConstantBoundary(b.value)


def _initial(c: InitialConfig) -> dg1d.InitialData:
    if c.kind == "constant":
        return dg1d.InitialData.constant(c.value)
    A, k = c.amplitude, 2 * np.pi * c.wavenumber
    return dg1d.InitialData(lambda x: c.value + A * np.sin(k * x),
                            lambda x: A * k * np.cos(k * x))


def build_system(cfg: RunConfig, tab: ButcherTableau | None = None, grid: TimeGrid | None = None,
                 gcl: bool | None = None, K: int | None = None, p: int | None = None,
                 freestream: float | None = None) -> dg1d.Dg1dSystem:
    """Assemble the DG system; ``freestream`` replaces data by a constant state."""
    pc = cfg.problem
    mesh = dg1d.Mesh1d(K or pc.K, p or pc.p, *pc.domain)
    flux = dg1d.Burgers(pc.nu) if pc.flux == "burgers" else dg1d.AdvectionDiffusion(pc.a, pc.nu)
    mapping = build_mapping(cfg)
    use_gcl = cfg.mapping.gcl if gcl is None else gcl
    provider = None
    if use_gcl:
        provider = ale.GclProvider(mapping, mesh, tab or build_tableau(cfg), (grid or build_grid(cfg)).t)
    if freestream is not None:
        left = right = dg1d.ConstantBoundary(freestream)
        init = dg1d.InitialData.constant(freestream)
    else:
        left, right, init = _boundary(pc.left_bc), _boundary(pc.right_bc), _initial(pc.initial)
    return dg1d.Dg1dSystem(mesh, flux, mapping, left, right, init, gcl=provider,
                           penalty=pc.penalty, initial_kind=pc.initial_kind)


def build_qois(cfg: RunConfig, system: dg1d.Dg1dSystem) -> list[QoiSpec]:
    return [dg1d.model_qoi(system, q.kind, q.name, T=cfg.time.T, side=q.side, X=q.X)
            for q in cfg.qoi]
