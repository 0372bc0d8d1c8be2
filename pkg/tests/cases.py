"""Catalog of shipped systems used by the consistency tests."""

import numpy as np

from adjflow import config as C
from adjflow.ale import BlendedRigidMotion, DilationMapping, GclProvider
from adjflow.dg1d import (AdvectionDiffusion, Burgers, ConstantBoundary, Dg1dSystem, InitialData,
                          Mesh1d, model_qoi)
from adjflow.params import SineSignal
from adjflow.primal import TimeGrid
from adjflow.qoi import QoiSpec
from adjflow.system import LinearDecaySystem, LogisticSystem
from adjflow.tableau import make_tableau

from conftest import CONFIGS


def moving_burgers(gcl: bool, tab, grid):
    mesh = Mesh1d(6, 2)
    mp = BlendedRigidMotion(SineSignal(2, 2 * np.pi, index=0), 0.3, 0.1, 0.4,
                            dilation=SineSignal(2, 3 * np.pi, index=1))
    ic = InitialData(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x),
                     lambda x: np.pi * np.cos(2 * np.pi * x))
    prov = GclProvider(mp, mesh, tab, grid.t) if gcl else None
    return Dg1dSystem(mesh, Burgers(0.01), mp, ConstantBoundary(1.0), ConstantBoundary(1.0), ic,
                      gcl=prov)


def steady_dilation():
    return Dg1dSystem(Mesh1d(6, 2), AdvectionDiffusion(1.0, 0.05), DilationMapping(1, 0),
                      ConstantBoundary(1.0), ConstantBoundary(0.0),
                      InitialData(lambda x: 1 - x, lambda x: -np.ones_like(x)),
                      initial_kind="steady")


def shipped_cases(tableau: str = "dirk3"):
    """Yield ``(label, system, tab, grid, qois, mu)`` for every shipped system."""
    tab = make_tableau(tableau)
    grid = TimeGrid.uniform(1.0, 20)
    lin = LinearDecaySystem(dim=2, n_params=2, ic_param=1)
    yield "linear_decay", lin, tab, grid, [QoiSpec("s", lin.integrands()["state"])], \
        np.array([0.7, 1.3])
    lg = LogisticSystem()
    yield "logistic", lg, tab, grid, [QoiSpec("s", lg.integrands()["state"])], np.array([2.0])
    cfg = C.load_config(CONFIGS / "piston.yaml")
    for gcl in (False, True):
        s = C.build_system(cfg, tab, grid, gcl=gcl)
        yield f"piston_gcl_{'on' if gcl else 'off'}", s, tab, grid, C.build_qois(cfg, s), \
            np.array(cfg.parameters.initial)
    short = TimeGrid.uniform(0.5, 10)
    for gcl in (False, True):
        s = moving_burgers(gcl, tab, short)
        qs = [model_qoi(s, "domain_energy", name="energy"),
              model_qoi(s, "point_value", name="probe", X=0.55, T=0.5),
              model_qoi(s, "terminal_state_norm", name="terminal", T=0.5)]
        yield f"moving_burgers_gcl_{'on' if gcl else 'off'}", s, tab, short, qs, \
            np.array([0.05, 0.1])
    s = steady_dilation()
    yield "steady_dilation", s, tab, short, [model_qoi(s, "domain_energy", name="energy")], \
        np.array([0.3])
