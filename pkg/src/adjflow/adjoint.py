"""Fully discrete DIRK adjoint: reverse sweep, gradient reconstruction and oracles.

Stage adjoints solve

    (M^T - a_ii dt J_i^T) kappa_i = dF/dk_i + b_i lam^(n) + sum_{j>i} a_ji dt J_j^T kappa_j

and the state adjoint steps back as

    lam^(n-1) = lam^(n) + dF/du^(n-1) + sum_i dt J_i^T kappa_i.

All QoIs are swept together as columns of one right-hand side matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .primal import (PrimalTrajectory, TimeGrid, _as_functionals, integrate, lu,
                     stage_state, LinearSolveFailure)
from .qoi import DiscreteFunctional, QoiSpec
from .store import CheckpointError, _Store
from .system import InitialCondition, SemiDiscreteSystem
from .tableau import ButcherTableau

QoiArg = QoiSpec | DiscreteFunctional | Sequence[QoiSpec | DiscreteFunctional]


def _functionals(qois: QoiArg, grid: TimeGrid, tab: ButcherTableau) -> list[DiscreteFunctional]:
    if isinstance(qois, (QoiSpec, DiscreteFunctional)):
        qois = [qois]
    return _as_functionals(qois, grid, tab)


@dataclass
class DualTrajectory:
    """Adjoint states per QoI: ``lam[name]`` is (N_t+1, N_u), ``kappa[name]`` is (N_t, s, N_u)."""

    names: list[str]
    lam: dict[str, np.ndarray]
    kappa: dict[str, np.ndarray]

    def terminal_defect(self, terminal: dict[str, np.ndarray]) -> float:
        return max(float(np.max(np.abs(self.lam[k][-1] - terminal[k]))) for k in self.names)


@dataclass
class Gradient:
    """``dF/dmu`` and the three terms it is assembled from."""

    name: str
    partial: np.ndarray
    initial: np.ndarray
    stages: np.ndarray
    value: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = self.partial + self.initial + self.stages

    def records(self) -> list[dict]:
        return [{"param": j, "value": float(self.value[j]),
                 "breakdown": {"partial": float(self.partial[j]),
                               "initial": float(self.initial[j]),
                               "stages": float(self.stages[j])}}
                for j in range(self.value.size)]


def gradients_to_json(grads: dict[str, Gradient], path=None, header: dict | None = None) -> str:
    doc = {"header": header or {}, "gradients": {k: g.records() for k, g in grads.items()}}
    text = json.dumps(doc, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _stage_data(sys, tab, u_prev, stages, t_prev, dt, mu):
    us = [stage_state(tab, u_prev, stages, i) for i in range(tab.s)]
    ts = t_prev + tab.c * dt
    return us, ts


def _reverse_steps(store: _Store, sys, tab, grid):
    """Yield ``u^(N)`` then ``(n, u^(n-1), [k_1..k_s])`` in reverse, naming the step on failure."""
    it = store.read_reverse(n_u=sys.dim, s=tab.s, n_t=grid.n_steps, t=grid.t)
    yield next(it)
    n = grid.n_steps
    while n >= 1:
        try:
            rec = next(it)
        except CheckpointError as exc:
            raise CheckpointError(f"adjoint sweep cannot read step {n}: {exc}") from exc
        u_prev, stages_rev = rec[0], rec[1:]
        yield n, u_prev, list(stages_rev[::-1])
        n -= 1


def adjoint_sweep(sys: SemiDiscreteSystem, tab: ButcherTableau, grid: TimeGrid, mu,
                  qois: QoiArg, store: _Store) -> DualTrajectory:
    """Reverse DIRK sweep for one or more QoIs, reading primal data from ``store``."""
    mu = np.asarray(mu, dtype=float)
    funcs = _functionals(qois, grid, tab)
    names = [f.name for f in funcs]
    nq, n_t, s, N = len(funcs), grid.n_steps, tab.s, sys.dim
    M = sys.mass()
    lam = np.zeros((n_t + 1, N, nq))
    kap = np.zeros((n_t, s, N, nq))

    steps = _reverse_steps(store, sys, tab, grid)
    u_n = next(steps)
    for q, fn in enumerate(funcs):
        du, _ = fn.state_partials(n_t, u_n, mu)
        if du is not None:
            lam[n_t, :, q] = du

    for n, u_prev, ks in steps:
        t_prev, dt = grid.t[n - 1], grid.t[n] - grid.t[n - 1]
        us, ts = _stage_data(sys, tab, u_prev, ks, t_prev, dt, mu)
        JT = [sys.jac_state(us[i], mu, ts[i]).T for i in range(s)]
        dFdk = np.zeros((s, N, nq))
        dFdu = np.zeros((N, nq))
        for q, fn in enumerate(funcs):
            du_prev, dk, _ = fn.step_partials(n, us, mu)
            if dk is not None:
                dFdk[:, :, q] = dk
                dFdu[:, q] += du_prev
            du_state, _ = fn.state_partials(n - 1, u_prev, mu)
            if du_state is not None:
                dFdu[:, q] += du_state

        lam_n = lam[n]
        w = [None] * s          # dt J_j^T kappa_j
        for i in range(s - 1, -1, -1):
            rhs = dFdk[i] + tab.b[i] * lam_n
            for j in range(i + 1, s):
                if tab.A[j, i] != 0.0:
                    rhs = rhs + tab.A[j, i] * w[j]
            try:
                fac = lu(M.T - tab.A[i, i] * dt * JT[i])
            except LinearSolveFailure as exc:
                raise LinearSolveFailure(f"adjoint stage {i + 1} of step {n}: {exc}") from exc
            kap[n - 1, i] = sla.lu_solve(fac, rhs)
            w[i] = dt * (JT[i] @ kap[n - 1, i])
        lam[n - 1] = lam_n + dFdu + sum(w)

    return DualTrajectory(
        names, {k: lam[:, :, q].copy() for q, k in enumerate(names)},
        {k: kap[:, :, :, q].copy() for q, k in enumerate(names)})


def ic_sensitivity_contribution(ic: InitialCondition, lam0) -> np.ndarray:
    """``lam0^T du_0/dmu``; for a steady initial state via one transposed solve."""
    lam0 = np.asarray(lam0, dtype=float)
    if ic.kind == "analytic":
        return lam0 @ np.asarray(ic.dvalue_dmu, dtype=float)
    try:
        fac = lu(np.asarray(ic.steady_jac_state, dtype=float))
    except LinearSolveFailure as exc:
        raise LinearSolveFailure(f"singular steady Jacobian: {exc}") from exc
    v = sla.lu_solve(fac, lam0, trans=1)
    return -(v @ np.asarray(ic.steady_jac_param, dtype=float))


def reconstruct_gradient(sys: SemiDiscreteSystem, tab: ButcherTableau, grid: TimeGrid, mu,
                         qois: QoiArg, dual: DualTrajectory, store: _Store,
                         initial: InitialCondition | None = None) -> dict[str, Gradient]:
    """Assemble ``dF/dmu`` from the dual trajectory; no state sensitivities are formed."""
    mu = np.asarray(mu, dtype=float)
    funcs = _functionals(qois, grid, tab)
    P = sys.n_params
    ic = initial if initial is not None else sys.initial(mu)
    partial = {f.name: np.zeros(P) for f in funcs}
    stage_term = {f.name: np.zeros(P) for f in funcs}

    steps = _reverse_steps(store, sys, tab, grid)
    u_n = next(steps)
    for fn in funcs:
        _, dm = fn.state_partials(grid.n_steps, u_n, mu)
        if dm is not None:
            partial[fn.name] += dm
    for n, u_prev, ks in steps:
        t_prev, dt = grid.t[n - 1], grid.t[n] - grid.t[n - 1]
        us, ts = _stage_data(sys, tab, u_prev, ks, t_prev, dt, mu)
        drdmu = [sys.jac_param(us[i], mu, ts[i]) for i in range(tab.s)]
        for fn in funcs:
            kap = dual.kappa[fn.name][n - 1]
            acc = np.zeros(P)
            for i in range(tab.s):
                acc += kap[i] @ drdmu[i]
            stage_term[fn.name] += dt * acc
            _, _, dm = fn.step_partials(n, us, mu)
            if dm is not None:
                partial[fn.name] += dm
            _, dm = fn.state_partials(n - 1, u_prev, mu)
            if dm is not None:
                partial[fn.name] += dm

    return {fn.name: Gradient(fn.name, partial[fn.name],
                              ic_sensitivity_contribution(ic, dual.lam[fn.name][0]),
                              stage_term[fn.name])
            for fn in funcs}


def gradient(sys, tab, grid, mu, qois: QoiArg, store: _Store,
             initial: InitialCondition | None = None) -> tuple[DualTrajectory, dict[str, Gradient]]:
    """Sweep and reconstruct in one call."""
    dual = adjoint_sweep(sys, tab, grid, mu, qois, store)
    return dual, reconstruct_gradient(sys, tab, grid, mu, qois, dual, store, initial)


def _ic_derivative(ic: InitialCondition) -> np.ndarray:
    if ic.kind == "analytic":
        return np.asarray(ic.dvalue_dmu, dtype=float)
    return -np.linalg.solve(ic.steady_jac_state, ic.steady_jac_param)


def forward_sensitivity(sys: SemiDiscreteSystem, tab: ButcherTableau, grid: TimeGrid, mu,
                        qois: QoiArg, primal: PrimalTrajectory | None = None,
                        initial: InitialCondition | None = None) -> dict[str, np.ndarray]:
    """Oracle ``dF/dmu`` from forward-propagated state and stage sensitivities."""
    mu = np.asarray(mu, dtype=float)
    funcs = _functionals(qois, grid, tab)
    ic = initial if initial is not None else sys.initial(mu)
    if primal is None:
        primal = integrate(sys, tab, grid, mu, funcs, initial=ic).trajectory
    M = sys.mass()
    s = tab.s
    du = _ic_derivative(ic)
    out = {fn.name: np.zeros(sys.n_params) for fn in funcs}

    def add_state(n, u_n, du_n):
        for fn in funcs:
            dFu, dFm = fn.state_partials(n, u_n, mu)
            if dFu is not None:
                out[fn.name] += dFu @ du_n + dFm

    add_state(0, primal.states[0], du)
    for n in range(1, grid.n_steps + 1):
        t_prev, dt = grid.t[n - 1], grid.t[n] - grid.t[n - 1]
        us = primal.stage_states(tab, n)
        ts = t_prev + tab.c * dt
        dks = []
        for i in range(s):
            J = sys.jac_state(us[i], mu, ts[i])
            dui = du + sum(tab.A[i, j] * dks[j] for j in range(i))
            rhs = dt * (J @ dui + sys.jac_param(us[i], mu, ts[i]))
            dks.append(np.linalg.solve(M - tab.A[i, i] * dt * J, rhs))
        for fn in funcs:
            dFu, dFk, dFm = fn.step_partials(n, us, mu)
            if dFk is not None:
                out[fn.name] += dFu @ du + sum(dFk[p] @ dks[p] for p in range(s)) + dFm
        du = du + sum(tab.b[i] * dks[i] for i in range(s))
        add_state(n, primal.states[n], du)
    return out


@dataclass
class LagrangianReport:
    """Infinity norms of the Lagrangian derivatives per state and stage, per QoI."""

    state: dict[str, np.ndarray]     # (N_t+1,)
    stage: dict[str, np.ndarray]     # (N_t, s)
    lam_inf: dict[str, float]

    @property
    def max_residual(self) -> float:
        return max(max(float(self.state[k].max()), float(self.stage[k].max())) for k in self.state)

    def scaled_max(self) -> float:
        """Largest residual divided by ``1 + ||lam||_inf`` of its QoI."""
        return max(max(float(self.state[k].max()), float(self.stage[k].max()))
                   / (1.0 + self.lam_inf[k]) for k in self.state)


def lagrangian_residuals(sys: SemiDiscreteSystem, tab: ButcherTableau, grid: TimeGrid, mu,
                         qois: QoiArg, primal: PrimalTrajectory,
                         dual: DualTrajectory) -> LagrangianReport:
    """Evaluate ``dL/du^(n)`` and ``dL/dk_i^(n)`` at a primal/dual pair."""
    mu = np.asarray(mu, dtype=float)
    funcs = _functionals(qois, grid, tab)
    M = sys.mass()
    n_t, s = grid.n_steps, tab.s
    st_norm = {fn.name: np.zeros(n_t + 1) for fn in funcs}
    sg_norm = {fn.name: np.zeros((n_t, s)) for fn in funcs}

    # dt J^T kappa per step, per QoI, computed once.
    JT = []
    for n in range(1, n_t + 1):
        t_prev, dt = grid.t[n - 1], grid.t[n] - grid.t[n - 1]
        us = primal.stage_states(tab, n)
        JT.append([dt * sys.jac_state(us[i], mu, t_prev + tab.c[i] * dt).T for i in range(s)])

    for fn in funcs:
        lam, kap = dual.lam[fn.name], dual.kappa[fn.name]
        for n in range(n_t + 1):
            dF, _ = fn.state_partials(n, primal.states[n], mu)
            g = -lam[n] + (dF if dF is not None else 0.0)
            if n < n_t:
                us = primal.stage_states(tab, n + 1)
                du_prev, _, _ = fn.step_partials(n + 1, us, mu)
                if du_prev is not None:
                    g = g + du_prev
                g = g + lam[n + 1] + sum(JT[n][i] @ kap[n][i] for i in range(s))
            st_norm[fn.name][n] = np.max(np.abs(g))
        for n in range(1, n_t + 1):
            us = primal.stage_states(tab, n)
            _, dk, _ = fn.step_partials(n, us, mu)
            w = [JT[n - 1][j] @ kap[n - 1][j] for j in range(s)]
            for i in range(s):
                g = tab.b[i] * lam[n] - M.T @ kap[n - 1][i]
                g = g + sum(tab.A[j, i] * w[j] for j in range(i, s))
                if dk is not None:
                    g = g + dk[i]
                sg_norm[fn.name][n - 1, i] = np.max(np.abs(g))
    return LagrangianReport(st_norm, sg_norm,
                            {k: float(np.max(np.abs(dual.lam[k]))) for k in dual.names})


def save_dual(dual: DualTrajectory, name: str, store: _Store) -> None:
    """Persist one QoI's dual trajectory using the checkpoint record scheme."""
    from .store import Slot

    lam, kap = dual.lam[name], dual.kappa[name]
    store.write_record(Slot.initial(), lam[0])
    for n in range(1, lam.shape[0]):
        for i in range(kap.shape[1]):
            store.write_record(Slot(n, "stage", i + 1), kap[n - 1, i])
        store.write_record(Slot(n), lam[n])
