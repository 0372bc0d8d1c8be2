"""Forward DIRK integration with Newton stage solves and functional accumulation."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .qoi import DiscreteFunctional, QoiSpec
from .store import MemoryStore, Slot, _Store
from .system import InitialCondition, SemiDiscreteSystem
from .tableau import ButcherTableau

log = logging.getLogger("adjflow.primal")


class StageFailure(RuntimeError):
    """Newton did not converge on a stage equation."""

    def __init__(self, msg: str, step: int | None = None, stage: int | None = None,
                 history: Sequence[float] = ()):
        super().__init__(msg)
        self.step, self.stage, self.history = step, stage, list(history)


class LinearSolveFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points ``t_0 < ... < t_{N_t}``."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        if t.size < 2:
            raise ValueError("time grid needs at least one step")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, T: float, n_steps: int, t0: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t0, T, n_steps + 1))

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    def stage_time(self, n: int, i: int, tab: ButcherTableau) -> float:
        """Time of stage ``i`` (0-based) in step ``n`` (1-based)."""
        return self.t[n - 1] + tab.c[i] * (self.t[n] - self.t[n - 1])


@dataclass
class NewtonOptions:
    tol: float = 1e-11
    max_iter: int = 20
    reuse_jacobian: bool = False


@dataclass
class StageResult:
    k: np.ndarray
    iterations: int
    history: list[float]


def lu(A: np.ndarray):
    """LU factorization that refuses exactly singular matrices."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        fac = sla.lu_factor(A, check_finite=True)
    if np.any(np.diag(fac[0]) == 0.0):
        raise LinearSolveFailure("singular matrix in LU factorization")
    return fac


def stage_state(tab: ButcherTableau, u_prev, stages, i: int):
    """``u_i = u_prev + sum_{j<=i} a_ij k_j`` (0-based ``i``)."""
    u = np.array(u_prev, dtype=float, copy=True)
    for j in range(i + 1):
        if tab.A[i, j] != 0.0:
            u += tab.A[i, j] * stages[j]
    return u


def solve_stage(sys: SemiDiscreteSystem, tab: ButcherTableau, u_prev, prior_stages,
                i: int, t_prev: float, dt: float, mu, newton: NewtonOptions | None = None,
                M: np.ndarray | None = None, guess=None) -> StageResult:
    """Solve ``M k_i = dt r(u_i, mu, t_prev + c_i dt)`` for stage ``i`` (0-based)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    newton = newton or NewtonOptions()
    M = sys.mass() if M is None else M
    a_ii = tab.A[i, i]
    t_i = t_prev + tab.c[i] * dt
    base = np.array(u_prev, dtype=float, copy=True)
    for j in range(i):
        if tab.A[i, j] != 0.0:
            base += tab.A[i, j] * prior_stages[j]
    k = np.zeros_like(base) if guess is None else np.array(guess, dtype=float, copy=True)

    history: list[float] = []
    fac = None
    for it in range(newton.max_iter + 1):
        u_i = base + a_ii * k
        res = M @ k - dt * sys.residual(u_i, mu, t_i)
        norm = float(np.max(np.abs(res)))
        history.append(norm)
        if not np.isfinite(norm):
            break
        if norm <= newton.tol:
            return StageResult(k, it, history)
        if it == newton.max_iter:
            break
        if fac is None or not newton.reuse_jacobian:
            fac = lu(M - dt * a_ii * sys.jac_state(u_i, mu, t_i))
        k = k - sla.lu_solve(fac, res)
    raise StageFailure(
        f"Newton failed on stage {i + 1}: residual history {history}", stage=i + 1,
        history=history)


@dataclass
class PrimalTrajectory:
    """All primal states, stages and running functional values."""

    t: np.ndarray
    states: np.ndarray            # (N_t+1, N_u)
    stages: np.ndarray            # (N_t, s, N_u)
    F: dict[str, np.ndarray]      # name -> (N_t+1,)
    f_history: dict[str, np.ndarray] = field(default_factory=dict)
    newton_iterations: np.ndarray | None = None   # (N_t, s)

    def stage_states(self, tab: ButcherTableau, n: int) -> list[np.ndarray]:
        return [stage_state(tab, self.states[n - 1], self.stages[n - 1], i)
                for i in range(tab.s)]

    def update_defect(self, tab: ButcherTableau) -> float:
        """Max relative defect of ``u^(n) - u^(n-1) - sum_i b_i k_i^(n)``."""
        worst = 0.0
        for n in range(1, self.states.shape[0]):
            rec = self.states[n - 1] + tab.b @ self.stages[n - 1]
            scale = max(np.max(np.abs(self.states[n])), np.max(np.abs(rec)), 1e-300)
            worst = max(worst, float(np.max(np.abs(self.states[n] - rec)) / scale))
        return worst

    def history_table(self) -> dict[str, object]:
        out: dict[str, object] = {"t": self.t}
        for name, F in self.F.items():
            out[name] = (self.f_history.get(name, np.full_like(F, np.nan)), F)
        return out


@dataclass
class PrimalResult:
    trajectory: PrimalTrajectory
    F: dict[str, float]
    store: _Store
    initial: InitialCondition


def _as_functionals(qois, grid: TimeGrid, tab: ButcherTableau) -> list[DiscreteFunctional]:
    out = []
    for q in qois:
        out.append(q if isinstance(q, DiscreteFunctional) else DiscreteFunctional(q, grid.t, tab))
    return out


def integrate(sys: SemiDiscreteSystem, tab: ButcherTableau, grid: TimeGrid, mu,
              qois: Sequence[QoiSpec | DiscreteFunctional] = (), store: _Store | None = None,
              newton: NewtonOptions | None = None, initial: InitialCondition | None = None,
              keep: bool = True) -> PrimalResult:
    """Run the DIRK forward solve, accumulating every registered functional.

    Every ``u^(n)`` and ``k_i^(n)`` is written to ``store`` in forward order.
    """
    mu = np.asarray(mu, dtype=float)
    newton = newton or NewtonOptions()
    funcs = _as_functionals(qois, grid, tab)
    store = store if store is not None else MemoryStore(sys.dim, tab.s, grid.t)
    ic = initial if initial is not None else sys.initial(mu)
    M = sys.mass()
    n_t, s = grid.n_steps, tab.s

    u = np.array(ic.value, dtype=float, copy=True)
    states = np.empty((n_t + 1, sys.dim)) if keep else None
    stages_all = np.empty((n_t, s, sys.dim)) if keep else None
    iters = np.zeros((n_t, s), dtype=int)
    F = {fn.name: np.zeros(n_t + 1) for fn in funcs}
    f_hist = {fn.name: np.zeros(n_t + 1) for fn in funcs}
    for fn in funcs:
        F[fn.name][0] = fn.initial_value(u, mu)
        f_hist[fn.name][0] = fn.spec.integrand.value(u, mu, grid.t[0])
    if keep:
        states[0] = u

    try:
        store.write_record(Slot.initial(), u)
        guess = None
        for n in range(1, n_t + 1):
            t_prev, dt = grid.t[n - 1], grid.t[n] - grid.t[n - 1]
            ks: list[np.ndarray] = []
            for i in range(s):
                try:
                    res = solve_stage(sys, tab, u, ks, i, t_prev, dt, mu, newton, M=M,
                                      guess=guess)
                except StageFailure as exc:
                    exc.step = n
                    raise StageFailure(f"step {n}: {exc}", step=n, stage=i + 1,
                                       history=exc.history) from exc
                ks.append(res.k)
                iters[n - 1, i] = res.iterations
                guess = res.k
                store.write_record(Slot(n, "stage", i + 1), res.k)
            stage_states = [stage_state(tab, u, ks, i) for i in range(s)]
            u_new = u + sum(tab.b[i] * ks[i] for i in range(s))
            for fn in funcs:
                F[fn.name][n] = fn.step_value(F[fn.name][n - 1], n, stage_states, u_new, mu)
                f_hist[fn.name][n] = fn.spec.integrand.value(u_new, mu, grid.t[n])
            u = u_new
            store.write_record(Slot(n), u)
            if keep:
                states[n] = u
                stages_all[n - 1] = np.array(ks)
            if log.isEnabledFor(logging.DEBUG):
                log.debug(json.dumps({
                    "step": n, "t": float(grid.t[n]),
                    "newton_iters": iters[n - 1].tolist(),
                    "F": {k: float(v[n]) for k, v in F.items()}}))
    except Exception:
        store.mark_partial()
        raise

    traj = PrimalTrajectory(t=grid.t, states=states, stages=stages_all, F=F,
                            f_history=f_hist, newton_iterations=iters)
    return PrimalResult(traj, {k: float(v[-1]) for k, v in F.items()}, store, ic)
