"""Quantities of interest and their solver-consistent DIRK discretization.

A functional ``F = int_0^T f_h(u, mu, t) dt`` is integrated with the same DIRK
stages as the state, so ``F_h^(n) = F_h^(n-1) + dt_n sum_i b_i f_h(u_i^(n))``.
Time-impulse weights reduce to a single evaluation at a grid point or stage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .system import Integrand
from .tableau import ButcherTableau

WeightKind = Literal["uniform", "time_impulse", "space_point", "space_time_point"]

# Relative tolerance for matching an impulse time against grid/stage times.
TIME_MATCH_RTOL = 1e-12


@dataclass(frozen=True)
class QoiSpec:
    """A named functional: an integrand plus its space-time weight.

    ``space_point`` and ``space_time_point`` weights are carried by the
    integrand itself (a point trace); temporally they behave like ``uniform``
    and ``time_impulse``.
    """

    name: str
    integrand: Integrand
    weight: WeightKind = "uniform"
    t_star: float | None = None
    x_star: float | None = None

    def __post_init__(self):
        if self.weight in ("time_impulse", "space_time_point") and self.t_star is None:
            raise ValueError(f"weight {self.weight!r} needs t_star")
        if self.weight in ("space_point", "space_time_point") and self.x_star is None:
            raise ValueError(f"weight {self.weight!r} needs x_star")

    @property
    def is_impulse(self) -> bool:
        return self.weight in ("time_impulse", "space_time_point")


def stage_times(t_prev: float, dt: float, tab: ButcherTableau) -> np.ndarray:
    return t_prev + tab.c * dt


def _same_time(a: float, b: float, scale: float) -> bool:
    return abs(a - b) <= TIME_MATCH_RTOL * max(scale, 1.0)


def accumulate(spec: QoiSpec, F_prev: float, stage_values: Sequence[float],
               tab: ButcherTableau, dt: float, t_prev: float = 0.0,
               state_value: float | None = None) -> float:
    """Advance the discrete functional across one step.

    ``stage_values`` are ``f_h`` at the ``s`` stage states. For impulse weights,
    ``state_value`` is ``f_h(u^(n))`` and is used when ``t_star`` equals the
    step's end point; a stage-time hit uses the matching stage value.
    """
    stage_values = np.asarray(stage_values, dtype=float)
    if stage_values.size != tab.s:
        raise ValueError(f"expected {tab.s} stage values, got {stage_values.size}")
    if not spec.is_impulse:
        return F_prev + dt * float(tab.b @ stage_values)
    scale = abs(t_prev) + abs(dt)
    if state_value is not None and _same_time(spec.t_star, t_prev + dt, scale):
        return float(state_value)
    for i, ti in enumerate(stage_times(t_prev, dt, tab)):
        if _same_time(spec.t_star, ti, scale):
            return float(stage_values[i])
    return F_prev


class DiscreteFunctional:
    """Binds a :class:`QoiSpec` to a time grid and tableau.

    Provides the fully discrete value updates and the partial derivatives
    ``dF/du^(n)``, ``dF/dk_p^(n)`` and ``dF/dmu`` consumed by the adjoint.
    """

    def __init__(self, spec: QoiSpec, t: np.ndarray, tab: ButcherTableau):
        self.spec = spec
        self.t = np.asarray(t, dtype=float)
        self.tab = tab
        self.hit: tuple[str, int, int] | None = None
        if spec.is_impulse:
            self.hit = self._locate(spec.t_star)

    def _locate(self, t_star: float) -> tuple[str, int, int]:
        scale = float(np.max(np.abs(self.t)))
        for n, tn in enumerate(self.t):
            if _same_time(t_star, tn, scale):
                return ("state", n, -1)
        for n in range(1, self.t.size):
            dt = self.t[n] - self.t[n - 1]
            for i, ti in enumerate(stage_times(self.t[n - 1], dt, self.tab)):
                if _same_time(t_star, ti, scale):
                    return ("stage", n, i)
        raise ValueError(
            f"impulse time {t_star!r} is neither a grid point nor a stage time")

    @property
    def name(self) -> str:
        return self.spec.name

    def _f(self):
        return self.spec.integrand

    def initial_value(self, u0, mu) -> float:
        if self.hit is not None and self.hit[:2] == ("state", 0):
            return float(self._f().value(u0, mu, self.t[0]))
        return 0.0

    def step_value(self, F_prev: float, n: int, stage_states, u_new, mu) -> float:
        """``F_h^(n)`` from ``F_h^(n-1)`` given the stage states of step ``n``."""
        t_prev, dt = self.t[n - 1], self.t[n] - self.t[n - 1]
        ts = stage_times(t_prev, dt, self.tab)
        f = self._f()
        if self.hit is None:
            vals = [f.value(ui, mu, ti) for ui, ti in zip(stage_states, ts)]
            return accumulate(self.spec, F_prev, vals, self.tab, dt, t_prev)
        kind, n_hit, i_hit = self.hit
        if n_hit != n:
            return F_prev
        if kind == "state":
            return float(f.value(u_new, mu, self.t[n]))
        return float(f.value(stage_states[i_hit], mu, ts[i_hit]))

    def state_partials(self, n: int, u_n, mu) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Explicit dependence on ``u^(n)`` through a grid-point impulse."""
        if self.hit is None or self.hit[0] != "state" or self.hit[1] != n:
            return None, None
        f = self._f()
        return (np.asarray(f.jac_state(u_n, mu, self.t[n]), dtype=float),
                np.asarray(f.jac_param(u_n, mu, self.t[n]), dtype=float))

    def step_partials(self, n: int, stage_states, mu):
        """Contributions of step ``n`` stages.

        Returns ``(dF/du^(n-1), dF/dk (s x N_u), dF/dmu)``; any entry may be
        ``None`` when step ``n`` does not enter the functional.
        """
        tab = self.tab
        t_prev, dt = self.t[n - 1], self.t[n] - self.t[n - 1]
        ts = stage_times(t_prev, dt, tab)
        f = self._f()
        if self.hit is None:
            fu = np.array([f.jac_state(ui, mu, ti) for ui, ti in zip(stage_states, ts)])
            fm = np.array([f.jac_param(ui, mu, ti) for ui, ti in zip(stage_states, ts)])
            du_prev = dt * (tab.b @ fu)
            # dF/dk_p = dt sum_{i>=p} b_i a_ip f_u(u_i)
            dk = dt * ((tab.b[:, None] * tab.A).T @ fu)
            dmu = dt * (tab.b @ fm)
            return du_prev, dk, dmu
        kind, n_hit, i_hit = self.hit
        if kind != "stage" or n_hit != n:
            return None, None, None
        fu = np.asarray(f.jac_state(stage_states[i_hit], mu, ts[i_hit]), dtype=float)
        fm = np.asarray(f.jac_param(stage_states[i_hit], mu, ts[i_hit]), dtype=float)
        dk = np.outer(tab.A[i_hit], fu)
        return fu.copy(), dk, fm


class ConstantIntegrand:
    """``f_h = c``."""

    def __init__(self, c: float = 1.0, n_params: int = 0, dim: int = 1):
        self.c, self.n_params, self.dim = float(c), n_params, dim

    def value(self, u, mu, t):
        return self.c

    def jac_state(self, u, mu, t):
        return np.zeros(np.size(u))

    def jac_param(self, u, mu, t):
        return np.zeros(np.size(mu))


class TimePowerIntegrand:
    """``f_h = t**power``, independent of state and parameters."""

    def __init__(self, power: int = 2):
        self.power = power

    def value(self, u, mu, t):
        return float(t) ** self.power

    def jac_state(self, u, mu, t):
        return np.zeros(np.size(u))

    def jac_param(self, u, mu, t):
        return np.zeros(np.size(mu))


class LinearStateIntegrand:
    """``f_h = weights . u``."""

    def __init__(self, weights, n_params: int = 0):
        self.weights = np.asarray(weights, dtype=float)
        self.n_params = n_params

    def value(self, u, mu, t):
        return float(self.weights @ np.asarray(u, dtype=float))

    def jac_state(self, u, mu, t):
        return self.weights.copy()

    def jac_param(self, u, mu, t):
        return np.zeros(np.size(mu))


def write_history_csv(path, history: dict[str, np.ndarray], header: str | None = None):
    """Write QoI time histories with columns ``t, <name>_f, <name>_F`` per QoI."""
    names = [k for k in history if k != "t"]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        cols = ["t"]
        for name in names:
            cols += [f"{name}_f", f"{name}_F"]
        w.writerow(cols)
        for row in range(len(history["t"])):
            out = [repr(float(history["t"][row]))]
            for name in names:
                f_vals, F_vals = history[name]
                out += [repr(float(f_vals[row])), repr(float(F_vals[row]))]
            w.writerow(out)
