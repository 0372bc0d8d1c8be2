"""Parametrized domain motion, ALE state/flux transforms and the GCL field.

Mappings are one-dimensional: ``G``, ``g`` and ``v_G`` are scalars per point
(in 1D ``g = G``) and ``dmap_dmu``/``dvel_dmu`` return arrays of shape
``X.shape + (N_mu,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal, Protocol

import numpy as np

from .params import Signal, ZeroSignal
from .tableau import ButcherTableau

BlendKind = Literal["cubic", "quintic"]


class MappingDegeneracy(ValueError):
    """The mapping Jacobian is not positive somewhere."""


class DomainMapping(Protocol):
    n_params: int

    def map(self, X, mu, t) -> np.ndarray: ...

    def grad(self, X, mu, t) -> np.ndarray: ...

    def det(self, X, mu, t) -> np.ndarray: ...

    def velocity(self, X, mu, t) -> np.ndarray: ...

    def dmap_dmu(self, X, mu, t) -> np.ndarray: ...

    def dvel_dmu(self, X, mu, t) -> np.ndarray: ...


def blend(s, R1: float, kind: BlendKind = "cubic"):
    """Blend ``b(s)``: 0 for ``s <= 0``, 1 for ``s >= R1``, polynomial in ``s/R1`` between."""
    return _blend(s, R1, kind)[0]


def _blend(s, R1, kind):
    """``b`` and ``db/ds``."""
    if R1 <= 0:
        raise ValueError("R1 must be positive")
    z = np.clip(np.asarray(s, dtype=float) / R1, 0.0, 1.0)
    if kind == "cubic":
        b, db = 3 * z**2 - 2 * z**3, 6 * z - 6 * z**2
    elif kind == "quintic":
        b, db = 10 * z**3 - 15 * z**4 + 6 * z**5, 30 * z**2 - 60 * z**3 + 30 * z**4
    else:
        raise ValueError(f"unknown blend kind {kind!r}")
    return b, db / R1


class BlendedRigidMotion:
    """``x = X + (1 - b(d(X))) (v(mu, t) + phi(X, mu, t))`` with ``d = |X - X0| - R0``.

    ``translation`` drives the rigid part ``v``; ``dilation`` drives the
    deformation ``phi = s(mu, t) (X - X0)``. Inside ``R0`` the body moves
    exactly; beyond ``R0 + R1`` the map is the identity.
    """

    def __init__(self, translation: Signal, X0: float = 0.0, R0: float = 0.1, R1: float = 0.5,
                 blend_kind: BlendKind = "cubic", dilation: Signal | None = None):
        if R0 <= 0 or R1 <= 0:
            raise ValueError("R0 and R1 must be positive")
        self.translation = translation
        self.dilation = dilation if dilation is not None else ZeroSignal(translation.n_params)
        self.n_params = translation.n_params
        self.X0, self.R0, self.R1, self.blend_kind = float(X0), float(R0), float(R1), blend_kind

    def _parts(self, X, mu, t):
        X = np.asarray(X, dtype=float)
        d = np.abs(X - self.X0) - self.R0
        b, db = _blend(d, self.R1, self.blend_kind)
        return X, 1.0 - b, -db * np.sign(X - self.X0), self.translation(mu, t), self.dilation(mu, t)

    def map(self, X, mu, t):
        X, w, _, v, s = self._parts(X, mu, t)
        return X + w * (v.value + s.value * (X - self.X0))

    def grad(self, X, mu, t):
        X, w, dw, v, s = self._parts(X, mu, t)
        return 1.0 + dw * (v.value + s.value * (X - self.X0)) + w * s.value

    def det(self, X, mu, t):
        return self.grad(X, mu, t)

    def velocity(self, X, mu, t):
        X, w, _, v, s = self._parts(X, mu, t)
        return w * (v.rate + s.rate * (X - self.X0))

    def dmap_dmu(self, X, mu, t):
        X, w, _, v, s = self._parts(X, mu, t)
        return w[..., None] * (v.dvalue + s.dvalue * (X - self.X0)[..., None])

    def dvel_dmu(self, X, mu, t):
        X, w, _, v, s = self._parts(X, mu, t)
        return w[..., None] * (v.drate + s.drate * (X - self.X0)[..., None])


class DilationMapping:
    """``x = (1 + a t) X`` with ``a = mu[index]`` or a fixed ``rate``."""

    def __init__(self, n_params: int = 1, index: int | None = 0, rate: float = 1.0):
        self.n_params, self.index, self.rate = n_params, index, rate

    def _a(self, mu):
        return self.rate if self.index is None else float(mu[self.index])

    def _dmu(self, X, value):
        out = np.zeros(np.shape(X) + (self.n_params,))
        if self.index is not None:
            out[..., self.index] = value
        return out

    def map(self, X, mu, t):
        return (1.0 + self._a(mu) * t) * np.asarray(X, dtype=float)

    def grad(self, X, mu, t):
        return np.full(np.shape(X), 1.0 + self._a(mu) * t)

    def det(self, X, mu, t):
        return self.grad(X, mu, t)

    def velocity(self, X, mu, t):
        return self._a(mu) * np.asarray(X, dtype=float)

    def dmap_dmu(self, X, mu, t):
        return self._dmu(X, t * np.asarray(X, dtype=float))

    def dvel_dmu(self, X, mu, t):
        return self._dmu(X, np.asarray(X, dtype=float))


class StaticMapping(DilationMapping):
    """The identity map."""

    def __init__(self, n_params: int = 0):
        super().__init__(n_params=n_params, index=None, rate=0.0)


@dataclass
class MapBundle:
    x: np.ndarray
    G: np.ndarray
    g: np.ndarray
    v_G: np.ndarray
    dx_dmu: np.ndarray
    dv_dmu: np.ndarray


def map_bundle(m: DomainMapping, X, mu, t) -> MapBundle:
    g = np.asarray(m.det(X, mu, t), dtype=float)
    if np.any(g <= 0):
        raise MappingDegeneracy(f"nonpositive mapping determinant (min {g.min():.3e}) at t={t}")
    return MapBundle(m.map(X, mu, t), m.grad(X, mu, t), g, m.velocity(X, mu, t),
                     m.dmap_dmu(X, mu, t), m.dvel_dmu(X, mu, t))


def _positive(g, what="g"):
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise MappingDegeneracy(f"nonpositive {what}")
    return g


def transform_state(U, g):
    """``U_X = g U`` (pass ``gbar`` for the GCL-augmented form)."""
    return _positive(g) * np.asarray(U, dtype=float)


def inverse_transform_state(U_X, g):
    return np.asarray(U_X, dtype=float) / _positive(g)


def transform_fluxes(U_X, dU_X, G, g, v_G, F_inv: Callable, F_vis: Callable | None = None,
                     dg_dX=0.0, gbar=None, dgbar_dX=0.0) -> tuple[np.ndarray, np.ndarray]:
    """Reference-domain inviscid and viscous fluxes of a scalar 1D law.

    Without ``gbar``: ``U = U_X / g``, inviscid ``g F(U) / G - U_X v_G / G``.
    With ``gbar``: ``U = U_X / gbar`` and the mesh term uses the physical state,
    ``g F(U) / G - (g / gbar) U_X v_G / G``, which reduces to the other form
    when ``gbar = g``. The viscous flux is ``g F_vis(U, dU/dx) / G`` with
    ``dU/dx = s^{-1} (dU_X/dX - U_X s^{-1} ds/dX) / G`` for the scaling ``s``.
    """
    G, g = np.asarray(G, dtype=float), _positive(g)
    if gbar is None:
        s, ds = g, dg_dX
    else:
        s, ds = _positive(gbar, "gbar"), dgbar_dX
    U_X = np.asarray(U_X, dtype=float)
    U = U_X / s
    inv = g * F_inv(U) / G - (g / s) * U_X * v_G / G
    if F_vis is None:
        return inv, np.zeros_like(inv)
    dUdx = (np.asarray(dU_X, dtype=float) - U_X * ds / s) / s / G
    return inv, g * F_vis(U, dUdx) / G


# ---------------------------------------------------------------------------
# GCL auxiliary field


@dataclass
class GclField:
    """Nodal ``gbar`` and ``d gbar / d mu`` at every grid point and DIRK stage."""

    t: np.ndarray
    state: np.ndarray         # (N_t+1, N)
    stage: np.ndarray         # (N_t, s, N)
    dstate: np.ndarray        # (N_t+1, N, P)
    dstage: np.ndarray        # (N_t, s, N, P)
    c: np.ndarray

    def __post_init__(self):
        keys, vals = [], []
        for n, tn in enumerate(self.t):
            keys.append(tn)
            vals.append(("state", n, -1))
        for n in range(1, self.t.size):
            dt = self.t[n] - self.t[n - 1]
            for i, ci in enumerate(self.c):
                keys.append(self.t[n - 1] + ci * dt)
                vals.append(("stage", n, i))
        # Stage entries come last so they win when a stage time equals a grid time.
        self._index = dict(zip(keys, vals))
        self._sorted = np.array(sorted(self._index))

    def _locate(self, t):
        hit = self._index.get(t)
        if hit is None:
            j = int(np.argmin(np.abs(self._sorted - t)))
            if abs(self._sorted[j] - t) > 1e-12 * max(1.0, abs(t)):
                raise KeyError(f"gbar requested at t={t!r}, which is not a grid or stage time")
            hit = self._index[self._sorted[j]]
        return hit

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        kind, n, i = self._locate(t)
        if kind == "state":
            return self.state[n], self.dstate[n]
        return self.stage[n - 1, i], self.dstage[n - 1, i]


def gcl_integrate(mapping: DomainMapping, mesh, tab: ButcherTableau, t: np.ndarray, mu,
                  sensitivity: bool = True) -> GclField:
    """Integrate ``M dgbar/dt = r_gbar(t)`` with the primal DIRK scheme.

    ``mesh`` supplies ``nodes``, ``mass_inverse()``, ``gcl_rhs(xdot)`` (linear
    in the nodal mesh velocity) and ``nodal_derivative(x)``. The right-hand side
    does not depend on ``gbar``, so each stage is one mass solve. ``gbar`` starts
    from the nodal Jacobian ``g`` of the interpolated mapping at ``t_0``.
    """
    mu = np.asarray(mu, dtype=float)
    t = np.asarray(t, dtype=float)
    X = mesh.nodes
    Minv = mesh.mass_inverse()
    n_t, s, N, P = t.size - 1, tab.s, X.size, mapping.n_params
    state = np.empty((n_t + 1, N))
    stage = np.empty((n_t, s, N))
    dstate = np.zeros((n_t + 1, N, P))
    dstage = np.zeros((n_t, s, N, P))
    state[0] = mesh.nodal_derivative(mapping.map(X, mu, t[0]))
    if sensitivity and P:
        dstate[0] = mesh.nodal_derivative(mapping.dmap_dmu(X, mu, t[0]))
    for n in range(1, n_t + 1):
        dt = t[n] - t[n - 1]
        ks, dks = [], []
        for i in range(s):
            ti = t[n - 1] + tab.c[i] * dt
            ks.append(dt * (Minv @ mesh.gcl_rhs(mapping.velocity(X, mu, ti))))
            stage[n - 1, i] = state[n - 1] + sum(tab.A[i, j] * ks[j] for j in range(i + 1))
            if sensitivity and P:
                dks.append(dt * (Minv @ mesh.gcl_rhs(mapping.dvel_dmu(X, mu, ti))))
                dstage[n - 1, i] = dstate[n - 1] + sum(tab.A[i, j] * dks[j] for j in range(i + 1))
        state[n] = state[n - 1] + sum(tab.b[i] * ks[i] for i in range(s))
        if sensitivity and P:
            dstate[n] = dstate[n - 1] + sum(tab.b[i] * dks[i] for i in range(s))
    if np.any(state <= 0) or np.any(stage <= 0):
        raise MappingDegeneracy("gbar became nonpositive")
    return GclField(t, state, stage, dstate, dstage, tab.c.copy())


def gcl_sensitivity(mapping, mesh, tab, t, mu) -> GclField:
    """Same pass as :func:`gcl_integrate`; the ``dstate``/``dstage`` fields hold ``dgbar/dmu``."""
    return gcl_integrate(mapping, mesh, tab, t, mu, sensitivity=True)


class GclProvider:
    """Caches :class:`GclField` per parameter vector for a fixed grid and scheme."""

    def __init__(self, mapping, mesh, tab: ButcherTableau, t, maxsize: int = 8):
        self.mapping, self.mesh, self.tab = mapping, mesh, tab
        self.t = np.asarray(t, dtype=float)
        self._cached = lru_cache(maxsize=maxsize)(self._build)

    def _build(self, key: bytes) -> GclField:
        mu = np.frombuffer(key, dtype=float).copy()
        return gcl_integrate(self.mapping, self.mesh, self.tab, self.t, mu)

    def field(self, mu) -> GclField:
        return self._cached(np.ascontiguousarray(mu, dtype=float).tobytes())

    def at(self, mu, t):
        return self.field(mu).at(t)
