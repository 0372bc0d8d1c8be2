"""Time signals that drive the domain motion, linear in their parameters.

Every signal evaluates to a :class:`SignalEval` carrying the value, its time
derivative and the derivatives of both with respect to the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Protocol, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

SplineKind = Literal["clamped", "mirrored_periodic"]


@dataclass
class SignalEval:
    value: float
    rate: float
    dvalue: np.ndarray
    drate: np.ndarray


class Signal(Protocol):
    """A scalar time signal parametrized by the global vector ``mu``."""

    n_params: int

    def __call__(self, mu: np.ndarray, t: float) -> SignalEval: ...


def temporal_blend(sig: SignalEval, t: float) -> SignalEval:
    """Multiply by ``b(t) = 1 - exp(-t^2)``, which vanishes with its slope at ``t = 0``."""
    e = np.exp(-t * t)
    b, db = 1.0 - e, 2.0 * t * e
    return SignalEval(b * sig.value, db * sig.value + b * sig.rate,
                      b * sig.dvalue, db * sig.dvalue + b * sig.drate)


class SplineSignal:
    """Cubic spline through uniformly spaced knots on ``[0, T]``.

    ``clamped``: ``n_knots`` knots on ``[0, T]``; the end values and end slopes
    are pinned by ``start=(value, slope)`` and ``end=(value, slope)`` and the
    interior knot values are free.

    ``mirrored_periodic``: ``n_knots = m + 1`` knots on ``[0, T/2]`` with
    ``s(t + T/2) = -s(t)``. The last knot value is tied to the first by the
    mirror condition, leaving ``m`` free values. The spline is the periodic
    interpolant of the antisymmetrically extended data on ``[0, T]``; by
    uniqueness of that interpolant the mirror identity holds everywhere.

    Free values enter linearly, so the knot-value derivatives are the
    responses of cardinal splines and do not depend on the values themselves.
    """

    def __init__(self, T: float, n_knots: int, kind: SplineKind = "clamped",
                 start: tuple[float, float] = (0.0, 0.0), end: tuple[float, float] = (0.0, 0.0),
                 blend: bool = False):
        if T <= 0:
            raise ValueError("T must be positive")
        self.T, self.kind, self.blend = float(T), kind, blend
        if kind == "clamped":
            if n_knots < 2:
                raise ValueError("clamped spline needs at least 2 knots")
            self.knots = np.linspace(0.0, self.T, n_knots)
            nf = n_knots - 2
            Y = np.zeros((n_knots, nf + 1))
            Y[1:-1, :nf] = np.eye(nf)
            Y[0, nf], Y[-1, nf] = start[0], end[0]
            d0 = np.zeros(nf + 1)
            d1 = np.zeros(nf + 1)
            d0[nf], d1[nf] = start[1], end[1]
            self._spline = CubicSpline(self.knots, Y, bc_type=((1, d0), (1, d1)))
        elif kind == "mirrored_periodic":
            m = n_knots - 1
            if m < 1:
                raise ValueError("mirrored spline needs at least 2 knots")
            self.knots = np.linspace(0.0, self.T / 2, n_knots)
            nf = m
            full = np.linspace(0.0, self.T, 2 * m + 1)
            Y = np.zeros((2 * m + 1, nf + 1))
            Y[:m, :nf] = np.eye(m)
            Y[m:2 * m, :nf] = -np.eye(m)
            Y[2 * m, :nf] = Y[0, :nf]
            self._spline = CubicSpline(full, Y, bc_type="periodic", extrapolate="periodic")
        else:
            raise ValueError(f"unknown spline kind {kind!r}")
        self.n_free = nf
        self._dspline = self._spline.derivative()

    def eval(self, t: float, free: Sequence[float]) -> SignalEval:
        """Value, time derivative and their derivatives w.r.t. the free knot values."""
        free = np.asarray(free, dtype=float)
        if free.size != self.n_free:
            raise ValueError(f"expected {self.n_free} free knot values, got {free.size}")
        if self.kind == "clamped" and not (0.0 <= t <= self.T):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        bv = self._spline(t)
        br = self._dspline(t)
        sig = SignalEval(float(bv[:-1] @ free + bv[-1]), float(br[:-1] @ free + br[-1]),
                         bv[:-1].copy(), br[:-1].copy())
        return temporal_blend(sig, t) if self.blend else sig

    def second_derivative_jumps(self, free: Sequence[float]) -> np.ndarray:
        """Jumps of ``s''`` at the interior knots (zero for a C2 spline)."""
        free = np.append(np.asarray(free, dtype=float), 1.0)
        c = self._spline.c    # (4, intervals, cols)
        x = self._spline.x
        h = np.diff(x)
        left = (6 * c[0, :-1] * h[:-1, None] + 2 * c[1, :-1]) @ free
        right = (2 * c[1, 1:]) @ free
        return right - left


class ParamSignal:
    """Binds a :class:`SplineSignal`'s free knots to entries of ``mu``."""

    def __init__(self, spline: SplineSignal, indices: Sequence[int], n_params: int,
                 scale: float = 1.0):
        indices = list(indices)
        if len(indices) != spline.n_free:
            raise ValueError(f"spline has {spline.n_free} free values, got {len(indices)} indices")
        self.spline, self.indices, self.n_params = spline, indices, n_params
        self.scale = float(scale)

    def __call__(self, mu, t) -> SignalEval:
        mu = np.asarray(mu, dtype=float)
        e = self.spline.eval(t, mu[self.indices])
        dv = np.zeros(self.n_params)
        dr = np.zeros(self.n_params)
        dv[self.indices] = self.scale * e.dvalue
        dr[self.indices] = self.scale * e.drate
        return SignalEval(self.scale * e.value, self.scale * e.rate, dv, dr)


class RampSignal:
    """``s(t) = mu[index] * t`` (or ``rate * t`` when ``index`` is None)."""

    def __init__(self, n_params: int, index: int | None = 0, rate: float = 1.0):
        self.n_params, self.index, self.rate = n_params, index, rate

    def __call__(self, mu, t) -> SignalEval:
        dv = np.zeros(self.n_params)
        dr = np.zeros(self.n_params)
        if self.index is None:
            return SignalEval(self.rate * t, self.rate, dv, dr)
        a = float(mu[self.index])
        dv[self.index], dr[self.index] = t, 1.0
        return SignalEval(a * t, a, dv, dr)


class SineSignal:
    """``s(t) = A sin(omega t)`` with ``A = mu[index]`` or a fixed ``amplitude``."""

    def __init__(self, n_params: int, omega: float, amplitude: float = 1.0,
                 index: int | None = None):
        self.n_params, self.omega, self.amplitude, self.index = n_params, omega, amplitude, index

    def __call__(self, mu, t) -> SignalEval:
        sn, cs = np.sin(self.omega * t), self.omega * np.cos(self.omega * t)
        dv = np.zeros(self.n_params)
        dr = np.zeros(self.n_params)
        A = self.amplitude
        if self.index is not None:
            A = float(mu[self.index])
            dv[self.index], dr[self.index] = sn, cs
        return SignalEval(A * sn, A * cs, dv, dr)


class ZeroSignal:
    def __init__(self, n_params: int):
        self.n_params = n_params

    def __call__(self, mu, t) -> SignalEval:
        z = np.zeros(self.n_params)
        return SignalEval(0.0, 0.0, z, z.copy())
