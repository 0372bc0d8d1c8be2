"""Semi-discrete system contract ``M du/dt = r(u, mu, t)`` and a derivative checker."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable, Literal, Protocol

import numpy as np


class Integrand(Protocol):
    """Spatially discretized instantaneous quantity ``f_h(u, mu, t)``."""

    def value(self, u: np.ndarray, mu: np.ndarray, t: float) -> float: ...

    def jac_state(self, u: np.ndarray, mu: np.ndarray, t: float) -> np.ndarray: ...

    def jac_param(self, u: np.ndarray, mu: np.ndarray, t: float) -> np.ndarray: ...


@dataclass
class InitialCondition:
    """Initial state ``u_0(mu)`` and what is needed for its parameter sensitivity.

    ``analytic`` carries ``dvalue_dmu`` directly. ``steady`` carries the Jacobians
    of the steady residual ``R(u_0, mu) = 0`` at the converged ``u_0``.
    """

    value: np.ndarray
    kind: Literal["analytic", "steady"] = "analytic"
    dvalue_dmu: np.ndarray | None = None
    steady_jac_state: np.ndarray | None = None
    steady_jac_param: np.ndarray | None = None
    steady_residual_norm: float = 0.0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        if self.kind == "analytic" and self.dvalue_dmu is None:
            raise ValueError("analytic initial condition needs dvalue_dmu")
        if self.kind == "steady" and (
            self.steady_jac_state is None or self.steady_jac_param is None
        ):
            raise ValueError("steady initial condition needs both steady Jacobians")


class SemiDiscreteSystem(abc.ABC):
    """Interface every discretized problem implements.

    Implementations must be pure evaluators: no hidden state that changes with
    the arguments, so distinct ``(u, mu, t)`` calls can run concurrently.
    """

    dim: int
    n_params: int

    @abc.abstractmethod
    def mass(self) -> np.ndarray: ...

    @abc.abstractmethod
    def residual(self, u: np.ndarray, mu: np.ndarray, t: float) -> np.ndarray: ...

    @abc.abstractmethod
    def jac_state(self, u: np.ndarray, mu: np.ndarray, t: float) -> np.ndarray: ...

    @abc.abstractmethod
    def jac_param(self, u: np.ndarray, mu: np.ndarray, t: float) -> np.ndarray: ...

    @abc.abstractmethod
    def initial(self, mu: np.ndarray) -> InitialCondition: ...

    def integrands(self) -> dict[str, Integrand]:
        """Named instantaneous QoI integrands the system ships with."""
        return {}


@dataclass
class DerivativeReport:
    """Max relative error per derivative block from :func:`verify_derivatives`."""

    errors: dict[str, float] = field(default_factory=dict)
    issues: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def ok(self, tol: float = 1e-6) -> bool:
        return not self.issues and self.max_error <= tol


def _fd4(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Fourth-order central difference Jacobian, columns indexed by ``x``."""
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        fp1, fm1 = fun(x + e), fun(x - e)
        fp2, fm2 = fun(x + 2 * e), fun(x - 2 * e)
        jac[:, j] = (-np.atleast_1d(fp2) + 8 * np.atleast_1d(fp1)
                     - 8 * np.atleast_1d(fm1) + np.atleast_1d(fm2)) / (12 * step)
    return jac


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """``max|A - R| / max(|A|, |R|)`` with an absolute fallback for tiny blocks."""
    analytic = np.atleast_2d(analytic)
    reference = np.atleast_2d(reference)
    diff = float(np.max(np.abs(analytic - reference), initial=0.0))
    scale = max(float(np.max(np.abs(reference), initial=0.0)),
                float(np.max(np.abs(analytic), initial=0.0)))
    if scale < 1e-10:
        return diff
    return diff / scale


def verify_derivatives(
    sys: SemiDiscreteSystem,
    u: np.ndarray,
    mu: np.ndarray,
    t: float,
    step: float = 1e-3,
    integrands: dict[str, Integrand] | None = None,
) -> DerivativeReport:
    """Compare analytic Jacobians against 4th-order central differences."""
    if not step > 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    mu = np.asarray(mu, dtype=float)
    rep = DerivativeReport()
    for name, x in (("u", u), ("mu", mu)):
        bad = (x + step == x) | (x + 2 * step == x)
        if np.any(bad):
            rep.issues.append(f"step {step:g} underflows relative to {name}[{np.flatnonzero(bad)[0]}]")
    if rep.issues:
        return rep

    rep.errors["jac_state"] = relative_error(
        sys.jac_state(u, mu, t), _fd4(lambda v: sys.residual(v, mu, t), u, step))
    if sys.n_params:
        rep.errors["jac_param"] = relative_error(
            sys.jac_param(u, mu, t), _fd4(lambda m: sys.residual(u, m, t), mu, step))

    if integrands is None:
        integrands = sys.integrands()
    for name, f in integrands.items():
        rep.errors[f"{name}.jac_state"] = relative_error(
            f.jac_state(u, mu, t), _fd4(lambda v: f.value(v, mu, t), u, step))
        if sys.n_params:
            rep.errors[f"{name}.jac_param"] = relative_error(
                f.jac_param(u, mu, t), _fd4(lambda m: f.value(u, m, t), mu, step))
    return rep


class LinearDecaySystem(SemiDiscreteSystem):
    """``u' = -mu[0] * u`` with optional ``mu``-dependent initial value.

    ``ic_param`` selects a parameter index used as the initial value
    (``u_0 = mu[ic_param]``); by default ``u_0`` is the fixed ``u0``.
    """

    def __init__(self, dim: int = 1, n_params: int = 1, u0: float | np.ndarray = 1.0,
                 ic_param: int | None = None):
        self.dim = dim
        self.n_params = n_params
        self._u0 = np.broadcast_to(np.asarray(u0, dtype=float), (dim,)).copy()
        self.ic_param = ic_param

    def mass(self) -> np.ndarray:
        return np.eye(self.dim)

    def residual(self, u, mu, t):
        return -mu[0] * np.asarray(u, dtype=float)

    def jac_state(self, u, mu, t):
        return -mu[0] * np.eye(self.dim)

    def jac_param(self, u, mu, t):
        jac = np.zeros((self.dim, self.n_params))
        jac[:, 0] = -np.asarray(u, dtype=float)
        return jac

    def initial(self, mu):
        dvalue = np.zeros((self.dim, self.n_params))
        if self.ic_param is None:
            value = self._u0.copy()
        else:
            value = np.full(self.dim, float(mu[self.ic_param]))
            dvalue[:, self.ic_param] = 1.0
        return InitialCondition(value=value, kind="analytic", dvalue_dmu=dvalue)

    def integrands(self):
        from .qoi import LinearStateIntegrand

        return {"state": LinearStateIntegrand(np.ones(self.dim), self.n_params)}


class LogisticSystem(SemiDiscreteSystem):
    """``u' = mu[0] u (1 - u)`` with ``u(0) = u0``; exact solution available."""

    dim = 1
    n_params = 1

    def __init__(self, u0: float = 0.1):
        self.u0 = float(u0)

    def exact(self, mu, t):
        return 1.0 / (1.0 + (1.0 / self.u0 - 1.0) * np.exp(-mu[0] * t))

    def mass(self):
        return np.eye(1)

    def residual(self, u, mu, t):
        return mu[0] * u * (1.0 - u)

    def jac_state(self, u, mu, t):
        return np.array([[mu[0] * (1.0 - 2.0 * u[0])]])

    def jac_param(self, u, mu, t):
        return (u * (1.0 - u)).reshape(1, 1)

    def initial(self, mu):
        return InitialCondition(value=np.array([self.u0]), dvalue_dmu=np.zeros((1, 1)))

    def integrands(self):
        from .qoi import LinearStateIntegrand

        return {"state": LinearStateIntegrand([1.0], 1)}
