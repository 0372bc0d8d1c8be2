"""Nodal DG for a scalar 1D viscous conservation law in ALE form.

The state is the nodal transformed variable ``w = s u`` on a fixed reference
mesh, where the scaling ``s`` is the nodal mapping Jacobian ``g`` (GCL off) or
the auxiliary field ``gbar`` (GCL on). The reference-domain flux is

    h(u) = F(u) - u v_G      (inviscid)
    -nu q / G                (viscous, q = du/dX from an LDG lifting)

with a Godunov flux for ``h`` at faces and alternating LDG fluxes
(``uhat = u^-``, ``qhat = q^+``, penalized at the Dirichlet ends).
Geometry is isoparametric: ``x`` and ``xdot`` are sampled at the nodes and
interpolated, ``G`` is the derivative of the interpolated ``x``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Literal, Protocol

import numpy as np
from numpy.polynomial import legendre as npleg
import scipy.linalg as sla

from .ale import DomainMapping, GclProvider, MappingDegeneracy
from .primal import NewtonOptions, lu
from .qoi import QoiSpec
from .system import InitialCondition, SemiDiscreteSystem


# ---------------------------------------------------------------------------
# reference element and mesh


def gll_nodes(p: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre points on ``[-1, 1]``."""
    if p < 1:
        raise ValueError("order must be >= 1")
    inner = npleg.Legendre.basis(p).deriv().roots() if p > 1 else np.array([])
    return np.concatenate(([-1.0], np.sort(inner.real), [1.0]))


def lagrange_basis(nodes: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the nodal Lagrange basis at ``pts``."""
    p = nodes.size - 1
    Vinv = np.linalg.inv(npleg.legvander(nodes, p))
    V = npleg.legvander(pts, p)
    dV = np.column_stack([npleg.legval(pts, npleg.legder(np.eye(p + 1)[k]))
                          for k in range(p + 1)])
    return V @ Vinv, dV @ Vinv


class Mesh1d:
    """``K`` uniform elements of order ``p`` on the reference interval ``[X_left, X_right]``.

    Element ``e`` owns nodes ``e(p+1) .. e(p+1)+p``; face ``f`` sits between
    elements ``f-1`` and ``f`` (faces ``0`` and ``K`` are the domain ends).
    """

    def __init__(self, K: int, p: int, X_left: float = 0.0, X_right: float = 1.0,
                 n_quad: int | None = None):
        if K < 1 or p < 1:
            raise ValueError("need K >= 1 and p >= 1")
        if not X_right > X_left:
            raise ValueError("empty reference interval")
        self.K, self.p = K, p
        self.X_left, self.X_right = float(X_left), float(X_right)
        self.h = (self.X_right - self.X_left) / K
        self.n_quad = n_quad if n_quad is not None else (3 * p + 3) // 2
        self.r = gll_nodes(p)
        np1 = p + 1
        self.N = K * np1
        starts = self.X_left + self.h * np.arange(K)
        self.nodes = (starts[:, None] + 0.5 * self.h * (self.r + 1.0)).ravel()

        xi, wq = npleg.leggauss(self.n_quad)
        Vq, dVq = lagrange_basis(self.r, xi)
        _, Dr = lagrange_basis(self.r, self.r)
        eye = np.eye(K)
        self.Xq = (starts[:, None] + 0.5 * self.h * (xi + 1.0)).ravel()
        self.wX = np.tile(0.5 * self.h * wq, K)
        self.Bq = np.kron(eye, Vq)
        self.Dq = np.kron(eye, (2.0 / self.h) * dVq)
        self.Dn = np.kron(eye, (2.0 / self.h) * Dr)
        self.Sq = np.kron(eye, dVq.T * wq)
        self.Mref = Vq.T @ (wq[:, None] * Vq)
        self._M = np.kron(eye, 0.5 * self.h * self.Mref)
        self._Minv = np.kron(eye, np.linalg.inv(0.5 * self.h * self.Mref))

        nf = K + 1
        self.Lf = np.zeros((self.N, nf))
        self.TL = np.zeros((nf, self.N))    # trace from the element left of the face
        self.TR = np.zeros((nf, self.N))    # trace from the element right of the face
        self.TF = np.zeros((nf, self.N))    # continuous nodal quantities at the face
        for f in range(nf):
            if f >= 1:
                j = (f - 1) * np1 + p
                self.Lf[j, f] = 1.0
                self.TL[f, j] = 1.0
            if f <= K - 1:
                j = f * np1
                self.Lf[j, f] = -1.0
                self.TR[f, j] = 1.0
            self.TF[f, f * np1 if f < K else self.N - 1] = 1.0

    def mass(self) -> np.ndarray:
        return self._M.copy()

    def mass_inverse(self) -> np.ndarray:
        return self._Minv

    def nodal_derivative(self, x: np.ndarray) -> np.ndarray:
        """Elementwise derivative of the nodal interpolant, sampled at the nodes."""
        return self.Dn @ x

    def gcl_rhs(self, xdot: np.ndarray) -> np.ndarray:
        """``-int phi_X v_G dX + [phi v_G]`` per element; linear in ``xdot``."""
        return -self.Sq @ (self.Bq @ xdot) + self.Lf @ (self.TF @ xdot)

    def evaluation_matrix(self, X: np.ndarray) -> np.ndarray:
        """Rows interpolate a nodal field at reference points ``X``."""
        X = np.atleast_1d(np.asarray(X, dtype=float))
        if np.any(X < self.X_left - 1e-14) or np.any(X > self.X_right + 1e-14):
            raise ValueError("evaluation point outside the reference domain")
        e = np.clip(((X - self.X_left) / self.h).astype(int), 0, self.K - 1)
        xi = 2.0 * (X - (self.X_left + e * self.h)) / self.h - 1.0
        E = np.zeros((X.size, self.N))
        for row, (ee, x) in enumerate(zip(e, xi)):
            phi, _ = lagrange_basis(self.r, np.array([x]))
            E[row, ee * (self.p + 1):(ee + 1) * (self.p + 1)] = phi[0]
        return E

    def quadrature(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Points, weights, interpolation and derivative matrices for an ``n``-point rule."""
        xi, wq = npleg.leggauss(n)
        V, dV = lagrange_basis(self.r, xi)
        starts = self.X_left + self.h * np.arange(self.K)
        X = (starts[:, None] + 0.5 * self.h * (xi + 1.0)).ravel()
        eye = np.eye(self.K)
        return (X, np.tile(0.5 * self.h * wq, self.K), np.kron(eye, V),
                np.kron(eye, (2.0 / self.h) * dV))


def assemble_mass(mesh: Mesh1d) -> np.ndarray:
    """Block-diagonal reference mass matrix (exact for degree ``2p`` integrands)."""
    return mesh.mass()


# ---------------------------------------------------------------------------
# physical fluxes


@dataclass
class Burgers:
    nu: float = 0.0
    kind: str = "burgers"

    def F(self, u):
        return 0.5 * u * u

    def dF(self, u):
        return u

    def upwind_state(self, a, b, v):
        """Godunov state for the convex flux ``F(u) - v u``; sonic point ``u = v``.

        Returns ``u*`` and the indicators ``du*/da``, ``du*/db``, ``du*/dv``.
        """
        ua, ub = np.maximum(a, v), np.minimum(b, v)
        ha, hb = self.F(ua) - v * ua, self.F(ub) - v * ub
        pick_a = ha >= hb
        ustar = np.where(pick_a, ua, ub)
        ia = (pick_a & (a > v)).astype(float)
        ib = (~pick_a & (b < v)).astype(float)
        return ustar, ia, ib, 1.0 - ia - ib


@dataclass
class AdvectionDiffusion:
    a: float = 1.0
    nu: float = 0.0
    kind: str = "advection_diffusion"

    def F(self, u):
        return self.a * u

    def dF(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.a)

    def upwind_state(self, a, b, v):
        left = (self.a - v) >= 0
        ia = left.astype(float)
        return np.where(left, a, b), ia, 1.0 - ia, np.zeros_like(ia)


Flux = Burgers | AdvectionDiffusion


# ---------------------------------------------------------------------------
# boundary data, in physical coordinates at the moving ends


class BoundaryData(Protocol):
    def value(self, x: float, xdot: float, t: float) -> float: ...

    def d_x(self, x: float, xdot: float, t: float) -> float: ...

    def d_xdot(self, x: float, xdot: float, t: float) -> float: ...


@dataclass
class ConstantBoundary:
    c: float = 0.0

    def value(self, x, xdot, t):
        return self.c

    def d_x(self, x, xdot, t):
        return 0.0

    def d_xdot(self, x, xdot, t):
        return 0.0


class PistonBoundary:
    """No-penetration: the fluid moves with the wall, ``u = xdot``."""

    def value(self, x, xdot, t):
        return xdot

    def d_x(self, x, xdot, t):
        return 0.0

    def d_xdot(self, x, xdot, t):
        return 1.0


@dataclass
class FunctionBoundary:
    """``u = f(x, t)`` with ``f_x`` its spatial derivative."""

    f: Callable[[float, float], float]
    f_x: Callable[[float, float], float]

    def value(self, x, xdot, t):
        return float(self.f(x, t))

    def d_x(self, x, xdot, t):
        return float(self.f_x(x, t))

    def d_xdot(self, x, xdot, t):
        return 0.0


@dataclass
class InitialData:
    """Physical initial profile ``u_0(x)`` and its derivative."""

    f: Callable[[np.ndarray], np.ndarray]
    f_x: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, c: float) -> "InitialData":
        return cls(lambda x: np.full_like(x, c, dtype=float), lambda x: np.zeros_like(x))


# ---------------------------------------------------------------------------
# the system


@dataclass
class Geometry:
    x: np.ndarray
    xdot: np.ndarray
    s: np.ndarray           # scaling field, g or gbar
    x_mu: np.ndarray
    xdot_mu: np.ndarray
    s_mu: np.ndarray


@dataclass
class _Assembly:
    r: np.ndarray
    ustar: np.ndarray
    fphys: np.ndarray                       # F(u*) + viscous face flux
    r_u: np.ndarray | None = None
    r_x: np.ndarray | None = None
    r_xd: np.ndarray | None = None
    fphys_u: np.ndarray | None = None       # (K+1, N)
    fphys_x: np.ndarray | None = None
    fphys_xd: np.ndarray | None = None


class Dg1dSystem(SemiDiscreteSystem):
    """DG semi-discretization ``M dw/dt = r(w, mu, t)`` on a mapped interval.

    ``gcl`` selects the scaling field: ``None`` uses the nodal mapping
    Jacobian, a :class:`GclProvider` uses the integrated ``gbar``.
    ``initial_kind="steady"`` solves ``r(w_0, mu, t_0) = 0`` from the
    analytic profile and exposes the steady Jacobians for the adjoint.
    """

    def __init__(self, mesh: Mesh1d, flux: Flux, mapping: DomainMapping,
                 left: BoundaryData, right: BoundaryData, initial: InitialData,
                 gcl: GclProvider | None = None, t0: float = 0.0, penalty: float = 1.0,
                 initial_kind: Literal["analytic", "steady"] = "analytic",
                 steady_newton: NewtonOptions | None = None):
        self.mesh, self.flux, self.mapping = mesh, flux, mapping
        self.left, self.right, self.initial_data = left, right, initial
        self.gcl, self.t0 = gcl, float(t0)
        self.initial_kind = initial_kind
        self.steady_newton = steady_newton or NewtonOptions(tol=1e-12, max_iter=30)
        self.dim = mesh.N
        self.n_params = mapping.n_params
        self.C11 = penalty * (mesh.p + 1) ** 2 / mesh.h
        m = mesh
        K = m.K
        # LDG lifting q = Qu u + Qb (uD_left, uD_right), both fixed matrices.
        TLint = m.TL.copy()
        TLint[K] = 0.0
        self._Qu = m.mass_inverse() @ (-m.Sq @ m.Bq + m.Lf @ TLint)
        self._Qb = m.mass_inverse() @ m.Lf[:, [0, K]]
        self._BQu, self._BQb = m.Bq @ self._Qu, m.Bq @ self._Qb
        self._QhU = m.TR @ self._Qu
        self._QhU[0] = self._Qu[0]
        self._QhU[K] = self._Qu[-1]
        self._QhU[0, 0] += self.C11
        self._QhU[K, -1] -= self.C11
        self._QhB = m.TR @ self._Qb
        self._QhB[0] = self._Qb[0] + np.array([-self.C11, 0.0])
        self._QhB[K] = self._Qb[-1] + np.array([0.0, self.C11])
        self._GfX = 0.5 * (m.TL + m.TR) @ m.Dn
        self._GfX[0] = m.Dn[0]
        self._GfX[K] = m.Dn[-1]
        self._M = m.mass()

    # -- geometry -----------------------------------------------------------

    def geometry(self, mu, t: float) -> Geometry:
        mu = np.asarray(mu, dtype=float)
        X = self.mesh.nodes
        x = self.mapping.map(X, mu, t)
        xd = self.mapping.velocity(X, mu, t)
        x_mu = np.asarray(self.mapping.dmap_dmu(X, mu, t)).reshape(self.dim, self.n_params)
        xd_mu = np.asarray(self.mapping.dvel_dmu(X, mu, t)).reshape(self.dim, self.n_params)
        if self.gcl is None:
            s, s_mu = self.mesh.Dn @ x, self.mesh.Dn @ x_mu
        else:
            s, s_mu = self.gcl.at(mu, t)
        if np.any(s <= 0):
            raise MappingDegeneracy(f"nonpositive scaling field at t={t}")
        return Geometry(x, xd, s, x_mu, xd_mu, s_mu)

    # -- core assembly --------------------------------------------------------

    def _assemble(self, u, geo: Geometry, t: float, jac: bool) -> _Assembly:
        m, fl = self.mesh, self.flux
        K, nu = m.K, fl.nu
        x, xd = geo.x, geo.xdot
        uq = m.Bq @ u
        Gq = m.Dq @ x
        if np.any(Gq <= 0):
            raise MappingDegeneracy(f"nonpositive mapping Jacobian at t={t}")
        vq = m.Bq @ xd
        hq = fl.F(uq) - uq * vq

        uDL = self.left.value(x[0], xd[0], t)
        uDR = self.right.value(x[-1], xd[-1], t)
        a = m.TL @ u
        b = m.TR @ u
        a[0], b[K] = uDL, uDR
        vf = m.TF @ xd
        ustar, ia, ib, iv = fl.upwind_state(a, b, vf)
        Fs = fl.F(ustar)
        finv = Fs - vf * ustar

        if nu > 0:
            q = self._Qu @ u + self._Qb @ np.array([uDL, uDR])
            qq = m.Bq @ q
            Gn = m.Dn @ x
            Gf = self._GfX @ x
            qhat = m.TR @ q
            qhat[0] = q[0] + self.C11 * (u[0] - uDL)
            qhat[K] = q[-1] - self.C11 * (u[-1] - uDR)
            fvq = -nu * qq / Gq
            fvhat = -nu * qhat / Gf
        else:
            fvq = np.zeros_like(uq)
            fvhat = np.zeros(K + 1)

        r = m.Sq @ (hq + fvq) - m.Lf @ (finv + fvhat)
        out = _Assembly(r=r, ustar=ustar, fphys=Fs + fvhat)
        if not jac:
            return out

        dFs = fl.dF(ustar)
        hstar = dFs - vf                       # h'(u*)
        dfinv_u = (hstar * ia)[:, None] * m.TL + (hstar * ib)[:, None] * m.TR
        dfs_u = (dFs * ia)[:, None] * m.TL + (dFs * ib)[:, None] * m.TR
        dhq_u = (fl.dF(uq) - vq)[:, None] * m.Bq

        # boundary data enters as a[0] and b[K]
        dfinv_b = np.zeros((K + 1, 2))
        dfinv_b[0, 0] = hstar[0] * ia[0]
        dfinv_b[K, 1] = hstar[K] * ib[K]
        dfs_b = np.zeros((K + 1, 2))
        dfs_b[0, 0] = dFs[0] * ia[0]
        dfs_b[K, 1] = dFs[K] * ib[K]

        dfinv_xd = (-ustar + hstar * iv)[:, None] * m.TF
        dfs_xd = (dFs * iv)[:, None] * m.TF
        dhq_xd = (-uq)[:, None] * m.Bq

        N = self.dim
        if nu > 0:
            dfvq_u = (-nu / Gq)[:, None] * self._BQu
            dfvq_b = (-nu / Gq)[:, None] * self._BQb
            dfvq_x = (nu * qq / Gq**2)[:, None] * m.Dq
            dfvh_u = (-nu / Gf)[:, None] * self._QhU
            dfvh_b = (-nu / Gf)[:, None] * self._QhB
            dfvh_x = (nu * qhat / Gf**2)[:, None] * self._GfX
        else:
            dfvq_u = dfvq_x = np.zeros((uq.size, N))
            dfvq_b = np.zeros((uq.size, 2))
            dfvh_u = dfvh_x = np.zeros((K + 1, N))
            dfvh_b = np.zeros((K + 1, 2))

        r_u = m.Sq @ (dhq_u + dfvq_u) - m.Lf @ (dfinv_u + dfvh_u)
        r_x = m.Sq @ dfvq_x - m.Lf @ dfvh_x
        r_xd = m.Sq @ dhq_xd - m.Lf @ dfinv_xd
        r_b = m.Sq @ dfvq_b - m.Lf @ (dfinv_b + dfvh_b)
        fp_u = dfs_u + dfvh_u
        fp_x = dfvh_x.copy()
        fp_xd = dfs_xd.copy()
        fp_b = dfs_b + dfvh_b

        # chain boundary data through the end-node position and velocity
        for col, bc, node in ((0, self.left, 0), (1, self.right, N - 1)):
            dx = bc.d_x(x[node], xd[node], t)
            dxd = bc.d_xdot(x[node], xd[node], t)
            if dx:
                r_x[:, node] += r_b[:, col] * dx
                fp_x[:, node] += fp_b[:, col] * dx
            if dxd:
                r_xd[:, node] += r_b[:, col] * dxd
                fp_xd[:, node] += fp_b[:, col] * dxd
        out.r_u, out.r_x, out.r_xd = r_u, r_x, r_xd
        out.fphys_u, out.fphys_x, out.fphys_xd = fp_u, fp_x, fp_xd
        return out

    # -- SemiDiscreteSystem ---------------------------------------------------

    def mass(self) -> np.ndarray:
        return self._M.copy()

    def physical_state(self, w, geo: Geometry) -> np.ndarray:
        return np.asarray(w, dtype=float) / geo.s

    def residual(self, w, mu, t):
        geo = self.geometry(mu, t)
        return self._assemble(self.physical_state(w, geo), geo, t, jac=False).r

    def jac_state(self, w, mu, t):
        geo = self.geometry(mu, t)
        A = self._assemble(self.physical_state(w, geo), geo, t, jac=True)
        return A.r_u / geo.s[None, :]

    def residual_partials(self, w, mu, t) -> dict[str, np.ndarray | None]:
        """``dr/dx_nodes``, ``dr/dxdot_nodes`` and ``dr/dgbar`` at fixed ``w``.

        With GCL off the scaling is ``g = Dn x`` and its dependence is folded
        into the ``x`` block; ``gbar`` is then ``None``.
        """
        geo = self.geometry(mu, t)
        w = np.asarray(w, dtype=float)
        A = self._assemble(w / geo.s, geo, t, jac=True)
        r_s = A.r_u * (-w / geo.s**2)[None, :]
        if self.gcl is None:
            return {"x": A.r_x + r_s @ self.mesh.Dn, "xdot": A.r_xd, "gbar": None}
        return {"x": A.r_x, "xdot": A.r_xd, "gbar": r_s}

    def jac_param(self, w, mu, t):
        geo = self.geometry(mu, t)
        w = np.asarray(w, dtype=float)
        A = self._assemble(w / geo.s, geo, t, jac=True)
        r_s = A.r_u * (-w / geo.s**2)[None, :]
        return A.r_x @ geo.x_mu + A.r_xd @ geo.xdot_mu + r_s @ geo.s_mu

    def initial(self, mu) -> InitialCondition:
        mu = np.asarray(mu, dtype=float)
        geo = self.geometry(mu, self.t0)
        f, fx = self.initial_data.f(geo.x), self.initial_data.f_x(geo.x)
        w0 = geo.s * f
        dw0 = geo.s_mu * f[:, None] + (geo.s * fx)[:, None] * geo.x_mu
        if self.initial_kind == "analytic":
            return InitialCondition(value=w0, kind="analytic", dvalue_dmu=dw0)
        return self._steady(w0, mu)

    def _steady(self, w, mu) -> InitialCondition:
        opts = self.steady_newton
        hist = []
        for _ in range(opts.max_iter + 1):
            R = self.residual(w, mu, self.t0)
            hist.append(float(np.max(np.abs(R))))
            if hist[-1] <= opts.tol:
                break
            w = w - sla.lu_solve(lu(self.jac_state(w, mu, self.t0)), R)
        else:
            raise RuntimeError(f"steady initial state did not converge: {hist}")
        return InitialCondition(value=w, kind="steady",
                                steady_jac_state=self.jac_state(w, mu, self.t0),
                                steady_jac_param=self.jac_param(w, mu, self.t0),
                                steady_residual_norm=hist[-1])

    def integrands(self):
        return {"domain_energy": DomainEnergy(self),
                "boundary_work": BoundaryWork(self, "left"),
                "boundary_impulse": BoundaryImpulse(self, "left")}

    # -- diagnostics ------------------------------------------------------------

    def l2_error(self, w, mu, t, exact: Callable[[np.ndarray, float], np.ndarray],
                 n_quad: int | None = None) -> float:
        """Physical L2 error ``(int (u_h - u)^2 g dX)^(1/2)`` with a fine Gauss rule."""
        geo = self.geometry(mu, t)
        u = self.physical_state(w, geo)
        _, wX, B, D = self.mesh.quadrature(n_quad or self.mesh.p + 4)
        xq, Gq = B @ geo.x, D @ geo.x
        return float(np.sqrt(np.sum(wX * Gq * (B @ u - exact(xq, t)) ** 2)))

    def boundary_flux(self, w, mu, t) -> tuple[float, float]:
        """Physical numerical flux at the left and right ends."""
        geo = self.geometry(mu, t)
        A = self._assemble(self.physical_state(w, geo), geo, t, jac=False)
        return float(A.fphys[0]), float(A.fphys[-1])


# ---------------------------------------------------------------------------
# quantities of interest


class DomainEnergy:
    """``f_h = int u^2 dx = int u^2 G dX`` with the DG quadrature."""

    def __init__(self, system: Dg1dSystem):
        self.sys = system

    def _parts(self, w, mu, t):
        geo = self.sys.geometry(mu, t)
        m = self.sys.mesh
        u = np.asarray(w, dtype=float) / geo.s
        uq, Gq = m.Bq @ u, m.Dq @ geo.x
        return geo, u, uq, Gq

    def value(self, w, mu, t):
        _, _, uq, Gq = self._parts(w, mu, t)
        return float(np.sum(self.sys.mesh.wX * uq * uq * Gq))

    def _du(self, uq, Gq):
        return (2.0 * self.sys.mesh.wX * uq * Gq) @ self.sys.mesh.Bq

    def jac_state(self, w, mu, t):
        geo, _, uq, Gq = self._parts(w, mu, t)
        return self._du(uq, Gq) / geo.s

    def jac_param(self, w, mu, t):
        geo, u, uq, Gq = self._parts(w, mu, t)
        m = self.sys.mesh
        fx = (m.wX * uq * uq) @ m.Dq
        fs = self._du(uq, Gq) * (-u / geo.s)
        return fx @ geo.x_mu + fs @ geo.s_mu


class _BoundaryTrace:
    """Integrands built from the physical numerical flux at one end."""

    def __init__(self, system: Dg1dSystem, side: Literal["left", "right"] = "left"):
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        self.sys, self.side = system, side
        self.face = 0 if side == "left" else system.mesh.K
        self.node = 0 if side == "left" else system.dim - 1
        self.normal = -1.0 if side == "left" else 1.0

    def _assembly(self, w, mu, t, jac):
        geo = self.sys.geometry(mu, t)
        w = np.asarray(w, dtype=float)
        return geo, w, self.sys._assemble(w / geo.s, geo, t, jac=jac)

    # f = weight(xdot_b) * fphys_b; subclasses choose the weight.
    def _weight(self, xd_b):
        raise NotImplementedError

    def _dweight(self, xd_b):
        raise NotImplementedError

    def value(self, w, mu, t):
        geo, _, A = self._assembly(w, mu, t, False)
        return float(self._weight(geo.xdot[self.node]) * A.fphys[self.face])

    def jac_state(self, w, mu, t):
        geo, _, A = self._assembly(w, mu, t, True)
        return self._weight(geo.xdot[self.node]) * A.fphys_u[self.face] / geo.s

    def jac_param(self, w, mu, t):
        geo, w, A = self._assembly(w, mu, t, True)
        c = self._weight(geo.xdot[self.node])
        f_x = c * A.fphys_x[self.face]
        f_xd = c * A.fphys_xd[self.face]
        f_xd[self.node] += self._dweight(geo.xdot[self.node]) * A.fphys[self.face]
        f_s = c * A.fphys_u[self.face] * (-w / geo.s**2)
        return f_x @ geo.x_mu + f_xd @ geo.xdot_mu + f_s @ geo.s_mu


class BoundaryWork(_BoundaryTrace):
    """Power delivered by the moving end, ``-n xdot_b F_phys``."""

    def _weight(self, xd_b):
        return -self.normal * xd_b

    def _dweight(self, xd_b):
        return -self.normal


class BoundaryImpulse(_BoundaryTrace):
    """Force on the moving end, ``-n F_phys``; its time integral is the impulse."""

    def _weight(self, xd_b):
        return -self.normal

    def _dweight(self, xd_b):
        return 0.0


class PointValue:
    """Physical state at a fixed reference point."""

    def __init__(self, system: Dg1dSystem, X: float):
        self.sys = system
        self.row = system.mesh.evaluation_matrix([X])[0]

    def value(self, w, mu, t):
        geo = self.sys.geometry(mu, t)
        return float(self.row @ (np.asarray(w, dtype=float) / geo.s))

    def jac_state(self, w, mu, t):
        return self.row / self.sys.geometry(mu, t).s

    def jac_param(self, w, mu, t):
        geo = self.sys.geometry(mu, t)
        return (self.row * (-np.asarray(w, dtype=float) / geo.s**2)) @ geo.s_mu


QoiKind = Literal["boundary_work", "boundary_impulse", "domain_energy",
                  "terminal_state_norm", "point_value"]


def model_qoi(system: Dg1dSystem, kind: QoiKind, name: str | None = None, T: float | None = None,
              side: Literal["left", "right"] = "left", X: float | None = None) -> QoiSpec:
    """The shipped functionals of the DG model problem."""
    name = name or kind
    if kind == "boundary_work":
        return QoiSpec(name, BoundaryWork(system, side))
    if kind == "boundary_impulse":
        return QoiSpec(name, BoundaryImpulse(system, side))
    if kind == "domain_energy":
        return QoiSpec(name, DomainEnergy(system))
    if kind == "terminal_state_norm":
        if T is None:
            raise ValueError("terminal_state_norm needs the final time T")
        return QoiSpec(name, DomainEnergy(system), weight="time_impulse", t_star=T)
    if kind == "point_value":
        if X is None:
            raise ValueError("point_value needs a reference point X")
        return QoiSpec(name, PointValue(system, X), weight="space_point", x_star=X)
    raise ValueError(f"unknown QoI kind {kind!r}")


def write_snapshots(path, system: Dg1dSystem, states: np.ndarray, t: np.ndarray, mu,
                    header: str | None = None, every: int = 1) -> None:
    """CSV rows ``step, t, X, x, u`` for every ``every``-th stored state."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        wr = csv.writer(fh)
        wr.writerow(["step", "t", "X", "x", "u"])
        for n in range(0, len(t), every):
            geo = system.geometry(mu, t[n])
            u = system.physical_state(states[n], geo)
            for Xj, xj, uj in zip(system.mesh.nodes, geo.x, u):
                wr.writerow([n, repr(float(t[n])), repr(float(Xj)), repr(float(xj)),
                             repr(float(uj))])
