import csv

import numpy as np
import pytest

from adjflow.ale import StaticMapping
from adjflow.dg1d import (AdvectionDiffusion, Burgers, ConstantBoundary, Dg1dSystem, InitialData,
                          Mesh1d, assemble_mass, gll_nodes, model_qoi, write_snapshots)
from adjflow.primal import TimeGrid, integrate
from adjflow.tableau import make_tableau

from cases import moving_burgers


def _static(flux, K=4, p=2, left=0.0, right=0.0, initial=None):
    init = initial or InitialData.constant(left)
    return Dg1dSystem(Mesh1d(K, p), flux, StaticMapping(0), ConstantBoundary(left),
                      ConstantBoundary(right), init)


def test_gll_nodes():
    np.testing.assert_allclose(gll_nodes(1), [-1, 1])
    np.testing.assert_allclose(gll_nodes(2), [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(gll_nodes(3), [-1, -1 / np.sqrt(5), 1 / np.sqrt(5), 1])
    with pytest.raises(ValueError):
        gll_nodes(0)


def test_single_linear_element_mass():
    M = Mesh1d(1, 1).mass()
    np.testing.assert_allclose(M, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], rtol=1e-14)


@pytest.mark.parametrize("K,p", [(3, 1), (4, 2), (2, 4)])
def test_mass_spd_and_exact(K, p):
    mesh = Mesh1d(K, p, -0.5, 1.5)
    M = assemble_mass(mesh)
    np.testing.assert_array_equal(M, mesh.mass())
    np.testing.assert_allclose(M, M.T, atol=1e-16)
    assert np.linalg.eigvalsh(M).min() > 0
    one = np.ones(mesh.N)
    assert one @ M @ one == pytest.approx(2.0, rel=1e-14)
    X = mesh.nodes
    assert X @ M @ X == pytest.approx((1.5**3 + 0.5**3) / 3, rel=1e-13)


def test_mass_independent_of_parameters_and_time():
    system = moving_burgers(False, make_tableau("dirk2"), TimeGrid.uniform(0.5, 10))
    np.testing.assert_array_equal(system.mass(), system.mesh.mass())
    sys_b = moving_burgers(True, make_tableau("dirk3"), TimeGrid.uniform(0.5, 10))
    np.testing.assert_array_equal(sys_b.mass(), system.mass())


@pytest.mark.parametrize("flux", [Burgers(0.0), Burgers(0.02), AdvectionDiffusion(-0.7, 0.1)],
                         ids=["burgers", "viscous_burgers", "advdiff"])
def test_constant_state_is_steady_on_static_mesh(flux):
    system = _static(flux, left=1.3, right=1.3)
    r = system.residual(np.full(system.dim, 1.3), np.zeros(0), 0.2)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


@pytest.mark.parametrize("flux", [Burgers(0.0), Burgers(0.05), AdvectionDiffusion(0.6, 0.02)],
                         ids=["burgers", "viscous_burgers", "advdiff"])
def test_residual_is_conservative(flux, rng):
    system = _static(flux, K=5, p=3, left=0.4, right=-0.2)
    w = rng.uniform(-1, 1, system.dim)
    mu = np.zeros(0)
    fl, fr = system.boundary_flux(w, mu, 0.0)
    assert np.sum(system.residual(w, mu, 0.0)) == pytest.approx(fl - fr, abs=1e-12)


def test_zero_boundary_flux_conserves_mass(rng):
    # Inviscid Burgers with zero end states and interior data away from the ends.
    system = _static(Burgers(0.0), K=6, p=2)
    w = np.zeros(system.dim)
    inner = (system.mesh.nodes > 0.2) & (system.mesh.nodes < 0.8)
    w[inner] = rng.uniform(-1, 1, inner.sum())
    assert system.boundary_flux(w, np.zeros(0), 0.0) == (0.0, 0.0)
    assert abs(np.sum(system.residual(w, np.zeros(0), 0.0))) <= 1e-13


def test_domain_energy_of_unit_state_is_final_time():
    system = _static(Burgers(0.0), left=1.0, right=1.0)
    T = 0.8
    res = integrate(system, make_tableau("dirk3"), TimeGrid.uniform(T, 8), np.zeros(0),
                    [model_qoi(system, "domain_energy")])
    assert res.F["domain_energy"] == pytest.approx(T, abs=1e-13)


def test_boundary_work_vanishes_on_static_mesh():
    system = _static(Burgers(0.01), left=1.0, right=0.5,
                     initial=InitialData(lambda x: 1 - 0.5 * x, lambda x: -0.5 + 0 * x))
    q = [model_qoi(system, "boundary_work"), model_qoi(system, "boundary_impulse")]
    res = integrate(system, make_tableau("dirk2"), TimeGrid.uniform(0.3, 6), np.zeros(0), q)
    assert res.F["boundary_work"] == 0.0
    assert res.F["boundary_impulse"] != 0.0


def _heat_energy(K):
    # u = sin(pi x) exp(-t) solves u_t = u_xx / pi^2 with homogeneous ends.
    system = _static(AdvectionDiffusion(0.0, 1 / np.pi**2), K=K, p=2,
                     initial=InitialData(lambda x: np.sin(np.pi * x),
                                         lambda x: np.pi * np.cos(np.pi * x)))
    T = 0.5
    res = integrate(system, make_tableau("dirk3"), TimeGrid.uniform(T, 40), np.zeros(0),
                    [model_qoi(system, "domain_energy")])
    exact = 0.25 * (1 - np.exp(-2 * T))
    err_u = system.l2_error(res.trajectory.states[-1], np.zeros(0), T,
                            lambda x, t: np.sin(np.pi * x) * np.exp(-t))
    return abs(res.F["domain_energy"] - exact), err_u


def test_manufactured_heat_equation_converges():
    e = [_heat_energy(K) for K in (2, 4, 8)]
    errs_F = [a for a, _ in e]
    errs_u = [b for _, b in e]
    assert errs_F[2] < errs_F[1] < errs_F[0]
    assert errs_F[2] <= 1e-5
    assert np.log2(errs_u[1] / errs_u[2]) >= 2.5


def test_gcl_off_scaling_is_nodal_jacobian():
    tab, grid = make_tableau("dirk2"), TimeGrid.uniform(0.5, 10)
    system = moving_burgers(False, tab, grid)
    mu = np.array([0.05, 0.1])
    geo = system.geometry(mu, 0.21)
    np.testing.assert_allclose(geo.s, system.mesh.nodal_derivative(geo.x), rtol=1e-14)
    u = np.linspace(0.5, 1.5, system.dim)
    np.testing.assert_allclose(system.physical_state(u * geo.s, geo), u, rtol=1e-15)


def test_snapshots_csv(tmp_path):
    system = _static(Burgers(0.0), K=2, p=1, left=1.0, right=1.0)
    grid = TimeGrid.uniform(1.0, 4)
    res = integrate(system, make_tableau("dirk1"), grid, np.zeros(0))
    path = tmp_path / "snap.csv"
    write_snapshots(path, system, res.trajectory.states, grid.t, np.zeros(0), header="h", every=2)
    lines = path.read_text().splitlines()
    assert lines[0] == "# h"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["step", "t", "X", "x", "u"]
    assert len(rows) == 1 + 3 * system.dim
    assert {r[0] for r in rows[1:]} == {"0", "2", "4"}
    assert all(float(r[4]) == pytest.approx(1.0) for r in rows[1:])


def test_model_qoi_arguments():
    system = _static(Burgers(0.0))
    with pytest.raises(ValueError, match="final time"):
        model_qoi(system, "terminal_state_norm")
    with pytest.raises(ValueError, match="reference point"):
        model_qoi(system, "point_value")
    with pytest.raises(ValueError, match="unknown"):
        model_qoi(system, "lift")
    with pytest.raises(ValueError):
        model_qoi(system, "boundary_work", side="top")
    q = model_qoi(system, "point_value", X=0.3)
    assert q.name == "point_value"
