import numpy as np
import pytest

from adjflow.system import (LinearDecaySystem, LogisticSystem, SemiDiscreteSystem,
                            verify_derivatives)

from cases import moving_burgers, shipped_cases
from adjflow.primal import TimeGrid
from adjflow.tableau import make_tableau


def test_linear_probe_is_exact():
    rep = verify_derivatives(LinearDecaySystem(), np.ones(1), np.ones(1), 0.0)
    assert rep.max_error <= 1e-10


class _Corrupted(LinearDecaySystem):
    def jac_state(self, u, mu, t):
        J = super().jac_state(u, mu, t)
        J[0, 1] += 1e-3
        return J


def test_corrupted_jacobian_is_detected():
    rep = verify_derivatives(_Corrupted(dim=3), np.array([1.0, 2.0, 3.0]), np.ones(1), 0.0)
    assert rep.errors["jac_state"] >= 1e-4
    assert not rep.ok()


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        verify_derivatives(LinearDecaySystem(), np.ones(1), np.ones(1), 0.0, step=0.0)


@pytest.mark.parametrize("case", list(shipped_cases()), ids=lambda c: c[0])
def test_shipped_systems_at_random_probes(case, rng):
    label, system, _, grid, _, mu = case
    base = system.initial(mu).value
    if label.startswith("piston"):
        # Keep u above the peak mesh speed (0.57): the Godunov flux kinks at sonic states.
        base = base + 1.0
    for _ in range(10):
        u = base + 0.05 * rng.standard_normal(system.dim)
        m = mu + 0.01 * rng.standard_normal(mu.size)
        # GCL-backed systems are sampled only at grid and stage times.
        t = float(grid.t[3]) if getattr(system, "gcl", None) else float(rng.uniform(0, grid.t[-1]))
        rep = verify_derivatives(system, u, m, t, integrands=system.integrands())
        assert rep.ok(1e-6), rep.errors


@pytest.mark.parametrize("case", list(shipped_cases()), ids=lambda c: c[0])
def test_mass_is_constant_and_symmetric(case):
    _, system, _, grid, _, mu = case
    M1 = system.mass()
    M2 = system.mass()
    assert np.array_equal(M1, M2)
    np.testing.assert_allclose(M1, M1.T, atol=1e-15)
    assert np.all(np.linalg.eigvalsh(M1) > 0)


def test_logistic_exact_solution_solves_ode():
    s, mu = LogisticSystem(0.2), np.array([1.5])
    t, h = 0.7, 1e-5
    du = (s.exact(mu, t + h) - s.exact(mu, t - h)) / (2 * h)
    u = s.exact(mu, t)
    assert du == pytest.approx(s.residual(np.array([u]), mu, t)[0], rel=1e-8)
    assert s.exact(mu, 0.0) == pytest.approx(0.2)


def test_interface_is_abstract():
    with pytest.raises(TypeError):
        SemiDiscreteSystem()


def test_gcl_system_rejects_unsampled_time():
    tab, grid = make_tableau("dirk2"), TimeGrid.uniform(0.5, 4)
    s = moving_burgers(True, tab, grid)
    with pytest.raises(KeyError):
        s.residual(s.initial(np.zeros(2)).value, np.zeros(2), 0.123456)
