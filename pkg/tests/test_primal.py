import json
import logging

import numpy as np
import pytest

from adjflow.primal import (LinearSolveFailure, NewtonOptions, StageFailure, TimeGrid, integrate,
                            solve_stage)
from adjflow.qoi import LinearStateIntegrand, QoiSpec
from adjflow.store import FileStore, Slot
from adjflow.system import LinearDecaySystem, LogisticSystem
from adjflow.tableau import make_tableau


def test_backward_euler_stage_closed_form():
    res = solve_stage(LinearDecaySystem(), make_tableau("dirk1"), np.ones(1), [], 0, 0.0, 0.1,
                      np.ones(1), NewtonOptions())
    assert res.k[0] == pytest.approx(-0.1 / 1.1, abs=1e-15)


def test_one_step_closed_form():
    q = QoiSpec("u", LinearStateIntegrand([1.0]), weight="time_impulse", t_star=0.5)
    res = integrate(LinearDecaySystem(), make_tableau("dirk1"), TimeGrid.uniform(0.5, 1),
                    np.ones(1), [q])
    assert res.trajectory.stages[0, 0, 0] == pytest.approx(-1 / 3, abs=1e-15)
    assert res.F["u"] == pytest.approx(2 / 3, abs=1e-15)


def test_dirk3_error_ratio_on_decay():
    s, tab = LinearDecaySystem(), make_tableau("dirk3")
    errs = [abs(integrate(s, tab, TimeGrid.uniform(1.0, n), np.ones(1)).trajectory.states[-1, 0]
                - np.exp(-1)) for n in (10, 20, 40)]
    assert 7.0 <= errs[0] / errs[1] <= 9.0
    assert 7.0 <= errs[1] / errs[2] <= 9.0


def test_update_identity_and_stage_residuals(piston):
    system, tab, grid, qois, mu = piston
    res = integrate(system, tab, grid, mu, qois)
    traj = res.trajectory
    assert traj.update_defect(tab) <= 1e-13
    M = system.mass()
    for n in (1, grid.n_steps // 2, grid.n_steps):
        dt = grid.dt[n - 1]
        for i, ui in enumerate(traj.stage_states(tab, n)):
            r = M @ traj.stages[n - 1, i] - dt * system.residual(ui, mu, grid.stage_time(n, i, tab))
            assert np.max(np.abs(r)) <= 1e-11


def test_newton_converges_quadratically(piston):
    system, tab, grid, _, mu = piston
    u0 = system.initial(mu).value
    res = solve_stage(system, tab, u0, [], 0, 0.0, 0.1, mu, NewtonOptions(tol=1e-14))
    h = [v for v in res.history if v > 1e-13]
    assert len(h) >= 3
    ratios = [h[j + 1] / h[j] for j in range(1, len(h) - 1)]
    assert max(ratios) <= 0.1
    # error contracts like e_{k+1} ~ C e_k^2
    assert h[-1] <= 10 * h[-2] ** 2 / h[-3] ** 2 * h[-2] + 1e-13


def test_stage_failure_carries_history():
    with pytest.raises(StageFailure) as info:
        integrate(LogisticSystem(0.5), make_tableau("dirk2"), TimeGrid.uniform(1.0, 2),
                  np.array([50.0]), newton=NewtonOptions(tol=1e-16, max_iter=1))
    assert info.value.step == 1 and info.value.stage == 1
    assert len(info.value.history) >= 1


def test_singular_stage_matrix():
    # M - dt * a11 * J = 1 - 1 * 1 * 1 = 0
    with pytest.raises(LinearSolveFailure):
        solve_stage(LinearDecaySystem(), make_tableau("dirk1"), np.ones(1), [], 0, 0.0, 1.0,
                    np.array([-1.0]), NewtonOptions())


def test_failure_marks_store_partial(tmp_path):
    path = tmp_path / "p.ckpt"
    fs = FileStore(path, 1, 2, TimeGrid.uniform(1.0, 3).t)
    with pytest.raises(StageFailure):
        integrate(LogisticSystem(0.5), make_tableau("dirk2"), TimeGrid.uniform(1.0, 3),
                  np.array([50.0]), store=fs, newton=NewtonOptions(tol=1e-16, max_iter=1))
    fs.close()
    assert fs.partial and (tmp_path / "p.ckpt.partial").exists()


def test_store_receives_every_record(tmp_path):
    s, tab, grid = LinearDecaySystem(dim=3), make_tableau("dirk3"), TimeGrid.uniform(1.0, 4)
    path = tmp_path / "p.ckpt"
    with FileStore(path, 3, 3, grid.t) as fs:
        res = integrate(s, tab, grid, np.ones(1), store=fs)
        assert fs.complete
    with FileStore.open(path) as fs:
        assert np.array_equal(fs.read_slot(Slot(4)), res.trajectory.states[4])
        assert np.array_equal(fs.read_slot(Slot(2, "stage", 3)), res.trajectory.stages[1, 2])


def test_progress_log_is_json(caplog):
    with caplog.at_level(logging.DEBUG, logger="adjflow.primal"):
        integrate(LinearDecaySystem(), make_tableau("dirk2"), TimeGrid.uniform(1.0, 2),
                  np.ones(1), [QoiSpec("u", LinearStateIntegrand([1.0]))])
    rows = [json.loads(r.message) for r in caplog.records if r.name == "adjflow.primal"]
    assert [r["step"] for r in rows] == [1, 2]
    assert set(rows[0]) == {"step", "t", "newton_iters", "F"}


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.4]))
    g = TimeGrid.uniform(2.0, 4, t0=1.0)
    assert g.n_steps == 4 and g.t[0] == 1.0 and g.t[-1] == 2.0
    assert g.stage_time(2, 0, make_tableau("dirk1")) == 1.5
