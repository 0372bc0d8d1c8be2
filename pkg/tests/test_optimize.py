import csv
import json

import numpy as np
import pytest

from adjflow.optimize import (Evaluation, EvaluatorFailure, OptOptions, OptProblem, check_armijo,
                              make_evaluator, minimize, write_trace)
from adjflow.primal import TimeGrid, integrate
from adjflow.qoi import QoiSpec
from adjflow.system import LinearDecaySystem
from adjflow.tableau import make_tableau


def quad(mu):
    return Evaluation(float((mu[0] - 2.0) ** 2), np.array([2 * (mu[0] - 2.0)]))


def rosenbrock(mu):
    x, y = mu
    f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
    g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    return Evaluation(float(f), g)


def circle(mu):
    # min x^2 + y^2 subject to x + y = 1.
    return Evaluation(float(mu @ mu), 2 * mu, float(mu.sum()), np.ones(2))


def test_scalar_quadratic():
    res = minimize(OptProblem(quad, [0.0]))
    assert res.success
    assert res.x[0] == pytest.approx(2.0, abs=1e-8)
    assert check_armijo(res.trace)


def test_rosenbrock():
    res = minimize(OptProblem(rosenbrock, [-1.2, 1.0]), OptOptions(max_iter=500))
    assert res.success, res.reason
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert check_armijo(res.trace)


def test_active_bound():
    res = minimize(OptProblem(quad, [0.0], lower=[-1.0], upper=[1.5]))
    assert res.success
    assert res.x[0] == 1.5
    assert all(-1.0 <= r["x"][0] <= 1.5 for r in res.trace)


def test_inconsistent_bounds():
    with pytest.raises(ValueError):
        OptProblem(quad, [0.0], lower=[1.0], upper=[0.0])


def test_equality_constrained_quadratic():
    res = minimize(OptProblem(circle, [2.0, -1.0], target=1.0), OptOptions(ctol=1e-11))
    assert res.success, res.reason
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-7)
    assert abs(res.constraint - 1.0) <= 1e-10
    # Stationarity: grad f = lambda grad c with lambda = 1.
    assert res.multiplier == pytest.approx(1.0, rel=1e-5)
    assert check_armijo(res.trace)


def test_merit_decreases_within_each_subproblem():
    res = minimize(OptProblem(circle, [2.0, -1.0], target=1.0))
    outers = {r["outer"] for r in res.trace}
    for o in outers:
        rows = [r for r in res.trace if r["outer"] == o]
        merits = [r["merit"] for r in rows]
        assert all(b <= a for a, b in zip(merits, merits[1:]))
        assert all(r["merit"] <= r["merit_prev"] for r in rows)


def test_constrained_needs_constraint_values():
    with pytest.raises(ValueError, match="constraint"):
        minimize(OptProblem(quad, [0.0], target=1.0))


def test_every_call_is_counted_once():
    calls = []

    def fn(mu):
        calls.append(mu.copy())
        return rosenbrock(mu)

    res = minimize(OptProblem(fn, [-1.2, 1.0]), OptOptions(max_iter=500))
    assert res.n_evaluations == len(calls)
    assert res.trace[-1]["evaluations"] <= res.n_evaluations
    # The cache never re-evaluates the same point back to back.
    assert all(not np.array_equal(a, b) for a, b in zip(calls, calls[1:]))


def test_failed_trial_steps_are_halved():
    def fn(mu):
        if mu[0] > 1.5:
            raise RuntimeError("nonpositive scaling field")
        return quad(mu)

    res = minimize(OptProblem(fn, [0.0]))
    # Progress up to the wall is kept and reported at an accepted iterate.
    assert 1.0 <= res.x[0] <= 1.5
    assert res.objective == pytest.approx((res.x[0] - 2.0) ** 2)
    assert any(r["backtracks"] > 0 for r in res.trace) or not res.success


def test_persistent_failure_reported():
    state = {"n": 0}

    def fn(mu):
        state["n"] += 1
        if state["n"] > 1:
            raise EvaluatorFailure("solver diverged")
        return quad(mu)

    res = minimize(OptProblem(fn, [0.0]), OptOptions(max_failures=3))
    assert not res.success
    assert res.reason.startswith("evaluator_failure")
    assert res.x[0] == 0.0


def test_nonfinite_evaluation_is_a_failure():
    def fn(mu):
        return Evaluation(np.nan, np.zeros(1)) if mu[0] != 0.0 else quad(mu)

    res = minimize(OptProblem(fn, [0.0]), OptOptions(max_failures=2))
    assert not res.success


def test_write_trace(tmp_path):
    res = minimize(OptProblem(circle, [2.0, -1.0], target=1.0))
    write_trace(res.trace, tmp_path / "t.csv", tmp_path / "t.json", header="abc")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# abc"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == len(res.trace)
    assert float(rows[-1]["violation"]) == pytest.approx(res.trace[-1]["violation"])
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["header"] == "abc" and len(data["trace"]) == len(res.trace)


def test_adjoint_evaluator_drives_ode_problem():
    # du/dt = -mu u, u(0) = 1: minimize (int u dt - 0.5)^2 through the adjoint gradient.
    system, tab, grid = LinearDecaySystem(), make_tableau("dirk3"), TimeGrid.uniform(1.0, 20)
    obj = QoiSpec("u", system.integrands()["state"])
    ev = make_evaluator(system, tab, grid, obj)
    e = ev(np.array([1.0]))
    F = integrate(system, tab, grid, np.array([1.0]), [obj]).F["u"]
    assert e.objective == F
    h = 1e-6
    fd = (ev(np.array([1 + h])).objective - ev(np.array([1 - h])).objective) / (2 * h)
    assert e.gradient[0] == pytest.approx(fd, rel=1e-7)

    def target(mu):
        e = ev(mu)
        return Evaluation((e.objective - 0.5) ** 2, 2 * (e.objective - 0.5) * e.gradient)

    res = minimize(OptProblem(target, [1.0], lower=[0.0], upper=[10.0]))
    assert res.success
    assert ev(res.x).objective == pytest.approx(0.5, abs=1e-5)
