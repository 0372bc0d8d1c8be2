"""Projected L-BFGS with Armijo backtracking, plus an augmented-Lagrangian loop
for a single equality constraint ``c(mu) = q``.

The evaluator returns objective and constraint values together with their
gradients from one primal solve and one adjoint batch.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger("adjflow.optimize")


@dataclass
class Evaluation:
    objective: float
    gradient: np.ndarray
    constraint: float | None = None
    constraint_gradient: np.ndarray | None = None


class EvaluatorFailure(RuntimeError):
    pass


@dataclass
class OptProblem:
    """``min f(mu)`` over ``lower <= mu <= upper``, optionally with ``c(mu) = target``."""

    evaluator: Callable[[np.ndarray], Evaluation]
    x0: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    target: float | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        n = self.x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def project(self, x):
        return np.clip(x, self.lower, self.upper)


@dataclass
class OptOptions:
    memory: int = 10
    gtol: float = 1e-8              # on the scaled projected gradient
    xtol: float = 1e-12
    max_iter: int = 200             # inner iterations per subproblem
    max_outer: int = 20
    ctol: float = 1e-8              # absolute constraint violation
    armijo_c1: float = 1e-4
    max_backtracks: int = 30
    max_failures: int = 8
    rho0: float = 10.0
    rho_growth: float = 10.0
    scale: bool = True


@dataclass
class OptResult:
    x: np.ndarray
    objective: float
    constraint: float | None
    reason: str
    success: bool
    trace: list[dict] = field(default_factory=list)
    n_evaluations: int = 0
    multiplier: float | None = None


class _Counted:
    """Evaluator wrapper that counts calls and caches the latest point."""

    def __init__(self, fn):
        self.fn, self.calls = fn, 0
        self._last: tuple[bytes, Evaluation] | None = None

    def __call__(self, x) -> Evaluation:
        key = np.asarray(x, dtype=float).tobytes()
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        self.calls += 1
        ev = self.fn(np.array(x, dtype=float))
        if not np.isfinite(ev.objective) or not np.all(np.isfinite(ev.gradient)):
            raise EvaluatorFailure("non-finite objective or gradient")
        self._last = (key, ev)
        return ev


def _scale(v: float) -> float:
    """Inverse magnitude of an initial value; 1 when it is too small to normalize by."""
    return 1.0 / abs(v) if abs(v) > 1e-8 else 1.0


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _projected_gradient(x, g, lo, hi):
    return np.clip(x - g, lo, hi) - x


def _lbfgs(merit, x0, lo, hi, opts: OptOptions, trace: list, outer: int, record):
    """Minimize ``merit(x) -> (value, grad, info)`` over the box; returns (x, reason)."""
    x = np.clip(x0, lo, hi)
    f, g, info = merit(x)
    pairs: deque = deque(maxlen=opts.memory)
    for it in range(opts.max_iter):
        pg = _projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg), initial=0.0) <= opts.gtol:
            return x, "gradient"
        tiny = 1e-12
        active = ((x <= lo + tiny) & (g > 0)) | ((x >= hi - tiny) & (g < 0))
        gf = np.where(active, 0.0, g)
        d = -_two_loop(gf, list(pairs))
        d[active] = 0.0
        if d @ gf >= 0:
            pairs.clear()
            d = -gf
        alpha = 1.0 if pairs else min(1.0, 1.0 / max(np.max(np.abs(gf)), 1e-300))
        n_bt, failures = 0, 0
        while True:
            xt = np.clip(x + alpha * d, lo, hi)
            try:
                ft, gt, info_t = merit(xt)
                ok = True
            except (EvaluatorFailure, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
                failures += 1
                log.warning("evaluation failed at trial step %.3e: %s", alpha, exc)
                if failures > opts.max_failures:
                    raise EvaluatorFailure(f"persistent evaluator failure: {exc}") from exc
                ok = False
            rhs = f + opts.armijo_c1 * (g @ (xt - x))
            if ok and ft <= rhs:
                break
            n_bt += 1
            if n_bt > opts.max_backtracks:
                return x, "line_search"
            alpha *= 0.5
        s, y = xt - x, gt - g
        record(dict(outer=outer, iteration=it + 1, alpha=alpha, backtracks=n_bt,
                    merit=ft, merit_prev=f, armijo_rhs=rhs,
                    step_norm=float(np.max(np.abs(s))),
                    pgrad_norm=float(np.max(np.abs(_projected_gradient(xt, gt, lo, hi)))),
                    x=xt.tolist(), **info_t))
        x, f, g, info = xt, ft, gt, info_t
        if s @ y > 1e-14 * max(np.linalg.norm(s) * np.linalg.norm(y), 1e-300):
            pairs.append((s, y, 1.0 / (s @ y)))
        if np.max(np.abs(s)) <= opts.xtol:
            return x, "step"
    return x, "max_iter"


def minimize(problem: OptProblem, options: OptOptions | None = None) -> OptResult:
    """Bound-constrained L-BFGS, wrapped in an augmented Lagrangian when ``target`` is set."""
    opts = options or OptOptions()
    ev = _Counted(problem.evaluator)
    lo, hi = problem.lower, problem.upper
    x = problem.project(problem.x0)
    trace: list[dict] = []
    e0 = ev(x)
    sf = _scale(e0.objective) if opts.scale else 1.0
    constrained = problem.target is not None
    if constrained:
        if e0.constraint is None:
            raise ValueError("constrained problem but evaluator returns no constraint")
        sc = _scale(e0.constraint) if opts.scale else 1.0
    lam, rho = 0.0, opts.rho0

    def info_of(e: Evaluation) -> dict:
        d = {"objective": e.objective, "evaluations": ev.calls}
        if constrained:
            d["constraint"] = e.constraint
            d["violation"] = e.constraint - problem.target
        return d

    def merit(z):
        e = ev(z)
        val, grad = sf * e.objective, sf * e.gradient
        if constrained:
            c = sc * (e.constraint - problem.target)
            val += -lam * c + 0.5 * rho * c * c
            grad = grad + (rho * c - lam) * sc * e.constraint_gradient
        return val, grad, info_of(e)

    def record(row):
        row["multiplier"], row["penalty"] = lam, (rho if constrained else 0.0)
        trace.append(row)
        log.info(json.dumps({k: v for k, v in row.items() if k != "x"}))

    try:
        if not constrained:
            x, reason = _lbfgs(merit, x, lo, hi, opts, trace, 0, record)
            e = ev(x)
            return OptResult(x, e.objective, None, reason, reason in ("gradient", "step"),
                             trace, ev.calls)
        c_prev = np.inf
        reason = "max_outer"
        for outer in range(opts.max_outer):
            x, inner = _lbfgs(merit, x, lo, hi, opts, trace, outer, record)
            e = ev(x)
            viol = e.constraint - problem.target
            if abs(viol) <= opts.ctol and inner in ("gradient", "step"):
                reason = "converged"
                break
            c = sc * viol
            lam -= rho * c
            if abs(c) > 0.25 * c_prev:
                rho *= opts.rho_growth
            c_prev = abs(c)
        e = ev(x)
        return OptResult(x, e.objective, e.constraint, reason, reason == "converged", trace,
                         ev.calls, multiplier=lam * sc / sf)
    except EvaluatorFailure as exc:
        # Report the last accepted iterate, not the failed trial point.
        if trace:
            last = trace[-1]
            x = np.array(last["x"])
            obj, con = last["objective"], last.get("constraint")
        else:
            obj, con = e0.objective, e0.constraint
        return OptResult(x, obj, con, f"evaluator_failure: {exc}", False, trace, ev.calls)


def check_armijo(trace: list[dict], c1: float = 1e-4) -> bool:
    """Every accepted step satisfied sufficient decrease on its merit function."""
    return all(r["merit"] <= r["armijo_rhs"] + 1e-15 * abs(r["merit_prev"]) for r in trace)


def write_trace(trace: list[dict], csv_path=None, json_path=None, header: str | None = None):
    cols = ["outer", "iteration", "objective", "constraint", "violation", "pgrad_norm",
            "step_norm", "alpha", "backtracks", "merit", "multiplier", "penalty", "evaluations"]
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(cols + ["x"])
            for r in trace:
                w.writerow([repr(r.get(c, "")) if isinstance(r.get(c), float) else r.get(c, "")
                            for c in cols] + [" ".join(repr(v) for v in r["x"])])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"header": header, "trace": trace}, fh, indent=1)


def make_evaluator(system, tab, grid, objective, constraint=None, store_factory=None,
                   newton=None) -> Callable[[np.ndarray], Evaluation]:
    """Evaluator running one primal solve and one multi-QoI adjoint sweep per call."""
    from .adjoint import gradient
    from .primal import integrate

    qois = [objective] + ([constraint] if constraint is not None else [])

    def evaluate(mu):
        store = store_factory(mu) if store_factory is not None else None
        res = integrate(system, tab, grid, mu, qois, store=store, newton=newton)
        _, grads = gradient(system, tab, grid, mu, qois, res.store, initial=res.initial)
        ev = Evaluation(res.F[objective.name], grads[objective.name].value)
        if constraint is not None:
            ev.constraint = res.F[constraint.name]
            ev.constraint_gradient = grads[constraint.name].value
        if hasattr(res.store, "close"):
            res.store.close()
        return ev

    return evaluate
