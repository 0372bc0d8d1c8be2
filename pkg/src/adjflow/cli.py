"""Command line front end: ``adjflow <command> --config run.yaml [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import config as C
from .adjoint import gradient, gradients_to_json, lagrangian_residuals
from .dg1d import AdvectionDiffusion, Dg1dSystem, FunctionBoundary, InitialData, Mesh1d, write_snapshots
from .ale import StaticMapping
from .optimize import OptOptions, OptProblem, make_evaluator, minimize, write_trace
from .primal import NewtonOptions, TimeGrid, integrate
from .qoi import write_history_csv
from .store import FileStore
from .tableau import make_tableau

log = logging.getLogger("adjflow")

COMMANDS = ("simulate", "adjoint", "grad-check", "order-study", "gcl-check", "optimize")


class Context:
    def __init__(self, cfg: C.RunConfig, command: str, out: Path, threads: int):
        self.cfg, self.command, self.out, self.threads = cfg, command, out, threads
        self.hash = cfg.digest()
        out.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> str:
        return f"config_hash={self.hash} command={self.command}"

    def meta(self) -> dict:
        return {"config_hash": self.hash, "command": self.command}

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        with open(path, "w") as fh:
            json.dump({"header": self.meta(), **payload}, fh, indent=2)
            fh.write("\n")
        return path

    def write_csv(self, name: str, columns: list[str], rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.header}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
        return path

    def mu0(self) -> np.ndarray:
        return np.array(self.cfg.parameters.initial, dtype=float)


def _setup(ctx: Context, gcl=None, freestream=None, n_steps=None):
    cfg = ctx.cfg
    tab, grid = C.build_tableau(cfg), C.build_grid(cfg, n_steps)
    system = C.build_system(cfg, tab, grid, gcl=gcl, freestream=freestream)
    return tab, grid, system, C.build_qois(cfg, system)


def _primal_to_disk(ctx, tab, grid, system, qois, mu):
    store = FileStore(ctx.out / "primal.ckpt", system.dim, tab.s, grid.t)
    try:
        res = integrate(system, tab, grid, mu, qois, store=store, newton=C.build_newton(ctx.cfg))
    finally:
        store.close()
    return res


def cmd_simulate(ctx: Context) -> dict:
    tab, grid, system, qois = _setup(ctx)
    mu = ctx.mu0()
    res = _primal_to_disk(ctx, tab, grid, system, qois, mu)
    write_history_csv(ctx.out / "qoi_history.csv", res.trajectory.history_table(), ctx.header)
    write_snapshots(ctx.out / "snapshots.csv", system, res.trajectory.states, grid.t, mu,
                    ctx.header)
    summary = {"F": res.F, "max_newton_iterations": int(res.trajectory.newton_iterations.max())}
    ctx.write_json("simulate.json", summary)
    return summary


def cmd_adjoint(ctx: Context) -> dict:
    tab, grid, system, qois = _setup(ctx)
    mu = ctx.mu0()
    res = _primal_to_disk(ctx, tab, grid, system, qois, mu)
    with FileStore.open(ctx.out / "primal.ckpt") as store:
        dual, grads = gradient(system, tab, grid, mu, qois, store, initial=res.initial)
    gradients_to_json(grads, ctx.out / "gradient.json", ctx.meta())
    lag = lagrangian_residuals(system, tab, grid, mu, qois, res.trajectory, dual)
    report = {"F": res.F, "lagrangian_max": lag.max_residual,
              "lagrangian_scaled_max": lag.scaled_max(),
              "lambda_inf": lag.lam_inf}
    ctx.write_json("dual_report.json", report)
    return report


def _fd4(fun, mu, j, tau):
    e = np.zeros_like(mu)
    e[j] = tau
    f = [fun(mu + k * e) for k in (2, 1, -1, -2)]
    return (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * tau)


def cmd_grad_check(ctx: Context) -> dict:
    cfg = ctx.cfg
    tab, grid, system, qois = _setup(ctx)
    mu = ctx.mu0()
    name = cfg.grad_check.qoi or qois[0].name
    qoi = next(q for q in qois if q.name == name)
    newton = C.build_newton(cfg)
    res = integrate(system, tab, grid, mu, [qoi], newton=newton)
    _, grads = gradient(system, tab, grid, mu, [qoi], res.store, initial=res.initial)
    g = grads[name].value

    def F(m):
        return integrate(system, tab, grid, m, [qoi], newton=newton).F[name]

    rows, errs = [], []
    for tau in cfg.grad_check.taus:
        fd = np.array([_fd4(F, mu, j, tau) for j in range(mu.size)])
        err = float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-300))
        errs.append(err)
        rows.append([tau, err] + list(fd))
    ctx.write_csv("grad_check.csv", ["tau", "rel_error"] + [f"fd_{j}" for j in range(mu.size)],
                  rows)
    out = {"qoi": name, "adjoint_gradient": g.tolist(), "min_rel_error": min(errs),
           "taus": list(cfg.grad_check.taus), "rel_errors": errs}
    ctx.write_json("grad_check.json", out)
    return out


def _slopes(h, err):
    h, err = np.log(np.asarray(h)), np.log(np.asarray(err))
    local = list((err[:-1] - err[1:]) / (h[:-1] - h[1:]))
    return float(np.polyfit(h, err, 1)[0]), [float(v) for v in local]


def _pmap(ctx, fn, items):
    if ctx.threads > 1:
        with ThreadPoolExecutor(ctx.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def cmd_order_study(ctx: Context) -> dict:
    cfg, st = ctx.cfg, ctx.cfg.order_study
    mu = ctx.mu0()
    rows, fits = [], {}
    if st.kind == "temporal":
        ref_steps = 4 * max(st.N_t)
        ref_tab, ref_grid = make_tableau("dirk3"), C.build_grid(cfg, ref_steps)
        ref_sys = C.build_system(cfg, ref_tab, ref_grid)
        ref = integrate(ref_sys, ref_tab, ref_grid, mu).trajectory.states[-1]

        def run(job):
            kind, n = job
            tab, grid = make_tableau(kind), C.build_grid(cfg, n)
            system = C.build_system(cfg, tab, grid)
            u = integrate(system, tab, grid, mu, newton=NewtonOptions(tol=1e-13)).trajectory.states[-1]
            return float(np.max(np.abs(u - ref)))

        jobs = [(k, n) for k in st.tableaus for n in st.N_t]
        errs = dict(zip(jobs, _pmap(ctx, run, jobs)))
        for k in st.tableaus:
            dts = [cfg.time.T / n for n in st.N_t]
            e = [errs[(k, n)] for n in st.N_t]
            fit, local = _slopes(dts, e)
            fits[k] = {"slope": fit, "local": local}
            rows += [[k, n, cfg.time.T / n, ee] for n, ee in zip(st.N_t, e)]
        ctx.write_csv("order_study.csv", ["tableau", "N_t", "dt", "error"], rows)
    else:
        def run(job):
            p, K = job
            return spatial_error(K, p)

        jobs = [(p, K) for p in st.orders for K in st.K]
        errs = dict(zip(jobs, _pmap(ctx, run, jobs)))
        for p in st.orders:
            e = [errs[(p, K)] for K in st.K]
            fit, local = _slopes([1.0 / K for K in st.K], e)
            fits[f"p{p}"] = {"slope": fit, "local": local}
            rows += [[p, K, 1.0 / K, ee] for K, ee in zip(st.K, e)]
        ctx.write_csv("order_study.csv", ["p", "K", "h", "error"], rows)
    out = {"kind": st.kind, "fits": fits}
    ctx.write_json("order_study.json", out)
    return out


def spatial_error(K: int, p: int, T: float = 0.1, n_steps: int = 100) -> float:
    """L2 error of linear advection of ``sin(2 pi (x - t))`` on a static unit interval."""
    def exact(x, t):
        return np.sin(2 * np.pi * (x - t))

    def exact_x(x, t):
        return 2 * np.pi * np.cos(2 * np.pi * (x - t))

    bc = FunctionBoundary(exact, exact_x)
    system = Dg1dSystem(Mesh1d(K, p), AdvectionDiffusion(1.0, 0.0), StaticMapping(0), bc, bc,
                        InitialData(lambda x: exact(x, 0.0), lambda x: exact_x(x, 0.0)))
    tab, grid = make_tableau("dirk3"), TimeGrid.uniform(T, n_steps)
    mu = np.zeros(0)
    res = integrate(system, tab, grid, mu)
    return system.l2_error(res.trajectory.states[-1], mu, T, exact)


def freestream_error(ctx: Context, gcl: bool) -> float:
    cfg = ctx.cfg
    c = cfg.gcl_check.state
    tab, grid = C.build_tableau(cfg), C.build_grid(cfg)
    system = C.build_system(cfg, tab, grid, gcl=gcl, freestream=c)
    mu = ctx.mu0()
    res = integrate(system, tab, grid, mu,
                    newton=NewtonOptions(tol=cfg.gcl_check.newton_tol,
                                         max_iter=cfg.time.newton_max_iter))
    err = 0.0
    for n, tn in enumerate(grid.t):
        u = system.physical_state(res.trajectory.states[n], system.geometry(mu, tn))
        err = max(err, float(np.max(np.abs(u - c))))
    return err


def cmd_gcl_check(ctx: Context) -> dict:
    out = {"error_gcl_on": freestream_error(ctx, True), "error_gcl_off": freestream_error(ctx, False)}
    ctx.write_json("gcl_check.json", out)
    return out


def cmd_optimize(ctx: Context) -> dict:
    cfg = ctx.cfg
    if cfg.optimize is None:
        raise ValueError("config has no optimize block")
    oc = cfg.optimize
    tab, grid, system, qois = _setup(ctx)
    by_name = {q.name: q for q in qois}
    evaluator = make_evaluator(system, tab, grid, by_name[oc.objective],
                               by_name.get(oc.constraint) if oc.constraint else None,
                               newton=C.build_newton(cfg))
    problem = OptProblem(evaluator, ctx.mu0(), cfg.parameters.lower, cfg.parameters.upper,
                         oc.target)
    opts = OptOptions(memory=oc.memory, gtol=oc.gtol, ctol=oc.ctol, max_iter=oc.max_iter,
                      max_outer=oc.max_outer)
    nominal = evaluator(ctx.mu0())
    res = minimize(problem, opts)
    write_trace(res.trace, ctx.out / "opt_trace.csv", ctx.out / "opt_trace.json", ctx.header)
    out = {"mu": res.x.tolist(), "objective": res.objective, "nominal_objective": nominal.objective,
           "reduction": 1.0 - res.objective / nominal.objective if nominal.objective else None,
           "constraint": res.constraint,
           "violation": (res.constraint - oc.target) if oc.target is not None else None,
           "reason": res.reason, "success": res.success, "evaluations": res.n_evaluations}
    ctx.write_json("optimize.json", out)
    return out


HANDLERS = {"simulate": cmd_simulate, "adjoint": cmd_adjoint, "grad-check": cmd_grad_check,
            "order-study": cmd_order_study, "gcl-check": cmd_gcl_check, "optimize": cmd_optimize}


def _configure_logging():
    level = os.environ.get("ADJFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s",
                        stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="adjflow", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (default: paths.run_dir from the config)")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    _configure_logging()

    try:
        cfg = C.load_config(args.config)
    except (OSError, ValidationError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg.paths.run_dir)
    ctx = Context(cfg, args.command, out, max(1, args.threads))
    t0 = time.perf_counter()
    try:
        result = HANDLERS[args.command](ctx)
    except Exception as exc:  # report every module failure in a typed record
        report = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        ctx.write_json("error.json", report)
        print(json.dumps(report), file=sys.stderr)
        return 1
    log.info(json.dumps({"command": args.command, "seconds": time.perf_counter() - t0}))
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
