import json

import numpy as np
import pytest
import yaml

from adjflow import cli
from adjflow import config as C
from adjflow.store import FileStore

from conftest import CONFIGS


def _small_piston(tmp_path, **updates):
    data = yaml.safe_load((CONFIGS / "piston.yaml").read_text())
    data["problem"].update(K=6, p=2)
    data["time"].update(N_t=8)
    data["grad_check"]["taus"] = [1e-2, 1e-3, 1e-4]
    for key, value in updates.items():
        data[key] = value
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def _run(command, config, out, *extra):
    return cli.main([command, "--config", str(config), "--out", str(out), *extra])


def _header_hash(path):
    if path.suffix == ".json":
        return json.loads(path.read_text())["header"]["config_hash"]
    first = path.read_text().splitlines()[0]
    assert first.startswith("# config_hash=")
    return first.split()[1].split("=")[1]


@pytest.fixture(scope="module")
def piston_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _small_piston(tmp)
    for cmd in ("simulate", "adjoint", "grad-check"):
        assert _run(cmd, cfg, tmp / cmd) == 0
    return tmp, cfg


def test_simulate_artifacts(piston_run):
    tmp, cfg = piston_run
    out = tmp / "simulate"
    digest = C.load_config(cfg).digest()
    for name in ("qoi_history.csv", "snapshots.csv", "simulate.json"):
        assert _header_hash(out / name) == digest
    with FileStore.open(out / "primal.ckpt") as fs:
        assert fs.complete
    hist = (out / "qoi_history.csv").read_text().splitlines()
    assert hist[1] == "t,work_f,work_F,impulse_f,impulse_F,energy_f,energy_F"
    assert len(hist) == 2 + 9
    summary = json.loads((out / "simulate.json").read_text())
    assert set(summary["F"]) == {"work", "impulse", "energy"}


def test_adjoint_artifacts(piston_run):
    tmp, cfg = piston_run
    out = tmp / "adjoint"
    digest = C.load_config(cfg).digest()
    grads = json.loads((out / "gradient.json").read_text())
    assert grads["header"]["config_hash"] == digest
    assert set(grads["gradients"]) == {"work", "impulse", "energy"}
    report = json.loads((out / "dual_report.json").read_text())
    assert report["header"]["config_hash"] == digest
    assert report["lagrangian_scaled_max"] <= 1e-10


def test_grad_check(piston_run):
    tmp, cfg = piston_run
    out = tmp / "grad-check"
    res = json.loads((out / "grad_check.json").read_text())
    assert res["qoi"] == "work"
    assert res["min_rel_error"] <= 1e-6
    lines = (out / "grad_check.csv").read_text().splitlines()
    assert lines[1] == "tau,rel_error,fd_0,fd_1,fd_2,fd_3"
    assert len(lines) == 2 + 3


def test_outputs_are_deterministic(piston_run, tmp_path):
    tmp, cfg = piston_run
    assert _run("simulate", cfg, tmp_path / "again") == 0
    for name in ("qoi_history.csv", "snapshots.csv", "simulate.json"):
        assert (tmp_path / "again" / name).read_bytes() == (tmp / "simulate" / name).read_bytes()
    assert (tmp_path / "again" / "primal.ckpt").read_bytes() == \
        (tmp / "simulate" / "primal.ckpt").read_bytes()


def test_gcl_check(tmp_path):
    assert _run("gcl-check", CONFIGS / "gcl.yaml", tmp_path) == 0
    res = json.loads((tmp_path / "gcl_check.json").read_text())
    assert res["error_gcl_on"] <= 1e-12
    assert res["error_gcl_off"] >= 1e-8


def test_temporal_order_study(tmp_path):
    data = yaml.safe_load((CONFIGS / "order_temporal.yaml").read_text())
    data["order_study"].update(tableaus=["dirk3"], N_t=[40, 80, 160])
    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump(data))
    assert _run("order-study", path, tmp_path / "out") == 0
    res = json.loads((tmp_path / "out" / "order_study.json").read_text())
    assert 2.7 <= res["fits"]["dirk3"]["slope"] <= 3.3


def test_spatial_order_study_threads(tmp_path):
    data = yaml.safe_load((CONFIGS / "order_spatial.yaml").read_text())
    data["order_study"].update(orders=[1, 2], K=[4, 8, 16])
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(data))
    assert _run("order-study", path, tmp_path / "one") == 0
    assert _run("order-study", path, tmp_path / "two", "--threads", "2") == 0
    one = (tmp_path / "one" / "order_study.csv").read_bytes()
    assert one == (tmp_path / "two" / "order_study.csv").read_bytes()
    fits = json.loads((tmp_path / "one" / "order_study.json").read_text())["fits"]
    assert fits["p1"]["slope"] >= 1.5 and fits["p2"]["slope"] >= 2.5


def test_small_optimization(tmp_path):
    cfg = _small_piston(tmp_path, optimize={"objective": "work", "max_iter": 3})
    assert _run("optimize", cfg, tmp_path / "opt") == 0
    res = json.loads((tmp_path / "opt" / "optimize.json").read_text())
    assert res["objective"] < res["nominal_objective"]
    assert res["evaluations"] >= 2
    digest = C.load_config(cfg).digest()
    assert _header_hash(tmp_path / "opt" / "opt_trace.csv") == digest
    trace = json.loads((tmp_path / "opt" / "opt_trace.json").read_text())["trace"]
    assert all(r["merit"] <= r["armijo_rhs"] + 1e-15 for r in trace)


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("problem: {K: 4, colour: blue}\n")
    assert _run("simulate", path, tmp_path / "out") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ValidationError"
    assert not (tmp_path / "out").exists()


def test_missing_config_file(tmp_path):
    assert _run("simulate", tmp_path / "nope.yaml", tmp_path / "out") == 2


def test_runtime_failure_writes_error_record(tmp_path):
    # A collapsing dilation drives the mapping Jacobian through zero.
    cfg = tmp_path / "collapse.yaml"
    cfg.write_text(yaml.safe_dump({
        "problem": {"K": 2, "p": 1, "initial": {"kind": "constant", "value": 1.0},
                    "left_bc": {"value": 1.0}, "right_bc": {"value": 1.0}},
        "mapping": {"kind": "dilation", "translation": {"rate": -2.0}},
        "time": {"T": 1.0, "N_t": 4},
        "parameters": {"initial": []},
    }))
    assert _run("simulate", cfg, tmp_path / "out") == 1
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["command"] == "simulate"
    assert err["error"] == "MappingDegeneracy"
    assert err["header"]["config_hash"] == C.load_config(cfg).digest()


def test_optimize_without_block_fails(tmp_path):
    data = yaml.safe_load(_small_piston(tmp_path).read_text())
    del data["optimize"]
    cfg = tmp_path / "noopt.yaml"
    cfg.write_text(yaml.safe_dump(data))
    assert _run("optimize", cfg, tmp_path / "out") == 1
    assert "optimize" in json.loads((tmp_path / "out" / "error.json").read_text())["message"]


def test_default_output_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"problem": {"K": 2, "p": 1}, "time": {"N_t": 2},
                                   "paths": {"run_dir": "somewhere"}}))
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    assert (tmp_path / "somewhere" / "simulate.json").exists()
