"""Command-line harness: exit codes, output format and reproducibility."""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from diffsim.harness import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return p


def small_configs(tmp_path):
    shutil.copy(CONFIGS / "pendulum_reference.csv", tmp_path / "pendulum_reference.csv")
    estimate = json.loads((CONFIGS / "estimate_pendulum.json").read_text())
    mpc = json.loads((CONFIGS / "mpc_nomismatch.json").read_text())
    mpc["steps"] = 40
    design = json.loads((CONFIGS / "design_4dof.json").read_text())
    design["configurations"] = 10
    return {
        "benchmark": write_config(tmp_path, "bench.json", {"seed": 3, "links": [2, 3], "dt": [0.05],
                                                           "t1": 0.5, "repetitions": 2}),
        "estimate": write_config(tmp_path, "est.json", estimate),
        "design": write_config(tmp_path, "design.json", design),
        "mpc": write_config(tmp_path, "mpc.json", mpc),
    }


def run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def strip_timing(path: Path) -> bytes:
    """File bytes with the timing column removed."""
    data = path.read_bytes()
    if path.name != "benchmark.csv":
        return data
    rows = list(csv.reader(data.decode("utf-8").splitlines()))
    k = rows[0].index("wall_time_s")
    return "\n".join(",".join(r[:k] + r[k + 1:]) for r in rows).encode("utf-8")


@pytest.mark.parametrize("command", ["benchmark", "estimate", "design", "mpc"])
def test_outputs_are_byte_reproducible(tmp_path, command):
    cfg = small_configs(tmp_path)[command]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(command, cfg, a) == 0
    assert run(command, cfg, b) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "summary.json" in names and any(n.endswith(".csv") for n in names)
    for name in names:
        assert strip_timing(a / name) == strip_timing(b / name), name


def test_csv_format(tmp_path):
    cfg = small_configs(tmp_path)["benchmark"]
    assert run("benchmark", cfg, tmp_path / "o") == 0
    raw = (tmp_path / "o" / "benchmark.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    assert rows[0] == ["method", "n", "dt", "rhs_evals", "tape_vars", "wall_time_s", "grad_checksum"]
    assert [r[0] for r in rows[1:]] == ["fd"] * 4 + ["reverse_ad"] * 4 + ["coupled"] * 4 + ["adjoint"] * 4
    for r in rows[1:]:
        digits = r[6].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
        assert len(digits) <= 15
    # all four engines agree on the gradient of each cell (n, dt, repetition)
    checks = {}
    for k, r in enumerate(rows[1:]):
        checks.setdefault(k % 4, []).append(float(r[6]))
    for vals in checks.values():
        assert max(vals) - min(vals) <= 1e-4 * max(1.0, abs(vals[0]))


def test_seed_override_changes_outputs(tmp_path):
    cfg = small_configs(tmp_path)["benchmark"]
    assert run("benchmark", cfg, tmp_path / "a") == 0
    assert run("benchmark", cfg, tmp_path / "b", "--seed", "4") == 0
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 4
    assert strip_timing(tmp_path / "a" / "benchmark.csv") != strip_timing(tmp_path / "b" / "benchmark.csv")


def test_missing_seed_is_a_config_error(tmp_path):
    cfg = write_config(tmp_path, "c.json", {"links": [2]})
    assert run("benchmark", cfg, tmp_path / "o") == 1
    assert run("benchmark", cfg, tmp_path / "o", "--seed", "1") == 0


@pytest.mark.parametrize("cfg", [
    {"seed": 1, "links": [0]},
    {"seed": 1, "methods": ["newton"]},
    {"seed": -2},
    {"seed": True},
    {"seed": 1, "integrator": "rk9"},
])
def test_bad_benchmark_configs(tmp_path, cfg):
    assert run("benchmark", write_config(tmp_path, "c.json", cfg), tmp_path / "o") == 1


def test_missing_and_malformed_files(tmp_path):
    assert run("estimate", tmp_path / "nope.json", tmp_path / "o") == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert run("design", bad, tmp_path / "o") == 1
    est = json.loads((CONFIGS / "estimate_pendulum.json").read_text())
    est["reference"] = "missing.csv"
    assert run("estimate", write_config(tmp_path, "e.json", est), tmp_path / "o") == 1
    est["reference"] = str(CONFIGS / "pendulum_reference.csv")
    est["optimizer"] = {"max_iters": 5, "learning_rate": 1.0}
    assert run("estimate", write_config(tmp_path, "e.json", est), tmp_path / "o") == 1


def test_unconverged_optimizer_exits_2(tmp_path):
    est = json.loads((CONFIGS / "estimate_double_pendulum.json").read_text())
    est["reference"] = str(CONFIGS / "double_pendulum_reference.csv")
    est["optimizer"] = {"max_iters": 2}
    out = tmp_path / "o"
    assert run("estimate", write_config(tmp_path, "e.json", est), out) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "max_iters"
    assert (out / "loss_curve.csv").exists()


def test_divergence_exits_3(tmp_path):
    cfg = write_config(tmp_path, "c.json", {"seed": 1, "links": [2], "dt": [0.5], "methods": ["coupled"],
                                            "integrator": "euler", "t1": 200.0})
    out = tmp_path / "o"
    assert run("benchmark", cfg, out) == 3
    assert "DivergenceError" in json.loads((out / "summary.json").read_text())["error"]


def test_console_script(tmp_path):
    cfg = small_configs(tmp_path)["benchmark"]
    proc = subprocess.run([sys.executable, "-m", "diffsim.harness", "benchmark", "--config", str(cfg),
                           "--out", str(tmp_path / "o"), "--seed", "2"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "diffsim.harness", "benchmark", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode != 0
