import csv
import json
import subprocess
import sys

import pytest

from lifonet import cli, io
from lifonet.stochastics import SolverError


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--output", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_parse_flags_only():
    cfg = cli.parse_config("simulate --net fig1 --M 1000 --delta 0.1 --horizon 1e4 --seed 7".split())
    assert (cfg.command, cfg.network, cfg.M, cfg.delta, cfg.horizon, cfg.seed) == ("simulate", "fig1", 1000.0, 0.1, 1e4, 7)
    assert cfg.replications == 20  # untouched default


def test_file_then_flag_override(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"command": "simulate", "seed": 3, "M": 500, "horizon": 10}))
    cfg = cli.parse_config(["--config", str(f), "--seed", "9"])
    assert (cfg.command, cfg.seed, cfg.M, cfg.horizon) == ("simulate", 9, 500, 10)


def test_unknown_config_key_rejected(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"command": "simulate", "speed": 3}))
    with pytest.raises(cli.ConfigError, match="speed"):
        cli.parse_config(["--config", str(f)])


@pytest.mark.parametrize("argv", [
    [],
    ["induction"],
    ["simulate", "--couple", "--delta", "0.2"],
    ["simulate", "--L", "5"],
    ["simulate", "--N", "0"],
])
def test_config_errors(argv):
    with pytest.raises(cli.ConfigError):
        cli.parse_config(argv)


def test_fig2_bad_delta_names_nearest(tmp_path, capsys):
    code, _ = run(["validate", "--net", "fig2", "--delta", "0.3"], tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "nearest valid delta is 0.29975" in capsys.readouterr().err


def test_simulate_outputs(tmp_path):
    code, out = run(["simulate", "--M", "100", "--horizon", "200", "--init", "2=20", "--grid", "1", "--plot"], tmp_path)
    assert code == 0
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 201 and rows[0]["Z2"] == "20"
    m = manifest(out)
    assert m["status"] == "ok" and m["exit_code"] == 0
    for name in ("trajectory.csv", "summary.json", "trajectory.svg", "workload.svg"):
        assert m["files"][name]["sha256"] == io.sha256(out / name)


def test_truncation_exit_code_keeps_outputs(tmp_path):
    code, out = run(["induction", "--M", "100", "--N", "1000", "--replications", "2", "--cap", "50"], tmp_path)
    assert code == cli.EXIT_TRUNCATED
    assert (out / "cycles.csv").exists()
    assert manifest(out)["status"] == "truncated"


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(M):
        raise SolverError("no convergence", 1.0, 0.5, 1e-3, 1e-3)

    monkeypatch.setattr(cli, "solve_nu_params", boom)
    code, out = run(["solve-nu"], tmp_path)
    assert code == cli.EXIT_SOLVER and manifest(out)["exit_code"] == cli.EXIT_SOLVER


def test_ps_hlpps_needs_exponential(tmp_path):
    code, _ = run(["ps-hlpps", "--M", "10"], tmp_path)
    assert code == cli.EXIT_CONFIG


def test_manifest_written_before_run(tmp_path, monkeypatch):
    seen = {}

    def handler(cfg, man):
        seen.update(json.loads(man.path.read_text()))
        return 0

    monkeypatch.setitem(cli.HANDLERS, "solve-nu", handler)
    run(["solve-nu", "--M", "50"], tmp_path)
    assert seen["status"] == "running" and seen["config"]["M"] == 50.0


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LIFONET_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["solve-nu", "--M", "100"]) == 0
    assert (tmp_path / "env" / "solve-nu" / "nu.json").exists()


def test_replay_from_manifest_is_byte_identical(tmp_path):
    code, a = run(["instability", "--M", "100", "--N", "1000", "--replications", "2", "--cycles", "2"], tmp_path, "a")
    assert code == 0
    code, b = run(["--config", str(a / "manifest.json")], tmp_path, "b")
    assert code == 0
    for name in ("growth.csv", "cycles.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_instability_plot(tmp_path):
    code, out = run(["instability", "--M", "100", "--N", "1000", "--replications", "2", "--cycles", "2",
                     "--plot", "--grid", "5"], tmp_path)
    assert code == 0 and (out / "growth.svg").exists() and (out / "trajectory.svg").exists()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "lifonet.cli", "validate", "--output", str(tmp_path / "v")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "station loads" in out.stdout
