import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from ffns.cli import main
from ffns.errors import ConfigError, DegenerateData
from ffns.fields import read_snapshot
from ffns.harness import (
    RunConfig,
    SweepPlan,
    fit_rate,
    initial_data,
    load_config,
    parse_config,
    random_initial_data,
    run,
    sweep,
    thread_cap,
)
from ffns.stepper import SimParams

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """\
ny: 16
nz: 17
epsilon: 0.01
sigma: 0.1
dt: 0.002
t_end: 0.006
cfl: 50.0
initial:
  kind: wave
  amplitude: 0.01
output_every: 1
"""


class TestConfig:
    def test_parse(self):
        cfg = parse_config(SMALL)
        assert cfg.params.ny == 16 and cfg.params.epsilon == 0.01
        assert cfg.initial == {"kind": "wave", "amplitude": 0.01}
        assert cfg.output_every == 1

    def test_ints_promote_to_float(self):
        assert parse_config("sigma: 0\ndt: 1\n").params.dt == 1.0

    @pytest.mark.parametrize("text,line,frag", [
        ("dt: 0.1\nviscosity: 1\n", 2, "unknown key 'viscosity'"),
        ("dt: 0.1\ndt: 0.2\n", 2, "duplicate key"),
        ("dt: fast\n", 1, "dt: expected a number"),
        ("ny: 16.5\n", 1, "ny: expected an integer"),
        ("dt: 0.1\n\nepsilon: 3\n", 3, "epsilon"),
        ("initial:\n  kind: storm\n", 2, "initial"),
        ("norms:\n  - {kind: volume, m: 1}\n", 2, "norms"),
        ("output_every: -1\n", 1, "output_every"),
        ("- 1\n- 2\n", 1, "mapping"),
        ("", 1, "empty"),
    ])
    def test_errors_carry_line(self, text, line, frag):
        with pytest.raises(ConfigError) as info:
            parse_config(text, "cfg.yaml")
        assert info.value.line == line
        msg = str(info.value)
        assert msg.startswith(f"cfg.yaml:{line}: ")
        assert msg.count("cfg.yaml") == 1
        assert frag in msg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    @pytest.mark.parametrize("name", ["wave.yaml", "sweep_base.yaml", "rest.yaml"])
    def test_shipped_configs_parse(self, name):
        assert isinstance(load_config(CONFIGS / name), RunConfig)


def test_initial_data_kinds():
    p = SimParams(ny=16, nz=17)
    v, h = initial_data(p, {"kind": "rest"})
    assert not v.any() and not h.any()
    _, h = initial_data(p, {"kind": "wave", "amplitude": 0.2, "mode": 2})
    assert np.abs(h).max() == pytest.approx(0.2)
    v, h = random_initial_data(p, seed=4, amplitude=0.03, velocity=0.1)
    assert np.abs(h).max() == pytest.approx(0.03) and np.abs(v).max() == pytest.approx(0.1)
    assert abs(h.mean()) < 1e-15
    v2, h2 = initial_data(p, {"kind": "random", "seed": 4, "amplitude": 0.03, "velocity": 0.1})
    assert np.array_equal(v, v2) and np.array_equal(h, h2)


def test_run_writes_outputs(tmp_path):
    res = run(parse_config(SMALL), tmp_path)
    assert res.status == 0
    snaps = sorted(tmp_path.glob("snap_*.ffns"))
    assert [s.name for s in snaps] == [f"snap_{i:06d}.ffns" for i in range(4)]
    _, t, _ = read_snapshot(snaps[-1])
    assert t == pytest.approx(0.006)
    rows = (tmp_path / "diagnostics.csv").read_text().splitlines()
    assert len(rows) == 5
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["div_max"] <= 1e-9
    assert abs(summary["energy_residual"]) < 1e-3


def test_run_reports_hard_failure(tmp_path):
    cfg = parse_config(SMALL.replace("cfl: 50.0", "cfl: 0.0001"))
    res = run(cfg, tmp_path)
    assert res.status == 2 and "CflViolation" in res.message


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("FFNS_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("FFNS_THREADS", "many")
    with pytest.raises(ConfigError):
        thread_cap()


def test_sweep_report_structure(tmp_path):
    base = parse_config(SMALL.replace("t_end: 0.006", "t_end: 0.004"))
    plan = SweepPlan(base, eps=[0.0, 0.01], sigma=[0.1], amplitude=0.01, out=str(tmp_path))
    assert plan.eps == [0.01, 0.0]
    report = sweep(plan, workers=1)
    assert [r["eps"] for r in report["runs"]] == [0.01, 0.0]
    assert all(r["status"] == "ok" for r in report["runs"])
    assert len(report["diffs"]) == 1 and report["diffs"][0] > 0
    assert report["boundedness_ratio"] >= 1.0
    assert (tmp_path / "sweep.json").exists()


class TestFitRate:
    def test_recovers_slope(self):
        x = np.array([0.1, 0.05, 0.025, 0.0125])
        fit = fit_rate(x, 3.0 * x**2.5)
        assert fit.slope == pytest.approx(2.5) and fit.stderr < 1e-10

    @pytest.mark.parametrize("x,y", [([1, 2], [1, 2]), ([1, 2, 3], [1, 0, 2]), ([1, 2, -3], [1, 1, 1])])
    def test_degenerate(self, x, y):
        with pytest.raises(DegenerateData):
            fit_rate(x, y)


class TestCli:
    def test_run_and_identities(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(SMALL)
        out = tmp_path / "out"
        runner = CliRunner()
        res = runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["t"] == pytest.approx(0.006)
        res = runner.invoke(main, ["check-identities", str(out), "--config", str(cfg)])
        assert res.exit_code == 0, res.output
        report = json.loads(res.output)
        assert len(report["snapshots"]) == 4
        assert abs(report["energy_residual"]) < 1e-3
        snaps = sorted(str(p) for p in out.glob("snap_*.ffns"))
        res = runner.invoke(main, ["norms", *snaps, "--kind", "surface", "--field", "h", "--m", "1"])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["value"] > 0

    def test_bad_config_exits_nonzero(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("dt: 0.1\nfoo: 2\n")
        res = CliRunner().invoke(main, ["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 1
        assert f"{cfg}:2: unknown key 'foo'" in res.output

    def test_ineq_lab_unknown(self):
        res = CliRunner().invoke(main, ["ineq-lab", "--only", "Q1", "--samples", "1"])
        assert res.exit_code == 1 and "Q1" in res.output
