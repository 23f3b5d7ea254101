import json

import numpy as np
import pytest

from otrobust.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_trim_subcommand(capsys):
    code, out, _ = run_cli(capsys, "trim", "--V", "407.8942", "--alpha-deg", "6.1650")
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["converged"] is True
    assert doc["theta_deg"] == pytest.approx(2.8190, abs=0.3)
    assert doc["T"] == pytest.approx(1000.0, rel=0.05)


def test_gains_subcommand(capsys):
    code, out, _ = run_cli(capsys, "gains")
    assert code == EXIT_OK
    doc = json.loads(out)
    K = np.asarray(doc["K"])
    assert K.shape == (2, 4)
    assert doc["closed_loop_abscissa"] < 0.0


def test_trim_grid_and_schedule(capsys, tmp_path):
    trims = tmp_path / "trims.json"
    code, out, _ = run_cli(capsys, "trim-grid", "--nv", "2", "--nalpha", "2",
                           "--out", str(trims))
    assert code == EXIT_OK and "4 trim points" in out
    sched = tmp_path / "sched.json"
    code, out, _ = run_cli(capsys, "schedule", "--trims", str(trims),
                           "--out", str(sched))
    assert code == EXIT_OK
    doc = json.loads(sched.read_text())
    assert np.asarray(doc["K"]).shape == (2, 2, 2, 4)
    assert np.all(np.asarray(doc["abscissa_closed"]) < 0)


def test_propagate_and_wasserstein(capsys, tmp_path):
    cfg = {"kind": "ic", "controller": "lqr", "samples": 10, "t_f": 0.5,
           "dt": 0.01, "emit_every": 25, "seed": 1}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_dir = tmp_path / "snaps"
    code, out, _ = run_cli(capsys, "propagate", "--scenario", str(cfg_path),
                           "--out", str(out_dir))
    assert code == EXIT_OK
    snap_csv = out_dir / "lqr.csv"
    assert snap_csv.exists()

    trim_json = tmp_path / "trim.json"
    code, out, _ = run_cli(capsys, "trim", "--V", "407.8942", "--alpha-deg", "6.1650")
    trim_json.write_text(out)

    w_csv = tmp_path / "W.csv"
    code, _, _ = run_cli(capsys, "wasserstein", "--a", str(snap_csv),
                         "--dirac-at", str(trim_json), "--out", str(w_csv))
    assert code == EXIT_OK
    lines = w_csv.read_text().splitlines()
    assert lines[0] == "t,W"
    assert len(lines) == 4  # t = 0, 0.25, 0.5

    # two-cloud transportation LP route with plan export
    plan_csv = tmp_path / "plan.csv"
    code, _, _ = run_cli(capsys, "wasserstein", "--a", str(snap_csv),
                         "--b", str(snap_csv), "--plan", str(plan_csv),
                         "--out", str(tmp_path / "W2.csv"))
    assert code == EXIT_OK
    w2 = [float(r.split(",")[1]) for r in
          (tmp_path / "W2.csv").read_text().splitlines()[1:]]
    assert all(abs(v) < 1e-9 for v in w2)  # identical clouds
    assert plan_csv.read_text().splitlines()[0] == "i,j,mass"


def test_propagate_per_time_files(capsys, tmp_path):
    cfg = {"kind": "ic", "controller": "lqr", "samples": 6, "t_f": 0.2,
           "dt": 0.01, "emit_every": 10, "seed": 1}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_dir = tmp_path / "pertime"
    code, _, _ = run_cli(capsys, "propagate", "--scenario", str(cfg_path),
                         "--out", str(out_dir), "--per-time")
    assert code == EXIT_OK
    assert len(list(out_dir.glob("lqr_t*.csv"))) == 3


def test_freq_subcommand(capsys, tmp_path):
    out = tmp_path / "freq.csv"
    code, _, err = run_cli(capsys, "freq", "--points", "50", "--out", str(out))
    assert code == EXIT_OK
    assert "peak gain at omega" in err
    rows = out.read_text().splitlines()
    assert rows[0] == "omega_rad_s,gain_db"
    assert len(rows) == 51


def test_scenario_subcommand(capsys, tmp_path):
    cfg = {"kind": "ic", "controller": "lqr", "samples": 8, "t_f": 0.5,
           "dt": 0.01, "emit_every": 25, "seed": 0}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_dir = tmp_path / "report"
    code, out, _ = run_cli(capsys, "scenario", "--config", str(cfg_path),
                           "--out", str(out_dir))
    assert code == EXIT_OK
    doc = json.loads((out_dir / "report.json").read_text())
    assert doc["scenario"] == "ic"
    assert (out_dir / "snapshots" / "lqr.csv").exists()


def test_bad_config_exits_2(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "bogus"}')
    code, _, err = run_cli(capsys, "scenario", "--config", str(bad))
    assert code == EXIT_CONFIG
    assert "error" in err


def test_missing_file_exits_2(capsys):
    code, _, _ = run_cli(capsys, "scenario", "--config", "/nonexistent.json")
    assert code == EXIT_CONFIG


def test_numerical_failure_exits_3(capsys, monkeypatch, tmp_path):
    import otrobust.cli as cli
    from otrobust.harness import NumericalFailure

    def boom(args):
        raise NumericalFailure("synthetic blow-up")

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "ic", "samples": 4, "t_f": 0.1,
                               "dt": 0.01, "controller": "lqr"}))
    monkeypatch.setattr(cli.harness, "run_scenario", lambda *a, **k: boom(None))
    code, _, err = run_cli(capsys, "scenario", "--config", str(cfg),
                           "--out", str(tmp_path / "o"))
    assert code == EXIT_NUMERICAL
    assert "numerical failure" in err
