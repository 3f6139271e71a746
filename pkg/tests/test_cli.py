import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kdvlab.cli import EXIT_BLOWUP, EXIT_INVALID, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_series(path):
    lines = Path(path).read_text().split("\n")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in row.split(",")] for row in lines[1:] if row])
    return header, data


SMALL_ENSEMBLE = {
    "equation": {"gamma": 1.0, "noise": [[1, 0.1], [2, 0.1]]},
    "grid": {"K": 8},
    "solver": {"dt": 1e-3, "T": 0.2, "sample_every": 50, "seed": 5},
    "initial": {"u0": [[1, 0.5]]},
    "experiment": {"members": 12, "observables": ["l2", "l2_sq"]},
}


def test_simulate_l2_decay_rate(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(CONFIGS / "l2_decay.json"), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"config", "run_id", "observables", "fits", "flags"}
    assert summary["fits"]["measured_decay_rate"] == pytest.approx(1.0, abs=1e-6)
    assert summary["config"]["equation"]["gamma"] == 1.0
    header, data = read_series(out / "series.csv")
    assert header == ["t", "l2", "h1"]
    assert data.shape == (21, 3)
    assert np.allclose(data[:, 1], data[0, 1] * np.exp(-data[:, 0]), rtol=1e-6)


def test_series_format(tmp_path):
    out = tmp_path / "run"
    main(["simulate", "--config", str(CONFIGS / "l2_decay.json"), "--out", str(out)])
    raw = (out / "series.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    row = raw.split(b"\n")[3].decode().split(",")
    assert all(v == "%.17g" % float(v) for v in row)


def test_identical_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_ENSEMBLE)
    outs = []
    for i, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"run{i}"
        assert main(["ensemble", "--config", cfg, "--threads", threads, "--out", str(out)]) == EXIT_OK
        outs.append(out)
    first = (outs[0] / "series.csv").read_bytes()
    for out in outs[1:]:
        assert (out / "series.csv").read_bytes() == first
        assert (out / "summary.json").read_bytes() == (outs[0] / "summary.json").read_bytes()


def test_seed_override_changes_run_id(tmp_path):
    cfg = write(tmp_path, SMALL_ENSEMBLE)
    main(["ensemble", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["ensemble", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["config"]["solver"]["seed"] == 6
    assert a["run_id"] != b["run_id"]
    assert (tmp_path / "a" / "series.csv").read_bytes() != (tmp_path / "b" / "series.csv").read_bytes()


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_ENSEMBLE)
    monkeypatch.setenv("THREADS", "2")
    assert main(["ensemble", "--config", cfg, "--out", str(tmp_path / "env")]) == EXIT_OK
    monkeypatch.delenv("THREADS")
    main(["ensemble", "--config", cfg, "--out", str(tmp_path / "plain")])
    assert (tmp_path / "env" / "series.csv").read_bytes() == (tmp_path / "plain" / "series.csv").read_bytes()
    monkeypatch.setenv("THREADS", "zero")
    assert main(["ensemble", "--config", cfg, "--out", str(tmp_path / "bad")]) == EXIT_INVALID


@pytest.mark.parametrize("doc", [
    {"grid": {"K": 8}, "solver": {"dt": 1e-3}},
    {"grid": {"K": 8}, "solver": {"dt": 1e-3, "T": 1, "colour": "red"}},
    {"grid": {"K": 8}, "solver": {"dt": 1e-3, "T": 1}, "equation": {"noise": [[9, 0.1]]}},
])
def test_invalid_config_exits_1(tmp_path, doc, capsys):
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_arguments_exit_1(tmp_path):
    cfg = str(CONFIGS / "verify.json")
    for argv in (["bogus", "--config", cfg], ["simulate"], ["simulate", "--config", cfg, "--seed", "-1"],
                 ["simulate", "--config", cfg, "--threads", "0"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == EXIT_INVALID
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID


def test_nudge_without_parameters_is_invalid(tmp_path):
    doc = {"equation": {"gamma": 0.0}, "grid": {"K": 8}, "solver": {"dt": 1e-3, "T": 0.1}}
    assert main(["nudge", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == EXIT_INVALID


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_exits_2(tmp_path):
    doc = {
        "equation": {"gamma": 0.0},
        "grid": {"K": 16},
        "solver": {"dt": 0.5, "T": 200.0, "scheme": "eem"},
        "initial": {"u0": [[1, 40.0], [2, 30.0], [3, 20.0]]},
    }
    out = tmp_path / "o"
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(out)]) == EXIT_BLOWUP
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flags"]["blowup"] is True
    assert summary["fits"]["blowup_time"] > 0


def test_verify_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["verify", "--config", str(CONFIGS / "verify.json"), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flags"] and all(summary["flags"].values())
    assert "PASS" in capsys.readouterr().out


def test_final_state_output(tmp_path):
    doc = json.loads((CONFIGS / "l2_decay.json").read_text())
    doc["output"] = {"formats": ["json", "final_state"]}
    out = tmp_path / "o"
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    assert not (out / "series.csv").exists()
    state = json.loads((out / "final_state.json").read_text())
    assert state["K"] == 32
    modes = {k: complex(re, im) for k, re, im in state["modes"]}
    assert abs(modes[1]) == pytest.approx(0.5 * np.exp(-2.0), rel=0.05)


def test_invariants_command(tmp_path):
    doc = {"equation": {"gamma": 0.0}, "grid": {"K": 16}, "solver": {"dt": 1e-3, "T": 0.5},
           "initial": {"u0": [[1, 0.5]]}}
    out = tmp_path / "o"
    assert main(["invariants", "--config", write(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flags"]["conservative_setting"] and summary["flags"]["conserved"]
    assert summary["fits"]["drift_I0"] < 1e-6


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "o"
    proc = subprocess.run(
        [sys.executable, "-m", "kdvlab.cli", "simulate", "--config", str(CONFIGS / "l2_decay.json"), "--out", str(out)],
        capture_output=True, text=True, env={**os.environ, "THREADS": "1"},
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "summary.json").exists()
