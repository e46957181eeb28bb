import json
import numpy as np
import pytest

from spreadsurf.cli import run
from spreadsurf.export import read_ensemble

from conftest import CONFIG_DIR


def _dir(out, sub):
    (d,) = [p for p in out.iterdir() if f"-{sub}-" in p.name]
    return d


def test_help_and_usage(capsys):
    assert run(["--help"]) == 0
    assert run([]) == 2
    assert run(["frobnicate", "--config", "x.json"]) == 2


def test_missing_config_exit2(tmp_path):
    assert run(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_bad_threads_exit2(tmp_path):
    assert run(["simulate", "--config", str(CONFIG_DIR / "zero.json"), "--threads", "0",
                "--out", str(tmp_path)]) == 2


def test_zero_simulate_manifest(tmp_path):
    assert run(["simulate", "--config", str(CONFIG_DIR / "zero.json"), "--paths", "4",
                "--out", str(tmp_path)]) == 0
    d = _dir(tmp_path, "simulate")
    man = json.loads((d / "manifest.json").read_text())
    assert man["subcommand"] == "simulate" and len(man["config_hash"]) == 64
    assert "0.csv" in man["artifacts"] and "diagnostics.json" in man["artifacts"]
    assert d.name.endswith(man["config_hash"][:10])
    ens = read_ensemble(d)
    assert ens["short_end"].shape[0] == 4
    for h in ens["surfaces"].values():
        assert np.ptp(h.values) < 1e-14


def test_badgamma_validate_exit1(tmp_path):
    assert run(["validate", "--config", str(CONFIG_DIR / "badgamma.json"), "--out", str(tmp_path)]) == 1
    reps = json.loads((_dir(tmp_path, "validate") / "validate.json").read_text())
    assert any(r["condition_id"] == "positivity" and not r["passed"] for r in reps)


def test_drift_check_passes(tmp_path, capsys):
    assert run(["drift-check", "--config", str(CONFIG_DIR / "jump.json"), "--out", str(tmp_path)]) == 0
    d = _dir(tmp_path, "drift-check")
    assert (d / "drift_check.csv").read_text().startswith("T_minus_t,eta,residual")
    assert "PASS" in capsys.readouterr().out


def test_calibrate_constants(tmp_path):
    assert run(["calibrate-constants", "--config", str(CONFIG_DIR / "zero.json"), "--out", str(tmp_path)]) == 0
    c = json.loads((_dir(tmp_path, "calibrate-constants") / "constants.json").read_text())
    assert 0 < c["c1"] <= c["c1_theory_bound"]


def test_unknown_validate_check_exit2(tmp_path):
    raw = json.loads((CONFIG_DIR / "zero.json").read_text())
    raw["checks"] = {"validate": {"checks": ["nonsense"]}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(raw))
    assert run(["validate", "--config", str(p), "--out", str(tmp_path)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_exit3(tmp_path):
    raw = json.loads((CONFIG_DIR / "zero.json").read_text())
    raw["initial_surface"] = {"family": "flat", "params": {"c": 1.0}}
    raw["volatility"] = [{"family": "proportional_capped", "params": {"c": 1e6, "cap": 1e300, "bound": 1.0}}]
    raw["simulation"].update({"n_paths": 2, "horizon": 2, "output_times": [2], "loss_dynamics": "none"})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(raw))
    assert run(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 3


def test_price_failure_exit1(tmp_path):
    raw = json.loads((CONFIG_DIR / "holee.json").read_text())
    raw["simulation"].update({"drift": "zero", "n_paths": 4000})
    raw["volatility"] = [{"family": "constant", "params": {"c": 0.05}}]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(raw))
    assert run(["price", "--config", str(p), "--out", str(tmp_path)]) == 1
    rep = json.loads((_dir(tmp_path, "price") / "price_report.json").read_text())
    assert not all(r["pass"] for r in rep)
