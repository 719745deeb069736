import json
import logging
import math
import subprocess
import sys

import pytest

from qplab.cli import main
from qplab.diophantine import GOLDEN


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps({"schema": "qplab.config/1", **cfg}))
    return str(p)


IDS_CFG = {"model": {"d": 1, "eps": 1e-3, "omega": "golden"}, "window": {"N": 100},
           "ids": {"n_theta": 4, "energy_grid": {"start": -2, "stop": 2, "num": 21}, "etas": [1e-3, 1e-2]}}


def test_ids_scan_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, IDS_CFG)
    assert main(["ids", "scan", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["ids", "scan", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("ids_scan.csv", "ids_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "ids_scan.csv").read_text().splitlines()[0]
    assert header == "theta,E,eta,count,density,bound,pass"
    summary = json.loads((tmp_path / "a" / "ids_summary.json").read_text())
    assert summary["summary"]["n_theta"] == 4


def test_seed_changes_thetas(tmp_path):
    cfg = _write(tmp_path, IDS_CFG)
    main(["ids", "scan", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["ids", "scan", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "9"])
    assert (tmp_path / "a" / "ids_scan.csv").read_bytes() != (tmp_path / "b" / "ids_scan.csv").read_bytes()


def test_empty_energy_grid_is_config_error(tmp_path, capsys):
    cfg = dict(IDS_CFG, ids={**IDS_CFG["ids"], "energy_grid": []})
    assert main(["ids", "scan", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert "ids.energy_grid" in capsys.readouterr().err


def test_eta_normalization_warns(tmp_path, caplog):
    cfg = dict(IDS_CFG, ids={**IDS_CFG["ids"], "etas": [1e-2, 1e-3, 1e-2]})
    with caplog.at_level(logging.WARNING, logger="qplab"):
        assert main(["ids", "scan", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    assert "normalized" in caplog.text
    summary = json.loads((tmp_path / "ids_summary.json").read_text())
    assert summary["config"]["ids"]["etas"] == [1e-2, 1e-3, 1e-2]


@pytest.mark.parametrize("patch, field", [
    ({"model": {"d": 1, "eps": 1e-3, "omega": "bronze"}}, "model.omega"),
    ({"model": {"d": 2, "eps": 1e-3, "omega": "golden"}}, "model.omega"),
    ({"model": {"d": 1, "omega": "golden"}}, "model.eps"),
    ({"schema": "other/2"}, "schema"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, field):
    cfg = {**IDS_CFG, **patch}
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema": "qplab.config/1", **cfg}))
    assert main(["ids", "scan", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert field in capsys.readouterr().err


def test_missing_and_invalid_config(tmp_path, capsys):
    assert main(["green", "--config", str(tmp_path / "nope.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["green", "--config", str(bad)]) == 1
    assert main(["green"]) == 1
    assert "config error" in capsys.readouterr().err


def test_energy_out_of_range(tmp_path, capsys):
    cfg = {"model": {"d": 1, "eps": 1e-3, "omega": "golden", "energy": 3.0}, "window": {"N": 5}}
    assert main(["green", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert "model.energy" in capsys.readouterr().err


def test_green_outputs(tmp_path):
    cfg = {"model": {"d": 1, "eps": 1e-3, "omega": "golden", "theta": 0.3, "energy": 0.5}, "window": {"N": 10}}
    assert main(["green", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "green.json").read_text())
    assert rep["kind"] == "green"
    assert rep["summary"]["residual"] < 1e-8
    assert rep["summary"]["certificate"] == "not-applicable"
    assert len((tmp_path / "green.csv").read_text().splitlines()) == 1 + 21 * 21
    assert (tmp_path / "green_profile.csv").read_text().startswith("l1_distance,max_log_abs_G,log_bound")


def test_diophantine_flags_without_config(tmp_path):
    out = tmp_path / "d"
    assert main(["diophantine", "--omega", "golden", "--tau", "0.5", "--gamma", "0.5", "--radius", "100",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "diophantine.json").read_text())["summary"]["frequency"]
    assert rep["worst_n"] == [3] and rep["passed"]
    assert main(["diophantine", "--omega", "0.5", "--out", str(out)]) == 2
    assert main(["diophantine", "--omega", "x", "--out", str(out)]) == 1


def test_diophantine_phase_failure(tmp_path):
    cfg = {"model": {"d": 1, "eps": 1e-3, "omega": "golden", "theta": (-3 * GOLDEN / 2) % 1},
           "diophantine": {"phase": {"tau1": 0.3, "R_min": 1, "R_max": 10}}}
    assert main(["diophantine", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    ph = json.loads((tmp_path / "diophantine.json").read_text())["summary"]["phase"]
    assert [3] in ph["violations"]


def test_localize_flags_phase_failure(tmp_path):
    cfg = {"model": {"d": 1, "eps": 1e-3, "omega": "golden", "theta": (-3 * GOLDEN / 2) % 1},
           "window": {"N": 40}, "localize": {"R_min": 1, "R_max": 10, "profiles": True}}
    assert main(["localize", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    rep = json.loads((tmp_path / "localize.json").read_text())["summary"]
    assert rep["phase_condition"] == "fail"
    assert sum(rep["rate_histogram"]["counts"]) == 81
    assert (tmp_path / "localize_profiles.csv").exists()


MSA_CFG = {"model": {"d": 1, "eps": 1e-40, "omega": "golden", "theta": 0.0, "energy": 0.02127892446046209},
           "schedule": {"c": 1.03, "N1": 4, "tilde_exp": 1.0}, "msa": {"window": 3000, "stages": 2,
                                                                    "bound_regions": 3}, "seed": 1}


def test_msa_run_and_verify(tmp_path):
    # theta equal to Re theta0 puts a resonant site at the origin
    cfg = json.loads(json.dumps(MSA_CFG))
    cfg["model"]["theta"] = math.acos(cfg["model"]["energy"]) / (2 * math.pi)
    path = _write(tmp_path, cfg)
    assert main(["msa", "run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    dump = tmp_path / "a" / "msa_run.json"
    data = json.loads(dump.read_text())
    assert data["schema"] == "qplab.msa/1"
    rows = (tmp_path / "a" / "msa_margins.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[0].startswith("stage,case,P_size")
    assert main(["msa", "verify", str(dump), "--out", str(tmp_path / "v")]) == 0
    assert json.loads((tmp_path / "v" / "msa_verify.json").read_text())["all_ok"]
    assert main(["msa", "run", "--config", path, "--out", str(tmp_path / "b")]) == 0
    assert dump.read_bytes() == (tmp_path / "b" / "msa_run.json").read_bytes()


def test_msa_unknown_schedule_key(tmp_path, capsys):
    cfg = json.loads(json.dumps(MSA_CFG))
    cfg["schedule"]["lambda"] = 2
    assert main(["msa", "run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert "schedule" in capsys.readouterr().err


def test_msa_verify_requires_dump(tmp_path):
    assert main(["msa", "verify", "--out", str(tmp_path)]) == 1
    assert main(["msa", "verify", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "qplab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("diophantine", "green", "msa", "ids", "localize"):
        assert cmd in res.stdout
