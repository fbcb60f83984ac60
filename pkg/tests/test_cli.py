import json

import pytest
import yaml

from perfzo.cli import EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main

SMALL = {
    "name": "cli",
    "environment": {"name": "bernoulli_square"},
    "optimizer": {
        "eps": 0.9, "p": 0.1, "eps_lm": 0.3, "p_lm": 0.1, "eps_kl": 0.04, "p_kl": 0.1,
        "overrides": {"T": 3, "S": 4, "n_kl": 5, "delta": 0.02, "delta_lm": 0.05},
    },
    "seeds": [0],
    "analysis": {"oracle_resolution": 1e-3},
}


def write_cfg(tmp_path, data):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_run_and_slope(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert "median slope" in capsys.readouterr().out
    assert main(["slope", str(tmp_path / "out" / "seed_0.csv")]) == EXIT_OK
    fit = json.loads(capsys.readouterr().out)
    assert fit["rows"] == 2 * (2 * 5 * 4 + 1) * 3 + 2 * 5 * 4


def test_run_respects_perf_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("PERF_SEED", "4,5")
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "o").glob("*.csv")) == ["seed_4.csv", "seed_5.csv"]


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**SMALL, "optimizer": {**SMALL["optimizer"], "eps": 0.1}})
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_oracle_command(tmp_path, capsys):
    assert main(["oracle", "bernoulli_square", "--resolution", "1e-3"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["oracle"]["theta_opt"] == [0.0]
    assert main(["oracle", "gaussian_affine", "--param", "dim=4", "--resolution", "0.5"]) == EXIT_ORACLE


def test_diag_commands(tmp_path, capsys):
    assert main(["diag", "convexity", "bernoulli_square", "--param", "sign=-1"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)["report"]
    assert rep["convex"] is False and rep["witness"] < 1 / 3
    out = tmp_path / "phi.json"
    assert main(["diag", "convexity", "bernoulli_square", "--param", "sign=-1", "--axis", "phi",
                 "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["report"]["convex"] is True
    assert main(["diag", "expfam", "poisson_exp", "--points", "3", "--draws", "2000"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["report"]["all_satisfied"] is True


def test_calibrate_command(tmp_path, capsys):
    store = tmp_path / "cal.json"
    args = ["calibrate", "bernoulli_label", "--eps", "0.2", "--p", "0.1", "--trials", "200",
            "--grid", "0.3,0.5,0.7", "--store", str(store)]
    assert main(args) == EXIT_OK
    data = json.loads(store.read_text())
    assert data["families"]["bernoulli_label"]["c_cal"] > 0
    assert "stored c_cal" in capsys.readouterr().out


def test_bad_param_syntax():
    assert main(["oracle", "bernoulli_square", "--param", "sign"]) == EXIT_CONFIG


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
