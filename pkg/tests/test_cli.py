"""End-to-end tests of the command line interface."""

import json

import numpy as np
import pytest

from quenchlearn.cli import CONFIG_SCHEMA, Pipeline, config_hash, main


def base_config(**overrides):
    cfg = {
        "schema": CONFIG_SCHEMA,
        "name": "test",
        "seed": 3,
        "model": {"type": "ising", "n": 3},
        "method": "energy",
        "ansatz": "A5",
        "dissipator": "D_loc",
        "probes": "single",
        "protocol": {
            "grid": {"total_time": 1.0, "n_steps": 30},
            "states": {"kind": "haar", "count": 12},
            "shots": 100,
            "bases": "auto",
        },
        "solver": {"xi": 1000.0, "d_max": 0.2, "direct_budget": 300,
                   "recheck": False},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_writes_hash_stamped_dataset(tmp_path):
    path = write_config(tmp_path, base_config())
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "dataset.json").read_text())
    assert payload["config_hash"] == config_hash(base_config())
    assert payload["dataset"]["settings"]


def test_missing_field_exits_1_and_names_the_field(tmp_path, capsys):
    cfg = base_config()
    del cfg["protocol"]["grid"]
    path = write_config(tmp_path, cfg)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "protocol.grid" in capsys.readouterr().err


def test_unsupported_schema_exits_1(tmp_path, capsys):
    path = write_config(tmp_path, base_config(schema=99))
    assert main(["learn", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "schema" in capsys.readouterr().err


def test_invalid_basis_entry_exits_1(tmp_path, capsys):
    cfg = base_config()
    cfg["protocol"]["bases"] = ["XQZ"]
    path = write_config(tmp_path, cfg)
    assert main(["learn", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "bases" in capsys.readouterr().err


def test_learn_oracle_recovers_model(tmp_path):
    path = write_config(tmp_path, base_config())
    code = main(["learn", "--config", str(path), "--out", str(tmp_path),
                 "--oracle"])
    assert code == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["diagnostics"]["delta_c"] < 1e-3
    assert result["converged"]
    assert result["config"]["hash"] == config_hash(base_config())
    assert set(result["rates"]) == {"d+", "d-", "dz"}


def test_learn_reuses_simulated_dataset_bit_identically(tmp_path):
    path = write_config(tmp_path, base_config())
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    out_a.mkdir(), out_b.mkdir()
    # a: learn simulates in memory; b: learn reads the dataset file
    assert main(["learn", "--config", str(path), "--out", str(out_a)]) == 0
    assert main(["simulate", "--config", str(path), "--out", str(out_b)]) == 0
    assert main(["learn", "--config", str(path), "--out", str(out_b)]) == 0
    res_a = json.loads((out_a / "result.json").read_text())
    res_b = json.loads((out_b / "result.json").read_text())
    assert res_a == res_b


def test_seed_override_changes_the_data(tmp_path):
    path = write_config(tmp_path, base_config())
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    out_a.mkdir(), out_b.mkdir()
    assert main(["learn", "--config", str(path), "--out", str(out_a)]) == 0
    assert main(["learn", "--config", str(path), "--out", str(out_b),
                 "--seed", "4"]) == 0
    res_a = json.loads((out_a / "result.json").read_text())
    res_b = json.loads((out_b / "result.json").read_text())
    assert res_a["coefficients"] != res_b["coefficients"]


def test_curve_writes_csv_and_plot(tmp_path):
    cfg = base_config(curve={"budgets": [25, 50, 100], "asymptote": False})
    path = write_config(tmp_path, cfg)
    assert main(["curve", "--config", str(path), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={config_hash(cfg)}"
    assert lines[1] == "n_runs,ratio,ratio_err,sin_theta,delta_add"
    assert len(lines) == 5
    n_runs = [int(line.split(",")[0]) for line in lines[2:]]
    assert n_runs == sorted(n_runs)
    assert (tmp_path / "curve.png").stat().st_size > 0


def test_bootstrap_writes_error_bars_covering_truth(tmp_path):
    cfg = base_config(bootstrap={"n_resamples": 8})
    path = write_config(tmp_path, cfg)
    assert main(["bootstrap", "--config", str(path), "--out", str(tmp_path),
                 "--workers", "2"]) == 0
    lines = (tmp_path / "bootstrap.csv").read_text().splitlines()
    assert lines[1] == "name,value,std,lower,upper"
    rows = {r.split(",")[0]: [float(v) for v in r.split(",")[1:]]
            for r in lines[2:]}
    assert all(std >= 0 for _, std, *_ in rows.values())
    pipe = Pipeline(cfg)
    assert set(rows) == set(pipe.ansatz.names) | set(pipe.diss.names)
    assert (tmp_path / "bootstrap.png").stat().st_size > 0


def test_sweep_beta_writes_spectrum_sweep(tmp_path):
    cfg = {
        "schema": CONFIG_SCHEMA,
        "name": "xy sweep",
        "seed": 1,
        "model": {"type": "xy", "n": 3, "rng_seed": 0},
        "method": "energy",
        "ansatz": "AXY",
        "dissipator": "D_col",
        "parametrization": {"type": "xy", "alpha": 1.5},
        "protocol": {
            "grid": {"total_time": 0.5, "n_steps": 40},
            "states": {"kind": "haar", "count": 10},
            "shots": 100,
            "bases": "auto",
        },
        "solver": {"d_max": 0.5, "direct_budget": 300, "recheck": False},
        "beta_sweep": {"lo": 1e-3, "hi": 1.0, "points": 3},
    }
    path = write_config(tmp_path, cfg)
    code = main(["sweep-beta", "--config", str(path), "--out", str(tmp_path),
                 "--oracle"])
    assert code == 0
    lines = (tmp_path / "beta_sweep.csv").read_text().splitlines()
    assert lines[1].startswith("beta,lambda_1")
    assert lines[1].endswith("lambda_c")
    betas = [float(line.split(",")[0]) for line in lines[2:]]
    assert betas == sorted(betas) and len(betas) == 3
    assert (tmp_path / "beta_sweep.png").stat().st_size > 0


def test_windows_config_round_trip():
    cfg = base_config()
    cfg["protocol"]["windows"] = {"every": 10}
    pipe = Pipeline(cfg)
    assert pipe.windows == [10, 20, 30]
    cfg["protocol"]["windows"] = [10, 30]
    assert Pipeline(cfg).windows == [10, 30]
    cfg["protocol"]["windows"] = {"every": 3}
    with pytest.raises(Exception, match="even"):
        Pipeline(cfg)


def test_config_hash_is_order_insensitive():
    cfg = base_config()
    reordered = json.loads(json.dumps(cfg, sort_keys=True))
    assert config_hash(cfg) == config_hash(reordered)
    assert config_hash(base_config(seed=4)) != config_hash(cfg)


def test_bundled_configs_are_valid():
    from importlib import resources

    from quenchlearn.cli import load_config

    root = resources.files("quenchlearn") / "configs"
    names = sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))
    assert len(names) == 5
    for name in names:
        cfg = load_config(root / name)
        pipe = Pipeline(cfg)
        assert pipe.bases and pipe.states
