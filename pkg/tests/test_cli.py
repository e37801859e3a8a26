import json

import numpy as np
import pytest

from coupled_meanfield import cli, config as cfgmod, io
from coupled_meanfield.meanfield import WeightedPointCloud


def _config(tmp_path, **changes):
    cfg = cfgmod.packaged_config("default")
    cfg.integrator.T = 0.2
    cfg.initial.N = 8
    for section, values in changes.items():
        for k, v in values.items():
            setattr(getattr(cfg, section), k, v)
    path = tmp_path / "cfg.toml"
    path.write_text(cfgmod.serialize(cfg))
    return str(path)


def test_unknown_command_is_usage_error(capsys):
    assert cli.main(["frobnicate"]) == 2


def test_invariants_default_exits_zero(tmp_path):
    out = tmp_path / "inv"
    assert cli.main(["invariants", "--out", str(out)]) == 0
    report = json.loads((out / "invariants.json").read_text())
    assert report["passed"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    for entry in manifest["artifacts"]:
        assert entry["sha256"] == io.sha256_file(out / entry["name"])


def test_simulate_T_zero_single_row(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", _config(tmp_path, integrator={"T": 0.0}), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("t,y0,v0,E,constraint_drift")


def test_simulate_dae_columns(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", _config(tmp_path), "--out", str(out), "--dae-residuals"]) == 0
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert "newton_x_residual" in header


def test_invalid_config_exit_code(tmp_path, capsys):
    out = tmp_path / "bad"
    path = _config(tmp_path, integrator={"dt": 0.0})
    assert cli.main(["simulate", "--config", path, "--out", str(out)]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValidationError"
    assert any(d["path"] == "integrator.dt" for d in err["details"])
    assert (out / "error.json").exists()


def test_parse_error_exit_code(tmp_path, capsys):
    path = tmp_path / "broken.toml"
    path.write_text("[model\n")
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    assert json.loads(capsys.readouterr().err)["details"]["line"] == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 3


def test_validate_only(tmp_path, capsys):
    out = tmp_path / "v"
    assert cli.main(["simulate", "--config", _config(tmp_path), "--validate-only", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["valid"] is True
    assert not out.exists()


def test_simulate_is_deterministic(tmp_path):
    path = _config(tmp_path)
    for name in ("a", "b"):
        assert cli.main(["simulate", "--config", path, "--out", str(tmp_path / name),
                         "--seed", "11", "--strict-sequential"]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    assert ma["seed"] == 11
    assert [e["sha256"] for e in ma["artifacts"]] == [e["sha256"] for e in mb["artifacts"]]


def test_seed_changes_samples(tmp_path):
    path = _config(tmp_path)
    for seed in ("1", "2"):
        cli.main(["simulate", "--config", path, "--out", str(tmp_path / seed), "--seed", seed])
    assert (tmp_path / "1" / "trajectory.csv").read_bytes() != (tmp_path / "2" / "trajectory.csv").read_bytes()


def test_meanfield_writes_nodes(tmp_path):
    out = tmp_path / "mf"
    path = _config(tmp_path, initial={"sampling": "quantile"})
    assert cli.main(["meanfield", "--config", path, "--out", str(out)]) == 0
    rows = (out / "nodes.csv").read_text().splitlines()
    assert rows[0] == "t,node,weight,x0"
    assert len(rows) == 1 + 8 * 21  # T = 0.2, dt = 1e-3, stride 10


def test_w1_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_cloud(a, WeightedPointCloud.empirical([[0.0], [1.0]]))
    io.write_cloud(b, WeightedPointCloud.empirical([[1.0], [2.0]]), weights=False)
    for method, expected in (("auto", "SORT_1D"), ("assignment", "ASSIGNMENT"), ("dual", "DUAL_LOWER_BOUND")):
        capsys.readouterr()
        assert cli.main(["w1", str(a), str(b), "--method", method, "--out", str(tmp_path / method)]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["method"] == expected
        assert res["value"] == pytest.approx(1.0, abs=1e-15)
    assert (tmp_path / "assignment" / "w1.json").exists()


def test_w1_bad_file(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x0\nabc\n")
    assert cli.main(["w1", str(bad), str(bad)]) == 1


def test_cloud_csv_round_trip(tmp_path):
    cloud = WeightedPointCloud(np.array([[0.1, 0.2], [1 / 3, -2.5]]), np.array([0.25, 0.75]))
    io.write_cloud(tmp_path / "c.csv", cloud)
    back = io.read_cloud(tmp_path / "c.csv")
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.weights, cloud.weights)
