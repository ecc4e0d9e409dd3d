import json

import numpy as np
import pytest
import yaml

from qcapgeo import cli
from qcapgeo.channels import ChannelSpec
from qcapgeo.qmath import format_matrix, parse_matrices


def _write(tmp_path, d, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(d))
    return p


def _lower_cfg(tmp_path, **out):
    return {
        "task": "lower_channel",
        "target": {"channel": {"name": "dephasing", "params": {"p": 0.1}}},
        "sweep": {"param": "p", "values": [0.1, 0.2]},
        "optimizer": {"n_copies": 1, "r_dim": 2, "restarts": 3},
        "output": {"dir": str(tmp_path / "out"), "name": "deph", **out},
    }


def test_grid_forms():
    c = cli.ExperimentConfig.from_dict({"task": "upper_state", "target": {"state": {"kind": "isotropic"}},
                                        "sweep": {"param": "noise", "start": 0.0925, "stop": 0.1875,
                                                  "step": 0.005}})
    g = c.grid()
    assert len(g) == 20 and g[0] == 0.0925 and g[-1] == 0.1875


@pytest.mark.parametrize("bad", [
    {"task": "nope", "target": {}, "sweep": {"param": "p", "values": [1]}},
    {"task": "lower_channel", "target": {"channel": {"name": "identity"}}, "sweep": {"param": "p", "values": []}},
    {"task": "lower_channel", "target": {}, "sweep": {"param": "p", "values": [0.1]}},
    {"task": "lower_channel", "target": {"channel": {"name": "identity"}}, "sweep": {"param": "p", "values": [0.1]},
     "optimizer": {"restarts": 0}},
    {"task": "lower_channel", "target": {"channel": {"name": "identity"}}, "sweep": {"param": "p", "values": [0.1]},
     "extra": 1},
])
def test_invalid_configs(bad):
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict(bad)


def test_profiles(tmp_path):
    c = cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path))
    assert cli.effective_config(c, "desk").optimizer["restarts"] == 3
    assert cli.effective_config(c, "paper").optimizer["restarts"] == 200
    assert cli.effective_config(c, "desk", restarts=7, seed=5).optimizer == {
        "restarts": 7, "max_iters": 500, "n_copies": 1, "r_dim": 2, "seed": 5}
    d = cli.ExperimentConfig.from_dict({**_lower_cfg(tmp_path), "optimizer": {}})
    assert cli.effective_config(d, "desk").optimizer["restarts"] == 50


def test_noise_alias():
    rho, dims = cli.build_state({"state": {"kind": "isotropic", "params": {"d": 2}}}, "noise", 0.15)
    # noise = 3p/4, f = 1 - p
    assert dims == [2, 2]
    bell = np.zeros(4)
    bell[[0, 3]] = 2 ** -0.5
    assert abs(bell @ rho @ bell - 0.8) < 1e-12


def test_parse_channel_arg():
    assert cli.parse_channel_arg("gadc:gamma=0.3,N=0.1") == ChannelSpec("gadc", {"gamma": 0.3, "N": 0.1}, 2)
    assert cli.parse_channel_arg("identity").name == "identity"
    with pytest.raises(cli.ConfigError):
        cli.parse_channel_arg("gadc:gamma")


def test_run_and_verify(tmp_path):
    cfg = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path)))
    report = cli.run(cfg)
    out = tmp_path / "out"
    header = (out / "deph.csv").read_text().splitlines()[0]
    assert header == "param,n,r_dim,rate,baseline_rate,restarts_used,seconds"
    assert [r["status"] for r in report["rows"]] == ["ok", "ok"]
    assert abs(report["rows"][0]["rate"] - 0.531004406411) < 1e-9
    assert (out / "deph_000.txt").exists()
    assert cli.verify(out / "deph.json")["ok"]


def test_csv_deterministic(tmp_path):
    a = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path / "a", timing=False)))
    b = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path / "b", timing=False)))
    cli.run(a)
    cli.run(b)
    assert (tmp_path / "a/out/deph.csv").read_bytes() == (tmp_path / "b/out/deph.csv").read_bytes()
    rows = (tmp_path / "a/out/deph.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",0") for r in rows)


def test_verify_catches_tampering(tmp_path):
    cfg = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path)))
    cli.run(cfg)
    ck = tmp_path / "out" / "deph_001.txt"
    text = ck.read_text()
    header, body = text.split("\n", 1)
    (u,) = parse_matrices(body)
    u[0, 0] += 1e-3
    ck.write_text(header + "\n" + format_matrix(u))
    res = cli.verify(tmp_path / "out" / "deph.json")
    assert not res["ok"]
    assert any("unitarity" in f for f in res["rows"][1]["failures"])
    assert not res["rows"][0]["failures"]


def test_verify_catches_edited_value(tmp_path):
    cfg = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path)))
    cli.run(cfg)
    path = tmp_path / "out" / "deph.json"
    rep = json.loads(path.read_text())
    rep["rows"][0]["rate"] += 1e-6
    path.write_text(json.dumps(rep))
    assert not cli.verify(path)["ok"]


def test_verify_other_seed_passes(tmp_path):
    cfg = cli.effective_config(cli.ExperimentConfig.from_dict(_lower_cfg(tmp_path)), seed=11)
    cli.run(cfg)
    assert cli.verify(tmp_path / "out" / "deph.json")["ok"]


def test_failed_point_recorded(tmp_path):
    d = _lower_cfg(tmp_path)
    d["optimizer"]["n_copies"] = 20      # trips the memory guard
    report = cli.run(cli.effective_config(cli.ExperimentConfig.from_dict(d)))
    assert all(r["status"].startswith("failed: MemoryError") for r in report["rows"])
    assert len((tmp_path / "out" / "deph.csv").read_text().splitlines()) == 3


def test_main_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, _lower_cfg(tmp_path))
    assert cli.main(["run", str(good), "--restarts", "2"]) == 0
    assert cli.main(["verify", str(tmp_path / "out" / "deph.json")]) == 0
    assert "PASS" in capsys.readouterr().out
    empty = _write(tmp_path, {**_lower_cfg(tmp_path), "sweep": {"param": "p", "values": []}}, "empty.yaml")
    assert cli.main(["run", str(empty)]) == 2


def test_upper_state_run(tmp_path):
    d = {"task": "upper_state", "target": {"state": {"kind": "isotropic", "params": {"d": 2}}},
         "sweep": {"param": "noise", "values": [0.1]},
         "optimizer": {"restarts": 1, "max_iters": 1, "flag_dim": 2, "r_dim": 4},
         "output": {"dir": str(tmp_path), "name": "iso"}}
    rep = cli.run(cli.effective_config(cli.ExperimentConfig.from_dict(d)))
    row = rep["rows"][0]
    assert row["status"] == "ok"
    assert row["hashing"] - 1e-6 <= row["bound_optimized"] <= row["bound_unextended"] + 1e-12
    assert cli.verify(tmp_path / "iso.json")["ok"]


@pytest.mark.parametrize("arg", ["identity", "gadc:gamma=0.3,N=0.1", "dephasing:p=0.25"])
def test_amortization(arg):
    out = cli.amortization_check(cli.parse_channel_arg(arg), samples=20, seed=1)
    assert out["margin"] >= -1e-6
    if arg == "identity":
        assert abs(out["coherent_info"] - 1) < 1e-6 and out["max_gap"] <= 1 + 1e-6


def test_amort_command(capsys):
    assert cli.main(["amort", "dephasing:p=0.25", "--samples", "10", "--restarts", "2"]) == 0
    assert "margin" in capsys.readouterr().out
