import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rkhs_mi import cli, complexity, critics, storage
from rkhs_mi.complexity import BoundInputs, RegWeights
from rkhs_mi.errors import ConfigError
from rkhs_mi.storage import CriticFormatError
from rkhs_mi.numkit import RngStream


def write_cfg(tmp_path, **kw):
    base = dict(feature_dim=16, dim=2, schedule=[[2.0, 10]], seed=4)
    base.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base))
    return str(path)


def test_train_outputs_and_rerun_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    lines = (a / "steps.csv").read_text().splitlines()
    assert len(lines) == 11 and lines[0].split(",") == list(storage.STEPS_COLUMNS)
    for name in ("steps.csv", "critic.bin", "trace.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ET.parse(a / "trace.svg")
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 4


def test_train_seed_flag_changes_output(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a/steps.csv").read_bytes() != (tmp_path / "b/steps.csv").read_bytes()


def test_train_divergence_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, lr=1e4, feature_dim=64, schedule=[[2.0, 50]])
    code = cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_DIVERGED
    err = capsys.readouterr().err
    rows = storage.read_csv(tmp_path / "o/steps.csv")
    assert f"step {len(rows) + 1}" in err
    assert not (tmp_path / "o/critic.bin").exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_cfg(tmp_path, learning_rate=0.1)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_bad_config_values():
    with pytest.raises(ConfigError):
        storage.ExperimentConfig.from_dict({"batch_size": 1})
    with pytest.raises(ConfigError):
        storage.ExperimentConfig.from_dict({"trials": 0})
    with pytest.raises(ConfigError):
        storage.ExperimentConfig.from_dict([1, 2])


def test_sweep_rows_and_defaults(tmp_path):
    cfg = write_cfg(tmp_path, estimators=["js", "smile"], batch_sizes=[8, 16],
                    schedule=[[2.0, 5], [4.0, 5], [6.0, 5]], tail_frac=0.4)
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = storage.read_csv(tmp_path / "o/stats.csv")
    assert len(rows) == 12
    for r in rows:
        default = complexity.default_reg_weights(r["estimator"])
        assert float(r["lambda1"]) == default.lambda1 and float(r["lambda2"]) == default.lambda2
        assert float(r["variance"]) >= 0 and math.isfinite(float(r["variance"]))
        assert int(r["n_estimates"]) == 2
    for est in ("js", "smile"):
        for metric in cli.METRICS:
            ET.parse(tmp_path / f"o/{est}_{metric}.svg")


def test_sweep_grid_cells():
    cfg = storage.ExperimentConfig(estimators=["nwj"], batch_sizes=[64],
                                   lambda1_grid=[0.0, 0.1], lambda2_grid=[0.0, 1e-3, 1e-2])
    cells = cli.sweep_cells(cfg)
    assert len(cells) == 6
    assert {c.reg for c in cells} == {RegWeights(a, b) for a in (0.0, 0.1) for b in (0.0, 1e-3, 1e-2)}


def test_workers_resolution(monkeypatch):
    monkeypatch.delenv("RKHS_MI_WORKERS", raising=False)
    assert cli._workers(None, 3) == 3
    monkeypatch.setenv("RKHS_MI_WORKERS", "2")
    assert cli._workers(None, 3) == 2
    assert cli._workers(5, 3) == 5
    monkeypatch.setenv("RKHS_MI_WORKERS", "many")
    with pytest.raises(ConfigError):
        cli._workers(None)


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, estimators=["nwj"], batch_sizes=[8], trials=2)
    monkeypatch.setenv("RKHS_MI_WORKERS", "2")
    cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "p")])
    monkeypatch.delenv("RKHS_MI_WORKERS")
    cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")])
    assert (tmp_path / "p/stats.csv").read_bytes() == (tmp_path / "s/stats.csv").read_bytes()
    manifest = json.loads((tmp_path / "s/manifest.json").read_text())
    assert manifest["trials"] == 2


def _zero_critic(path, d=2, D=8):
    p = critics.askl_init(RngStream(0), 2 * d, D)
    p.w = np.zeros(D)
    storage.save_critic(path, p, {"estimator": "nwj", "dim": d})


def test_bounds_zero_critic(tmp_path):
    path = tmp_path / "c.bin"
    _zero_critic(path)
    p, header = storage.load_critic(path)
    rep = cli.bounds_report(p, header, 1.0, None, False, 0.05, 64, 64, probe=128)
    assert rep["certificate_n"]["bound_tight"] == 0.0
    assert rep["M"]["value"] == 0.0
    # with M = 0 only the confidence term survives, and it carries a factor of M
    assert rep["tuba_gen_bound"] == 0.0 and rep["dv_gen_bound"] == 0.0


def test_bounds_report_consistent_and_shrinks(tmp_path, capsys):
    cfg = write_cfg(tmp_path, schedule=[[2.0, 20]])
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")])
    capsys.readouterr()
    crit = str(tmp_path / "o/critic.bin")
    assert cli.main(["bounds", "--critic", crit, "--mi", "2", "--probe", "128",
                     "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep == json.loads((tmp_path / "r.json").read_text())
    inp = BoundInputs(M=rep["M"]["value"], a=rep["a"], n=64, m=64, delta=0.05,
                      rad_n=rep["certificate_n"]["bound_tight"],
                      rad_m=rep["certificate_m"]["bound_tight"])
    assert rep["tuba_gen_bound"] == complexity.tuba_gen_bound(inp)
    assert rep["dv_gen_bound"] == complexity.dv_gen_bound(inp)
    assert rep["a"] == math.e

    p, header = storage.load_critic(crit)
    big = cli.bounds_report(p, header, 2.0, None, False, 0.05, 128, 128, probe=128)
    assert big["tuba_gen_bound"] < rep["tuba_gen_bound"]
    assert big["dv_gen_bound"] < rep["dv_gen_bound"]


def test_bounds_rejects_mlp(tmp_path, capsys):
    path = tmp_path / "m.bin"
    storage.save_critic(path, critics.mlp_init(RngStream(0), 4, (8,)), {"dim": 2})
    assert cli.main(["bounds", "--critic", str(path), "--mi", "1"]) == 1
    assert "MLP" in capsys.readouterr().err


def test_critic_roundtrip(tmp_path):
    r = RngStream(9)
    for p in (critics.askl_init(r, 6, 5), critics.mlp_init(r, 6, (7, 3))):
        storage.save_critic(tmp_path / "x.bin", p, {"k": 1.5})
        q, header = storage.load_critic(tmp_path / "x.bin")
        assert header["meta"] == {"k": 1.5}
        X = r.gen.normal(size=(4, 6))
        assert np.array_equal(critics.forward(p, X), critics.forward(q, X))


def test_critic_bad_file(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a critic")
    with pytest.raises(CriticFormatError):
        storage.load_critic(bad)
    storage.save_critic(bad, critics.askl_init(RngStream(0), 2, 3))
    bad.write_bytes(bad.read_bytes()[:-8])
    with pytest.raises(CriticFormatError):
        storage.load_critic(bad)


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert "all" in capsys.readouterr().out


def test_gradcheck_catches_sign_flip(monkeypatch, capsys):
    real = critics.askl_backward

    def flipped(p, X, g):
        out = dict(real(p, X, g))
        out["Omega"] = -out["Omega"]
        return out

    monkeypatch.setattr(critics, "askl_backward", flipped)
    assert cli.main(["gradcheck"]) == 1
    assert "askl.Omega" in capsys.readouterr().err


def test_gradcheck_impossible_tolerance():
    assert cli.main(["gradcheck", "--tolerance", "1e-12"]) == 1
