import json

import numpy as np
import pytest

from relu_landscape import cli
from relu_landscape.config import ConfigError, RunConfig, load_config
from relu_landscape.constructor import build_perfect_fit, default_block_spec, extract_knots
from relu_landscape.net_core import Architecture
from relu_landscape.records import (RunDir, SchemaError, load_target, load_weights, parse_weights, read_csv,
                                    target_document, weights_document, write_csv, write_json)


def test_construct_writes_target_and_minimum(tmp_path, capsys):
    assert cli.main(["construct", "--out", str(tmp_path)]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "param_count: 136" in out and "segment_count: 32" in out
    arch, w = load_weights(tmp_path / "global_min.json")
    assert arch.param_count == 136
    pl = load_target(tmp_path / "target.json")
    assert pl.segment_count == 32


def test_construct_sawtooth_only(tmp_path, capsys):
    spec = {"hidden_layers": 5, "sawtooth_width": 5, "spline_width": 0}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert cli.main(["construct", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path)]) == 0
    assert "local_extrema: 3125" in capsys.readouterr().out


def test_invalid_block_is_exit_3(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"sawtooth_width": 1}))
    assert cli.main(["construct", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path)]) == cli.EXIT_INVALID


def test_unknown_config_key_is_exit_3(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"sweep": {"fits": 3}}))
    assert cli.main(["sweep", "--config", str(tmp_path / "c.json")]) == cli.EXIT_INVALID


def test_missing_target_is_exit_4(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"target": "nope.json"}))
    assert cli.main(["sweep", "--config", str(tmp_path / "c.json")]) == cli.EXIT_MISSING


def test_symmetrize_without_fits_is_exit_4(tmp_path):
    assert cli.main(["construct", "--out", str(tmp_path)]) == 0
    (tmp_path / "c.json").write_text(json.dumps({"output": "empty"}))
    assert cli.main(["symmetrize", "--config", str(tmp_path / "c.json")]) == cli.EXIT_MISSING


def test_too_many_divergences_is_exit_5(tmp_path):
    assert cli.main(["construct", "--out", str(tmp_path)]) == 0
    cfg = {"optimizers": [{"kind": "gd_momentum", "steps": 500, "learning_rate": 5.0}], "sweep": {"fit_count": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert cli.main(["sweep", "--config", str(tmp_path / "c.json")]) == cli.EXIT_DIVERGED


def test_usage_error_is_exit_2():
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == cli.EXIT_USAGE


def test_config_roundtrip_and_strictness(tmp_path):
    cfg = RunConfig()
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"schema_version": 2})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"arch": {"hidden_layers": 5, "hidden_width": 5, "depth": 1}})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_manifest_is_a_config(tmp_path):
    rd = RunDir(tmp_path).create()
    rd.write_manifest({"config": RunConfig(output=".").to_dict()})
    assert load_config(tmp_path / "manifest.json").output == "."


def test_weights_document_roundtrip_is_exact(tmp_path):
    arch, w = build_perfect_fit(default_block_spec())
    w = w + np.random.default_rng(0).normal(size=w.size) * 1e-3
    write_json(tmp_path / "w.json", weights_document(arch, w))
    a2, w2 = load_weights(tmp_path / "w.json")
    assert a2 == arch and np.array_equal(w2, w)


def test_weights_document_checks():
    arch = Architecture(1, 1)
    d = weights_document(arch, np.zeros(4))
    with pytest.raises(SchemaError):
        parse_weights({**d, "schema_version": 99})
    with pytest.raises(SchemaError):
        parse_weights({**d, "weights": ["0.0"] * 3})


def test_target_roundtrip(tmp_path):
    arch, w = build_perfect_fit(default_block_spec())
    pl = extract_knots(arch, w)
    write_json(tmp_path / "t.json", target_document(pl))
    back = load_target(tmp_path / "t.json")
    assert np.array_equal(back.knots, pl.knots) and np.array_equal(back.values, pl.values)


def test_csv_floats_roundtrip(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, -2.5e17]
    write_csv(tmp_path / "a.csv", ["v", "flag"], [(v, True) for v in vals])
    header, rows = read_csv(tmp_path / "a.csv")
    assert header == ["v", "flag"]
    assert [float(r[0]) for r in rows] == vals and all(r[1] == "1" for r in rows)


def test_shipped_configs_load():
    from pathlib import Path
    from relu_landscape.pipeline import spec_from_dict
    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("main.json", "quick.json"):
        cfg = load_config(root / name)
        assert cfg.arch.param_count == 136
    for name in ("construct_main.json", "construct_sawtooth.json"):
        spec, _ = spec_from_dict(json.loads((root / name).read_text()))
        spec.validate()
    assert load_config(root / "main.json").optimizer("gd_momentum").learning_rate == 0.0015
