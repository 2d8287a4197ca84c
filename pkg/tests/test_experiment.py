import json

import numpy as np
import pytest
import yaml

from mulfusion.errors import ConfigError
from mulfusion.experiment import (ARTIFACTS, PRESETS, config_from_dict, load_config,
                                  run_experiment)
from mulfusion.models import load_checkpoint

TINY = {
    "data.synthetic.n_samples": 500,
    "data.synthetic.dim": 4,
    "optimizer.max_epochs": 3,
    "evaluation.single_modality_baselines": False,
}


def tiny(**extra):
    return load_config("synthetic-weak").with_overrides(**{**TINY, **extra})


@pytest.mark.parametrize("name", PRESETS)
def test_presets_parse(name):
    cfg = load_config(name)
    assert cfg.data.n_modalities() in (2, 3)
    assert load_config(f"preset:{name}").fingerprint() == cfg.fingerprint()


def test_synthetic_preset_is_valid_and_matched_budget():
    cfg = load_config("synthetic-weak").validate()
    from mulfusion.models import init_bundle
    counts = {k: init_bundle(cfg.with_overrides(**{"fusion.kind": k}).model_spec(), k, 0).n_parameters()
              for k in ("add", "mul")}
    assert abs(counts["add"] - counts["mul"]) / counts["mul"] < 0.01


def test_higgs_preset_needs_file(monkeypatch, tmp_path):
    monkeypatch.setenv("MULFUSION_HIGGS", str(tmp_path / "absent.csv"))
    problems = load_config("higgs-small").violations()
    assert any("does not exist" in p for p in problems)
    assert load_config("higgs-small").data.train_subsample == pytest.approx(1 / 3)


def test_unknown_fields_all_reported():
    raw = {"data": {"source": "synthetic", "bogus": 1}, "fusion": {"kind": "mul", "betta": 0.1},
           "optimizer": {"lr": "fast"}, "extra_section": {}}
    with pytest.raises(ConfigError) as err:
        config_from_dict(raw)
    text = "\n".join(err.value.violations)
    for needle in ("data.bogus", "fusion.betta", "optimizer.lr", "extra_section"):
        assert needle in text


def test_violations_cover_ranges_and_cap():
    cfg = tiny(**{"fusion.beta": 1.5})
    assert any("fusion.beta" in p and "[0, 1]" in p for p in cfg.violations())
    cfg = tiny(**{"fusion.kind": "mulmix", "data.synthetic.n_modalities": 9})
    assert any("2^" in p for p in cfg.violations())


def test_yaml_parse_error_has_position(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: x\nfusion:\n  kind: [mul\n")
    with pytest.raises(ConfigError, match=r"bad.yaml:\d+:\d+"):
        load_config(str(path))


def test_env_expansion_and_output_root(monkeypatch):
    monkeypatch.setenv("MULFUSION_OUTPUT_ROOT", "/scratch")
    monkeypatch.setenv("DATA_FILE", "/d/h.csv")
    cfg = config_from_dict({"name": "e", "data": {"source": "file", "path": "${DATA_FILE}",
                                                  "modality_columns": [[1], [2]]},
                            "output_dir": "runs/e"})
    assert cfg.data.path == "/d/h.csv"
    assert cfg.output_dir == "/scratch/runs/e"
    cfg = config_from_dict({"data": {"path": "${MISSING_VAR:-fallback.csv}"}})
    assert cfg.data.path == "fallback.csv"


def test_fingerprint_ignores_seed_and_output():
    a = tiny()
    b = a.with_overrides(seeds=[7, 8], output_dir="elsewhere")
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != a.with_overrides(**{"fusion.beta": 0.9}).fingerprint()


def test_yaml_round_trip(tmp_path):
    cfg = tiny()
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    assert load_config(str(path)).fingerprint() == cfg.fingerprint()


@pytest.mark.parametrize("kind", ["early", "late", "add", "mul", "mulmix"])
def test_run_writes_exactly_the_artifacts(tmp_path, kind):
    res = run_experiment(tiny(**{"fusion.kind": kind}), 0, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(ARTIFACTS)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    fp = metrics["config_fingerprint"]
    assert 0 <= metrics["error"] <= 1 and 0 <= metrics["auc"] <= 1
    assert metrics["n_samples"] == 150
    assert fp in (tmp_path / "config.yaml").read_text()
    assert fp in (tmp_path / "train_log.csv").read_text()
    bundle, extra = load_checkpoint(tmp_path / "checkpoint.npz")
    assert extra["config_fingerprint"] == fp
    for p, q in zip(bundle.parameters(), res.bundle.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_single_modality_baselines_give_over_learn(tmp_path):
    res = run_experiment(tiny(**{"fusion.kind": "add", "evaluation.single_modality_baselines": True}), 0)
    r = res.report
    assert len(r.per_modality_errors) == 3 and r.over_learn_error is not None
    mul = run_experiment(tiny(), 0).report
    assert len(mul.per_modality_errors) == 3


def test_same_seed_same_metrics(tmp_path):
    a = run_experiment(tiny(), 1, tmp_path / "a").report.to_dict()
    b = run_experiment(tiny(), 1, tmp_path / "b").report.to_dict()
    a.pop("timestamp"), b.pop("timestamp")
    assert a == b
    ja = json.loads((tmp_path / "a" / "metrics.json").read_text())
    jb = json.loads((tmp_path / "b" / "metrics.json").read_text())
    ja.pop("timestamp"), jb.pop("timestamp")
    assert ja == jb


def test_use_modalities_subset():
    res = run_experiment(tiny(**{"data.use_modalities": [1]}), 0)
    assert res.bundle.n_modalities == 1


def test_config_yaml_reloads(tmp_path):
    run_experiment(tiny(), 0, tmp_path)
    raw = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert config_from_dict(raw).fingerprint() == tiny().fingerprint()
