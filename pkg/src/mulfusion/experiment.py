"""Experiment configuration files, bundled presets and single runs.

A config is one YAML document with the sections ``data``, ``model``,
``fusion``, ``optimizer``, ``evaluation`` plus ``name``, ``method``, ``seeds``
and ``output_dir``. String values may reference environment variables as
``${NAME}`` or ``${NAME:-default}``. ``MULFUSION_OUTPUT_ROOT`` prefixes relative
output directories.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ._io import atomic_write_json, atomic_write_text
from .data import Dataset, DatasetSpec, load_dataset
from .errors import ConfigError
from .evaluation import MetricsReport, metrics_report
from .fusion import FusionConfig, per_sample_loss, predict
from .models import ModelSpec, init_bundle, layout, save_checkpoint
from .training import OptimizerConfig, train

PRESETS = ("synthetic-weak", "higgs-small", "higgs-full")
ARTIFACTS = ("checkpoint.npz", "metrics.json", "train_log.csv", "config.yaml")

_SECTIONS = {"name", "method", "data", "model", "fusion", "optimizer", "evaluation", "seeds",
             "output_dir"}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelSpec)} - {"modality_dims", "n_classes"}
_MODEL_KEYS |= {"head_hidden_by_kind"}
_EVAL_KEYS = {"single_modality_baselines"}
_ENV_RE = re.compile(r"\$\{(\w+)(?::-([^}]*))?\}")


@dataclass
class ExperimentConfig:
    data: DatasetSpec
    model: dict
    fusion: FusionConfig
    optimizer: OptimizerConfig
    name: str = "experiment"
    method: str | None = None
    use_modalities: list[int] | None = None
    single_modality_baselines: bool = False
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/experiment"
    source: str | None = None

    # -- derived -----------------------------------------------------------
    def modality_dims(self) -> tuple[int, ...]:
        if self.data.source == "file":
            dims = tuple(len(c) for c in self.data.modality_columns or [])
        else:
            s = self.data.synthetic
            dims = (s.dim,) * s.n_modalities
        if self.use_modalities is not None:
            dims = tuple(dims[m] for m in self.use_modalities)
        return dims

    def n_classes(self) -> int:
        return self.data.synthetic.n_classes if self.data.source == "synthetic" else 2

    def model_spec(self, n_classes: int | None = None) -> ModelSpec:
        m = dict(self.model)
        by_kind = m.pop("head_hidden_by_kind", None) or {}
        if self.fusion.kind in by_kind:
            m["head_hidden"] = by_kind[self.fusion.kind]
        m["modality_dims"] = self.modality_dims()
        m["n_classes"] = n_classes or self.n_classes()
        return ModelSpec.from_dict(m)

    def label(self) -> str:
        return self.method or self.fusion.kind

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        data = self.data.to_dict()
        if self.use_modalities is not None:
            data["use_modalities"] = list(self.use_modalities)
        return {
            "name": self.name,
            "method": self.method,
            "data": data,
            "model": copy.deepcopy(self.model),
            "fusion": self.fusion.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "evaluation": {"single_modality_baselines": self.single_modality_baselines},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def fingerprint(self) -> str:
        """Hash of everything that determines a run except the seed and output location."""
        d = self.to_dict()
        for key in ("seeds", "output_dir", "name"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``{"fusion.beta": 0.3}``."""
        d = self.to_dict()
        for path, value in changes.items():
            _set_path(d, path, value)
        return config_from_dict(d, source=self.source, apply_output_root=False)

    def violations(self) -> list[str]:
        out = []
        out += self.data.violations()
        out += self.fusion.violations()
        out += self.optimizer.violations()
        if self.data.source == "file" and self.data.path and not Path(self.data.path).exists():
            out.append(f"data.path: file {self.data.path!r} does not exist")
        n_mod = self.data.n_modalities()
        if self.use_modalities is not None:
            bad = [m for m in self.use_modalities if not 0 <= m < n_mod]
            if bad or not self.use_modalities:
                out.append(f"data.use_modalities: {self.use_modalities} must pick from "
                           f"0..{n_mod - 1}")
                return out
            n_mod = len(self.use_modalities)
        cap = int(self.model.get("max_modalities", 8))
        if self.fusion.kind == "mulmix" and n_mod > cap:
            out.append(f"fusion.kind: mulmix over M={n_mod} modalities needs 2^{n_mod}-1="
                       f"{2**n_mod - 1} candidates, above the cap M_max={cap} "
                       f"(2^M limit; raise model.max_modalities to allow it)")
        w = self.fusion.modality_loss_weights
        if w is not None:
            expected = 2**n_mod - 1 if self.fusion.kind == "mulmix" else n_mod
            if len(w) != expected:
                out.append(f"fusion.modality_loss_weights: {len(w)} weights given, "
                           f"{self.fusion.kind} combines {expected} models")
        if self.fusion.kind in ("early",) and self.model.get("heads_on_raw"):
            out.append("model.heads_on_raw: only meaningful for late/mul")
        if not self.seeds:
            out.append("seeds: at least one seed is required")
        if not out:
            try:
                layout(self.model_spec(), self.fusion.kind)
            except (ConfigError, TypeError, ValueError) as err:
                out.append(f"model: {err}")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self


def _set_path(d: dict, path: str, value) -> None:
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def _expand_env(obj):
    if isinstance(obj, str):
        def sub(m):
            return os.environ.get(m.group(1), m.group(2) if m.group(2) is not None else "")
        return _ENV_RE.sub(sub, obj)
    if isinstance(obj, dict):
        return {k: _expand_env(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_expand_env(v) for v in obj]
    return obj


def _build(cls, section: str, d: dict, problems: list[str]):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(d) - known):
        problems.append(f"{section}.{key}: unknown field")
    try:
        return cls.from_dict({k: v for k, v in d.items() if k in known}) \
            if hasattr(cls, "from_dict") else cls(**{k: v for k, v in d.items() if k in known})
    except (TypeError, ValueError) as err:
        problems.append(f"{section}: {err}")
        return None


def _check_types(section: str, d: dict, defaults, problems: list[str]) -> None:
    for f in dataclasses.fields(defaults):
        if f.name not in d or d[f.name] is None:
            continue
        default = getattr(defaults, f.name)
        value = d[f.name]
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif isinstance(default, str):
            ok = isinstance(value, str)
        else:
            continue
        if not ok:
            problems.append(f"{section}.{f.name}: expected {type(default).__name__}, "
                            f"got {value!r}")


def config_from_dict(raw: dict, source: str | None = None,
                     apply_output_root: bool = True) -> ExperimentConfig:
    """Build a config, collecting every structural problem before raising."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    raw = _expand_env(copy.deepcopy(raw))
    problems: list[str] = [f"{k}: unknown section" for k in sorted(set(raw) - _SECTIONS)]

    data_raw = dict(raw.get("data") or {})
    use_modalities = data_raw.pop("use_modalities", None)
    syn_raw = data_raw.get("synthetic")
    if isinstance(syn_raw, dict):
        from .data import SyntheticSpec
        _check_types("data.synthetic", syn_raw, SyntheticSpec(), problems)
        for key in sorted(set(syn_raw) - {f.name for f in dataclasses.fields(SyntheticSpec)}):
            problems.append(f"data.synthetic.{key}: unknown field")
            syn_raw.pop(key)
    _check_types("data", data_raw, DatasetSpec(), problems)
    data = _build(DatasetSpec, "data", data_raw, problems)

    fusion_raw = dict(raw.get("fusion") or {})
    _check_types("fusion", fusion_raw, FusionConfig(), problems)
    fusion = _build(FusionConfig, "fusion", fusion_raw, problems)

    opt_raw = dict(raw.get("optimizer") or {})
    _check_types("optimizer", opt_raw, OptimizerConfig(), problems)
    optimizer = _build(OptimizerConfig, "optimizer", opt_raw, problems)

    model = dict(raw.get("model") or {})
    for key in sorted(set(model) - _MODEL_KEYS):
        problems.append(f"model.{key}: unknown field")
    ev = dict(raw.get("evaluation") or {})
    for key in sorted(set(ev) - _EVAL_KEYS):
        problems.append(f"evaluation.{key}: unknown field")
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        problems.append(f"seeds: expected a list of integers, got {seeds!r}")
        seeds = [0]
    if problems:
        raise ConfigError(problems)

    output_dir = str(raw.get("output_dir") or f"runs/{raw.get('name', 'experiment')}")
    root = os.environ.get("MULFUSION_OUTPUT_ROOT")
    if apply_output_root and root and not os.path.isabs(output_dir):
        output_dir = os.path.join(root, output_dir)
    return ExperimentConfig(
        data=data, model={k: (list(v) if isinstance(v, tuple) else v) for k, v in model.items()},
        fusion=fusion, optimizer=optimizer, name=str(raw.get("name", "experiment")),
        method=raw.get("method"), use_modalities=use_modalities,
        single_modality_baselines=bool(ev.get("single_modality_baselines", False)),
        seeds=seeds, output_dir=output_dir, source=source)


def _yaml_error(err: yaml.YAMLError, where: str) -> ConfigError:
    mark = getattr(err, "problem_mark", None)
    pos = f"{where}:{mark.line + 1}:{mark.column + 1}" if mark else where
    problem = getattr(err, "problem", None) or str(err)
    return ConfigError(f"{pos}: YAML parse error: {problem}")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("mulfusion.presets").joinpath(f"{name}.yaml").read_text()


def load_config(path_or_preset: str) -> ExperimentConfig:
    """Load a YAML config file, or a bundled preset by name."""
    p = Path(path_or_preset)
    if p.exists():
        text, where = p.read_text(), str(p)
    elif path_or_preset in PRESETS or path_or_preset.startswith("preset:"):
        name = path_or_preset.removeprefix("preset:")
        text, where = preset_text(name), f"preset:{name}"
    else:
        raise FileNotFoundError(f"config {path_or_preset!r} is neither a file nor a preset "
                                f"({', '.join(PRESETS)})")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise _yaml_error(err, where) from None
    return config_from_dict(raw or {}, source=where)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _cached_dataset(spec_json: str) -> Dataset:
    return load_dataset(DatasetSpec.from_dict(json.loads(spec_json)))


def prepare_data(cfg: ExperimentConfig) -> Dataset:
    ds = _cached_dataset(json.dumps(cfg.data.to_dict(), sort_keys=True))
    if cfg.use_modalities is not None:
        ds = ds.select_modalities(cfg.use_modalities)
    return ds


def _single_modality_predictions(cfg: ExperimentConfig, ds: Dataset, seed: int) -> np.ndarray:
    preds = []
    for m in range(len(ds.modality_dims)):
        sub = ds.select_modalities([m])
        single = cfg.with_overrides(**{"fusion.kind": "early", "fusion.boosted": False,
                                       "fusion.modality_loss_weights": None})
        spec = dataclasses.replace(single.model_spec(ds.n_classes),
                                   modality_dims=(ds.modality_dims[m],))
        bundle = init_bundle(spec, "early", seed)
        bundle, _ = train(bundle, sub, single.fusion, single.optimizer, seed)
        preds.append(predict(bundle, sub.test, single.fusion)[0])
    return np.stack(preds)


@dataclass
class RunResult:
    report: MetricsReport
    bundle: object
    log: object
    out_dir: Path | None


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, out_dir=None,
                   timestamp: bool = True) -> RunResult:
    """Prepare data, train, evaluate on test; write artifacts when ``out_dir`` is given.

    Artifacts: checkpoint.npz, metrics.json, train_log.csv, config.yaml. Each
    file is written atomically, so re-running the same (config, seed) replaces
    the previous results.
    """
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else int(seed)
    ds = prepare_data(cfg)
    spec = cfg.model_spec(ds.n_classes)
    bundle = init_bundle(spec, cfg.fusion.kind, seed)
    bundle, trace = train(bundle, ds, cfg.fusion, cfg.optimizer, seed)
    singles = None
    if cfg.single_modality_baselines and cfg.fusion.kind in ("early", "add") \
            and len(ds.modality_dims) > 1:
        singles = _single_modality_predictions(cfg, ds, seed)
    fp = cfg.fingerprint()
    report = metrics_report(bundle, ds.test, cfg.fusion, method=cfg.label(), seed=seed,
                            config_fingerprint=fp, dataset_fingerprint=ds.fingerprint,
                            single_modality_predictions=singles)
    test_loss = float(np.mean(per_sample_loss(bundle, ds.test, ds.test.labels, cfg.fusion).data))
    dev_rows = [r for r in trace.rows if r[0] == trace.best_iteration]
    report.extra = {
        "kind": cfg.fusion.kind,
        "beta": cfg.fusion.beta,
        "boosted": cfg.fusion.boosted,
        "n_parameters": bundle.n_parameters(),
        "test_loss": test_loss,
        "dev_error": dev_rows[-1][3] if dev_rows else None,
        "best_iteration": trace.best_iteration,
        "iterations": trace.rows[-1][0] if trace.rows else 0,
        "stopped_early": trace.stopped_early,
        "n_train": len(ds.train),
    }
    if timestamp:
        report.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(bundle, out_dir / "checkpoint.npz",
                        extra={"config_fingerprint": fp, "dataset_fingerprint": ds.fingerprint,
                               "seed": seed})
        atomic_write_json(out_dir / "metrics.json", report.to_dict())
        atomic_write_text(out_dir / "train_log.csv",
                          f"# config_fingerprint: {fp}\n# seed: {seed}\n" + trace.to_csv())
        atomic_write_text(out_dir / "config.yaml",
                          f"# config_fingerprint: {fp}\n# seed: {seed}\n" + cfg.to_yaml())
    return RunResult(report, bundle, trace, out_dir)

