"""Grid sweeps over one hyperparameter with several seeds per grid value."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from .errors import ConfigError
from .evaluation import SweepResult, aggregate
from .experiment import ExperimentConfig, run_experiment

log = logging.getLogger(__name__)

DEFAULT_SEEDS_PER_CELL = 5
SWEEP_KEYS = {
    "beta": "fusion.beta",
    "delta": "fusion.delta",
    "embed_dim": "model.embed_dim",
    "lr": "optimizer.lr",
    "head_depth": None,  # number of hidden layers in every head, width kept
}


def parse_grid(text: str) -> tuple[str, list[float]]:
    """``"beta=0,0.3,1"`` (explicit) or ``"beta=0:1:6"`` (start:stop:count, endpoints kept)."""
    if "=" not in text:
        raise ConfigError(f"grid {text!r}: expected KEY=VALUES")
    key, spec = (s.strip() for s in text.split("=", 1))
    if key not in SWEEP_KEYS:
        raise ConfigError(f"grid key {key!r} not supported; choose from {sorted(SWEEP_KEYS)}")
    if not spec:
        raise ConfigError(f"grid {text!r}: empty grid")
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            values = linear_grid(float(lo), float(hi), int(n))
        else:
            values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"grid {text!r}: could not parse values") from None
    if not values:
        raise ConfigError(f"grid {text!r}: empty grid")
    if key in ("head_depth", "embed_dim"):
        values = [int(v) for v in values]
    return key, values


def linear_grid(lo: float, hi: float, n: int) -> list[float]:
    if n < 1:
        raise ConfigError("grid needs at least one point")
    if n == 1:
        return [lo]
    vals = np.linspace(lo, hi, n)
    vals[0], vals[-1] = lo, hi
    return [float(round(v, 12)) for v in vals]


def cell_config(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key == "head_depth":
        width = (cfg.model.get("head_hidden") or [64])[0]
        layers = [width] * int(value)
        changes = {"model.head_hidden": layers}
        by_kind = cfg.model.get("head_hidden_by_kind") or {}
        for kind, hidden in by_kind.items():
            changes[f"model.head_hidden_by_kind.{kind}"] = [hidden[0]] * int(value)
        return cfg.with_overrides(**changes)
    return cfg.with_overrides(**{SWEEP_KEYS[key]: value})


def _cell_dir(out_dir, key, value, seed) -> Path | None:
    if out_dir is None:
        return None
    return Path(out_dir) / "cells" / f"{key}={value:g}" / f"seed={seed}"


def _run_cell(job):
    cfg, key, value, seed, out_dir = job
    try:
        res = run_experiment(cell_config(cfg, key, value), seed, _cell_dir(out_dir, key, value, seed))
        return {"value": value, "seed": seed, "error": res.report.error,
                "dev_error": res.report.extra.get("dev_error"), "auc": res.report.auc}
    except Exception as err:  # recorded per cell; the sweep carries on
        return {"value": value, "seed": seed, "failure": f"{type(err).__name__}: {err}"}


def sweep(cfg: ExperimentConfig, key: str, values, seeds=None, out_dir=None,
          parallel: int = 1) -> SweepResult:
    """Train one model per (value, seed) and aggregate test error per value.

    Seeds default to ``base + r`` for r < 5, base being the config's first seed,
    so adding grid values never changes the seeds of existing cells.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep grid is empty")
    if key not in SWEEP_KEYS:
        raise ConfigError(f"sweep key {key!r} not supported; choose from {sorted(SWEEP_KEYS)}")
    cfg.validate()
    for v in values:
        cell_config(cfg, key, v).validate()
    if seeds is None:
        seeds = [cfg.seeds[0] + r for r in range(DEFAULT_SEEDS_PER_CELL)]
    jobs = [(cfg, key, v, s, out_dir) for v in values for s in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    cells: dict = {v: [] for v in values}
    failures = []
    for r in results:
        if "failure" in r:
            log.warning("sweep cell %s=%s seed %s failed: %s", key, r["value"], r["seed"],
                        r["failure"])
            failures.append(r)
        else:
            cells[r["value"]].append(r["error"])
    result = aggregate(key, cells, failures)
    result.cells = results
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write_text(out / "sweep.csv", result.to_csv())
        payload = result.to_dict()
        payload.update({"config_fingerprint": cfg.fingerprint(), "seeds": list(seeds),
                        "cells": results})
        atomic_write_json(out / "sweep.json", payload)
    return result


def sweep_beta(cfg: ExperimentConfig, grid, seeds=None, out_dir=None,
               parallel: int = 1) -> SweepResult:
    return sweep(cfg, "beta", grid, seeds, out_dir, parallel)
