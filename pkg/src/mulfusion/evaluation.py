"""Test-time evaluation, metrics reports and sweep aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import MultimodalBatch
from .errors import UndefinedMetricError
from .fusion import FusionConfig, per_modality_predictions, predict
from .metrics import auc, error_rate, over_learn_error, qualifying_mask
from .models import ModelBundle

REPORT_SCHEMA_VERSION = 1


def evaluate(bundle: ModelBundle, batch: MultimodalBatch, fusion: FusionConfig,
             with_auc: bool = True, chunk: int = 4096) -> dict:
    preds, scores = [], []
    for start in range(0, len(batch), chunk):
        part = batch.subset(slice(start, start + chunk))
        p, s = predict(bundle, part, fusion)
        preds.append(p)
        scores.append(s)
    pred = np.concatenate(preds)
    score = np.concatenate(scores)
    out = {"error": error_rate(pred, batch.labels), "predictions": pred, "scores": score,
           "n_errors": int(np.sum(pred != batch.labels))}
    if with_auc and score.shape[1] == 2:
        try:
            out["auc"] = auc(score[:, 1] - score[:, 0], batch.labels)
        except UndefinedMetricError:
            out["auc"] = None
    return out


@dataclass
class MetricsReport:
    method: str
    error: float
    n_errors: int
    n_samples: int
    seed: int
    config_fingerprint: str
    dataset_fingerprint: str
    auc: float | None = None
    per_modality_errors: list[float] | None = None
    over_learn_error: float | None = None
    over_learn_n: int | None = None
    extra: dict = field(default_factory=dict)
    timestamp: str | None = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    def table(self) -> str:
        rows = [("method", self.method), ("error", f"{self.error:.4f}"),
                ("auc", "-" if self.auc is None else f"{self.auc:.4f}"),
                ("samples", str(self.n_samples)), ("seed", str(self.seed))]
        if self.per_modality_errors is not None:
            rows.append(("per-modality error",
                         ", ".join(f"{e:.4f}" for e in self.per_modality_errors)))
        if self.over_learn_error is not None:
            rows.append(("over-learn error", f"{self.over_learn_error:.4f} (n={self.over_learn_n})"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def metrics_report(bundle: ModelBundle, batch: MultimodalBatch, fusion: FusionConfig, *,
                   method: str, seed: int, config_fingerprint: str, dataset_fingerprint: str,
                   single_modality_predictions: np.ndarray | None = None) -> MetricsReport:
    """Evaluate on ``batch``; per-modality predictions come from the bundle's own
    heads when it has them, else from ``single_modality_predictions``."""
    res = evaluate(bundle, batch, fusion, with_auc=True)
    singles = single_modality_predictions
    if singles is None:
        singles = per_modality_predictions(bundle, batch)
    per_mod = ol = ol_n = None
    if singles is not None:
        per_mod = [error_rate(s, batch.labels) for s in singles]
        mask = qualifying_mask(singles, batch.labels)
        ol_n = int(mask.sum())
        try:
            ol = over_learn_error(res["predictions"], singles, batch.labels)
        except UndefinedMetricError:
            ol = None
    return MetricsReport(method=method, error=res["error"], n_errors=res["n_errors"],
                         n_samples=len(batch), seed=seed, config_fingerprint=config_fingerprint,
                         dataset_fingerprint=dataset_fingerprint, auc=res.get("auc"),
                         per_modality_errors=per_mod, over_learn_error=ol, over_learn_n=ol_n)


@dataclass
class SweepResult:
    key: str
    entries: list[tuple[float, float, float, int]]
    failures: list[dict] = field(default_factory=list)
    cells: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.key, "mean_err", "std_err", "n_seeds"])
        for value, mean, std, n in self.entries:
            w.writerow([value, repr(mean), repr(std), n])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, "key": self.key,
                "entries": [{self.key: v, "mean_err": _finite_or_none(m),
                             "std_err": _finite_or_none(s), "n_seeds": n}
                            for v, m, s, n in self.entries],
                "failures": self.failures}


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def aggregate(key: str, cells: dict[float, list[float]], failures=None) -> SweepResult:
    """Mean and sample standard deviation per grid value (std is NaN with one seed)."""
    entries = []
    for value in cells:
        errs = np.asarray(cells[value], dtype=np.float64)
        std = float(np.std(errs, ddof=1)) if errs.size >= 2 else math.nan
        mean = float(np.mean(errs)) if errs.size else math.nan
        entries.append((value, mean, std, int(errs.size)))
    return SweepResult(key, entries, list(failures or []))
