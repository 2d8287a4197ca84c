"""Datasets: delimited files in the HIGGS layout and a synthetic weak-modality generator.

Delimited files are comma-separated with the label in the first column and an
optional header. Splits are taken by row order: the last ``test_rows`` rows are
the test set, the ``dev_rows`` rows before them the dev set, the rest is train.
Shuffling only ever happens inside the training split.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._io import atomic_write_json, atomic_write_text
from .errors import ConfigError, DataError

HIGGS_MODALITIES = (tuple(range(1, 22)), tuple(range(22, 29)))


@dataclass
class MultimodalBatch:
    modalities: list[np.ndarray]
    labels: np.ndarray
    ids: np.ndarray | None = None  # defaults to row numbers

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = len(self.labels)
        rows = [len(x) for x in self.modalities]
        if any(r != n for r in rows) or len(self.ids) != n:
            raise DataError(f"row counts disagree: modalities {rows}, labels {n}, ids {len(self.ids)}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    def subset(self, index) -> "MultimodalBatch":
        return MultimodalBatch([x[index] for x in self.modalities], self.labels[index],
                               self.ids[index])

    def select_modalities(self, which) -> "MultimodalBatch":
        return MultimodalBatch([self.modalities[m] for m in which], self.labels, self.ids)

    def minibatches(self, batch_size: int, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield self.subset(order[start:start + batch_size])


@dataclass
class Dataset:
    train: MultimodalBatch
    dev: MultimodalBatch
    test: MultimodalBatch
    n_classes: int
    fingerprint: str
    # diagnostics only (e.g. which modality carried the signal); never fed to models
    side_info: dict = field(default_factory=dict)
    norm_stats: list | None = None

    @property
    def modality_dims(self) -> tuple[int, ...]:
        return tuple(x.shape[1] for x in self.train.modalities)

    def select_modalities(self, which) -> "Dataset":
        return Dataset(self.train.select_modalities(which), self.dev.select_modalities(which),
                       self.test.select_modalities(which), self.n_classes,
                       self.fingerprint, self.side_info, self.norm_stats)


@dataclass
class SyntheticSpec:
    n_samples: int = 6000
    n_classes: int = 2
    n_modalities: int = 3
    dim: int = 8
    separation: float = 3.29
    noise_std: float = 1.0
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        for name in ("n_samples", "n_classes", "n_modalities", "dim"):
            if getattr(self, name) <= 0:
                out.append(f"data.synthetic.{name}: must be positive")
        if self.n_classes < 2:
            out.append("data.synthetic.n_classes: need at least 2 classes")
        if self.separation <= 0:
            out.append("data.synthetic.separation: must be > 0")
        if self.noise_std < 0:
            out.append("data.synthetic.noise_std: must be >= 0")
        return out


@dataclass
class DatasetSpec:
    """Where data comes from and how it is cut into modalities and splits.

    ``modality_columns`` index file columns (the label is column ``label_column``).
    For synthetic data the partition is implied by the generator.
    """

    source: str = "synthetic"
    path: str | None = None
    modality_columns: list[list[int]] | None = None
    label_column: int = 0
    header: bool | None = None
    test_rows: int | None = None
    dev_rows: int | None = None
    test_fraction: float = 0.2
    dev_fraction: float = 0.1
    train_subsample: float = 1.0
    normalization: str = "zscore"
    max_rows: int | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        if isinstance(d.get("synthetic"), dict):
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        if d.get("modality_columns") == "higgs":
            d["modality_columns"] = [list(c) for c in HIGGS_MODALITIES]
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def violations(self) -> list[str]:
        out = []
        if self.source not in ("file", "synthetic"):
            out.append(f"data.source: {self.source!r} is not 'file' or 'synthetic'")
        if self.normalization not in ("none", "zscore"):
            out.append(f"data.normalization: {self.normalization!r} is not 'none' or 'zscore'")
        if not 0 < self.train_subsample <= 1:
            out.append("data.train_subsample: must be in (0, 1]")
        for name in ("test_fraction", "dev_fraction"):
            if not 0 <= getattr(self, name) < 1:
                out.append(f"data.{name}: must be in [0, 1)")
        if self.source == "file":
            if not self.path:
                out.append("data.path: required when source is 'file'")
            if not self.modality_columns:
                out.append("data.modality_columns: required when source is 'file'")
            else:
                seen: set[int] = set()
                for cols in self.modality_columns:
                    if not cols:
                        out.append("data.modality_columns: empty modality")
                    overlap = seen.intersection(cols)
                    if overlap:
                        out.append(f"data.modality_columns: columns {sorted(overlap)} "
                                   "appear in more than one modality")
                    seen.update(cols)
                if self.label_column in seen:
                    out.append(f"data.modality_columns: label column {self.label_column} "
                               "is used as a feature")
        else:
            out.extend(self.synthetic.violations())
        return out

    def n_modalities(self) -> int:
        if self.source == "file":
            return len(self.modality_columns or [])
        return self.synthetic.n_modalities

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# splitting and normalization
# ---------------------------------------------------------------------------

def split_rows(n: int, spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_test = spec.test_rows if spec.test_rows is not None else int(round(n * spec.test_fraction))
    n_dev = spec.dev_rows if spec.dev_rows is not None else int(round(n * spec.dev_fraction))
    if n_test + n_dev >= n:
        raise ConfigError(f"split sizes test={n_test}, dev={n_dev} leave no training rows "
                          f"out of {n}")
    idx = np.arange(n)
    return idx[:n - n_test - n_dev], idx[n - n_test - n_dev:n - n_test], idx[n - n_test:]


def zscore_stats(train: MultimodalBatch) -> list[tuple[np.ndarray, np.ndarray]]:
    stats = []
    for x in train.modalities:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        stats.append((mu, np.where(sd > 0, sd, 1.0)))
    return stats


def apply_zscore(batch: MultimodalBatch, stats) -> MultimodalBatch:
    mods = [(x - mu) / sd for x, (mu, sd) in zip(batch.modalities, stats)]
    return MultimodalBatch(mods, batch.labels, batch.ids)


def _finish(features: list[np.ndarray], labels: np.ndarray, spec: DatasetSpec,
            side_info: dict, n_classes: int | None = None, seed: int = 0) -> Dataset:
    n = len(labels)
    ids = np.arange(n)
    full = MultimodalBatch(features, labels, ids)
    tr, dv, te = split_rows(n, spec)
    train, dev, test = full.subset(tr), full.subset(dv), full.subset(te)
    if spec.train_subsample < 1.0:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(train), size=max(1, int(len(train) * spec.train_subsample)),
                                  replace=False))
        train = train.subset(keep)
    stats = None
    if spec.normalization == "zscore":
        stats = zscore_stats(train)
        train, dev, test = (apply_zscore(b, stats) for b in (train, dev, test))
    K = n_classes if n_classes is not None else int(labels.max()) + 1
    return Dataset(train, dev, test, max(K, 2), spec.fingerprint(), side_info,
                   [(mu.tolist(), sd.tolist()) for mu, sd in stats] if stats else None)


# ---------------------------------------------------------------------------
# delimited files
# ---------------------------------------------------------------------------

def _looks_like_header(line: str) -> bool:
    first = line.split(",")[0].strip()
    try:
        float(first)
        return False
    except ValueError:
        return True


def _parse_rows(path: Path, header: bool | None, max_rows: int | None) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline()
    if not first:
        raise DataError(f"{path}: file is empty")
    skip = int(_looks_like_header(first) if header is None else header)
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=skip, max_rows=max_rows, ndmin=2,
                         dtype=np.float64)
    except ValueError:
        arr = None
    if arr is not None and np.all(np.isfinite(arr)):
        return arr
    # slow pass to report the offending line
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno <= skip or not line.strip():
                continue
            if max_rows is not None and lineno - skip > max_rows:
                break
            cells = line.rstrip("\n").split(",")
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(cells)}")
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in row {line.strip()[:80]!r}") \
                    from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
    raise DataError(f"{path}: could not parse file")


def load_delimited(path, spec: DatasetSpec) -> Dataset:
    """Read a comma-separated file and cut it into modalities and row-ordered splits.

    Normalization statistics come from the training split only.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    problems = [p for p in spec.violations() if not p.startswith("data.path")]
    if problems:
        raise ConfigError(problems)
    arr = _parse_rows(path, spec.header, spec.max_rows)
    width = arr.shape[1]
    used = [c for cols in spec.modality_columns for c in cols] + [spec.label_column]
    bad = [c for c in used if not 0 <= c < width]
    if bad:
        raise ConfigError(f"columns {sorted(set(bad))} are outside the file's {width} columns")
    raw_labels = arr[:, spec.label_column]
    if np.any(raw_labels != np.round(raw_labels)) or np.any(raw_labels < 0):
        raise DataError(f"{path}: labels must be non-negative integers")
    labels = raw_labels.astype(np.int64)
    features = [arr[:, list(cols)].copy() for cols in spec.modality_columns]
    return _finish(features, labels, spec, {"path": str(path)}, seed=spec.synthetic.seed)


# ---------------------------------------------------------------------------
# synthetic weak-modality data
# ---------------------------------------------------------------------------

def class_centroids(spec: SyntheticSpec) -> np.ndarray:
    """Array (M, K, dim): per modality, K centroids with pairwise distance ``separation``.

    Centroids are ``separation / sqrt(2)`` times orthonormal directions when
    K <= dim; otherwise random Gaussian directions scaled to the same norm.
    """
    rng = np.random.default_rng([spec.seed, 1])
    M, K, d = spec.n_modalities, spec.n_classes, spec.dim
    out = np.empty((M, K, d))
    for m in range(M):
        if K <= d:
            q, _ = np.linalg.qr(rng.normal(size=(d, K)))
            dirs = q.T
        else:
            dirs = rng.normal(size=(K, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        out[m] = dirs * spec.separation / np.sqrt(2.0)
    return out


def _draw(spec: SyntheticSpec, n: int, rng: np.random.Generator, centroids: np.ndarray):
    M, K, d = spec.n_modalities, spec.n_classes, spec.dim
    y = rng.integers(0, K, size=n)
    informative = rng.integers(0, M, size=n)
    X = rng.normal(scale=spec.noise_std, size=(M, n, d))
    rows = np.arange(n)
    X[informative, rows] += centroids[informative, y]
    return X, y, informative


def generate_synthetic(spec: SyntheticSpec | DatasetSpec) -> Dataset:
    """One informative modality per sample (uniform); the others are pure noise.

    The informative modality's vector is its class centroid plus N(0, noise_std^2)
    noise. ``side_info['informative']`` records the informative modality of every
    sample for diagnostics.
    """
    dspec = spec if isinstance(spec, DatasetSpec) else DatasetSpec(source="synthetic",
                                                                   synthetic=spec)
    s = dspec.synthetic
    problems = s.violations()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng([s.seed, 0])
    centroids = class_centroids(s)
    X, y, informative = _draw(s, s.n_samples, rng, centroids)
    side = {"informative": informative, "centroids": centroids}
    return _finish([X[m] for m in range(s.n_modalities)], y, dspec, side,
                   n_classes=s.n_classes, seed=s.seed)


def bayes_rate(spec: SyntheticSpec, n_draws: int = 100_000, seed: int = 12345) -> float:
    """Monte-Carlo error of the oracle that knows which modality is informative.

    With equal isotropic noise and a uniform prior, nearest centroid on that
    modality is the Bayes rule.
    """
    centroids = class_centroids(spec)
    if spec.noise_std == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    X, y, informative = _draw(spec, n_draws, rng, centroids)
    v = X[informative, np.arange(n_draws)]
    dist = ((v[:, None, :] - centroids[informative]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(dist, axis=1) != y))


def bayes_rate_binary(spec: SyntheticSpec) -> float:
    """Closed form for K = 2: Phi(-separation / (2 * noise_std))."""
    if spec.n_classes != 2:
        raise ValueError("closed form only for two classes")
    if spec.noise_std == 0:
        return 0.0
    return float(ndtr(-spec.separation / (2.0 * spec.noise_std)))


def export_synthetic(dataset_spec: DatasetSpec, path) -> tuple[Path, Path]:
    """Write the generated data as CSV (label first) plus a JSON sidecar.

    Rows are written in generation order, so reloading the CSV with the same
    split settings reproduces the splits.
    """
    s = dataset_spec.synthetic
    rng = np.random.default_rng([s.seed, 0])
    centroids = class_centroids(s)
    X, y, informative = _draw(s, s.n_samples, rng, centroids)
    table = np.column_stack([y.astype(np.float64)] + [X[m] for m in range(s.n_modalities)])
    path = Path(path)
    header = ["label"] + [f"m{m}_{j}" for m in range(s.n_modalities) for j in range(s.dim)]
    lines = [",".join(header)]
    lines.extend(",".join([str(int(r[0]))] + [repr(float(v)) for v in r[1:]]) for r in table)
    atomic_write_text(path, "\n".join(lines) + "\n")
    cols = [list(range(1 + m * s.dim, 1 + (m + 1) * s.dim)) for m in range(s.n_modalities)]
    sidecar = path.with_suffix(path.suffix + ".json")
    atomic_write_json(sidecar, {
        "format": "mulfusion-synthetic",
        "version": 1,
        "spec": asdict(s),
        "modality_columns": cols,
        "label_column": 0,
        "informative_modality": informative.tolist(),
        "bayes_rate": bayes_rate(s),
    })
    return path, sidecar


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.source == "file":
        return load_delimited(spec.path, spec)
    return generate_synthetic(spec)
