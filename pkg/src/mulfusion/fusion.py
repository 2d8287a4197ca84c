"""Fusion objectives and inference rules.

Inputs are per-modality feature matrices (one row per sample); a single sample
may also be passed as a list of 1-D vectors. Probabilities coming out of the
heads are clamped to ``[PROB_EPS, 1 - PROB_EPS]``, so every log and every
``1 - p`` factor below is finite.

Multiplicative combination, for M models with class probabilities p_i^k::

    q_i^k = [prod_{j != i} (1 - p_j^k)] ** (beta / (M - 1))
    loss^k = -sum_i w_i * q_i^k * log p_i^k

and the predicted class is the one with the smallest class loss. The product
is evaluated as ``exp(beta/(M-1) * sum_{j != i} log(1 - p_j))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .candidates import MixtureCandidate, enumerate_candidates
from .errors import ConfigError, NonFiniteError
from .models import FUSION_KINDS, ModelBundle, encode, predict_head
from .tensor import Tensor

__all__ = [
    "FusionConfig",
    "MixtureCandidate",
    "enumerate_candidates",
    "early_fusion_forward",
    "late_fusion_forward",
    "additive_embedding",
    "additive_forward",
    "modality_probabilities",
    "q_factor",
    "q_factors",
    "mul_class_losses",
    "predict_argmin",
    "boosted_gate",
    "mixture_embedding",
    "mixture_forward",
    "candidate_probabilities",
    "mulmix_class_losses",
    "class_losses",
    "per_sample_loss",
    "training_loss",
    "predict",
    "per_modality_predictions",
]

Q_MODES = ("full", "stop")
CIFAR_LOSS_WEIGHTS = (0.3, 0.3, 1.0)


@dataclass
class FusionConfig:
    kind: str = "mul"
    beta: float = 0.5
    delta: float = 0.0
    boosted: bool = False
    modality_loss_weights: tuple[float, ...] | None = None
    q_gradient_mode: str = "full"

    def violations(self) -> list[str]:
        out = []
        if self.kind not in FUSION_KINDS:
            out.append(f"fusion.kind: {self.kind!r} is not one of {list(FUSION_KINDS)}")
        if not 0.0 <= self.beta <= 1.0:
            out.append(f"fusion.beta: {self.beta} is outside the range [0, 1]")
        if self.delta < 0:
            out.append(f"fusion.delta: margin {self.delta} must be >= 0")
        if self.boosted and self.kind not in ("mul", "mulmix"):
            out.append(f"fusion.boosted: boosted training needs kind mul or mulmix, got {self.kind!r}")
        if self.q_gradient_mode not in Q_MODES:
            out.append(f"fusion.q_gradient_mode: {self.q_gradient_mode!r} is not one of {list(Q_MODES)}")
        if self.modality_loss_weights is not None and any(
                w < 0 for w in self.modality_loss_weights):
            out.append("fusion.modality_loss_weights: weights must be >= 0")
        return out

    def validate(self) -> "FusionConfig":
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["modality_loss_weights"] is not None:
            d["modality_loss_weights"] = list(d["modality_loss_weights"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        if d.get("modality_loss_weights") is not None:
            d["modality_loss_weights"] = tuple(float(w) for w in d["modality_loss_weights"])
        return cls(**d)


def _modalities(x) -> list:
    mods = getattr(x, "modalities", x)
    return list(mods)


def _batched(v) -> Tensor:
    v = T.as_tensor(v)
    return T.reshape(v, (1, -1)) if v.ndim == 1 else v


def _unbatch_like(out: Tensor, inputs: list) -> Tensor:
    if all(np.ndim(getattr(v, "data", v)) == 1 for v in inputs):
        return T.reshape(out, (out.shape[-1],))
    return out


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def early_fusion_forward(bundle: ModelBundle, sample) -> Tensor:
    """Single classifier over the concatenated raw modality vectors."""
    _expect(bundle, "early")
    xs = _modalities(sample)
    if len(xs) != bundle.n_modalities:
        raise T.ShapeError(f"expected {bundle.n_modalities} modalities, got {len(xs)}")
    joined = T.concat([_batched(v) for v in xs], axis=1)
    return _unbatch_like(predict_head(bundle, 0, joined), xs)


def modality_probabilities(bundle: ModelBundle, sample) -> list[Tensor]:
    """Per-modality probability vectors p_i = g_i(f_i(v_i)) (or g_i(v_i) on raw inputs)."""
    xs = _modalities(sample)
    if len(xs) != bundle.n_modalities:
        raise T.ShapeError(f"expected {bundle.n_modalities} modalities, got {len(xs)}")
    out = []
    for m, v in enumerate(xs):
        u = v if not bundle.encoders else encode(bundle, m, v)
        out.append(predict_head(bundle, m, u))
    return out


def late_fusion_forward(bundle: ModelBundle, sample) -> Tensor:
    """Arithmetic mean of the per-modality probability vectors."""
    _expect(bundle, "late", "mul")
    probs = modality_probabilities(bundle, sample)
    total = probs[0]
    for p in probs[1:]:
        total = T.add(total, p)
    return T.div(total, float(len(probs)))


def additive_embedding(bundle: ModelBundle, sample) -> Tensor:
    xs = _modalities(sample)
    if len(xs) != bundle.n_modalities:
        raise T.ShapeError(f"expected {bundle.n_modalities} modalities, got {len(xs)}")
    embeds = [encode(bundle, m, v) for m, v in enumerate(xs)]
    if bundle.spec.add_mode == "concat":
        return T.concat(embeds, axis=-1)
    u = embeds[0]
    for e in embeds[1:]:
        u = T.add(u, e)
    return u


def additive_forward(bundle: ModelBundle, sample) -> Tensor:
    """Shared head over the summed (or concatenated) modality embeddings."""
    _expect(bundle, "add")
    return predict_head(bundle, 0, additive_embedding(bundle, sample))


# ---------------------------------------------------------------------------
# multiplicative combination
# ---------------------------------------------------------------------------

def q_factor(probabilities: Sequence, k: int, i: int, beta: float):
    """Down-weighting factor of model ``i`` for class ``k``.

    ``probabilities`` holds one probability vector (or row-stacked matrix) per
    model. Returns 1 when there is a single model or ``beta == 0``.
    """
    M = len(probabilities)
    P = [np.asarray(getattr(p, "data", p), dtype=np.float64) for p in probabilities]
    ones = np.ones_like(P[0][..., k])
    if M == 1 or beta == 0:
        return ones if ones.ndim else 1.0
    prod = ones
    for j in range(M):
        if j != i:
            prod = prod * (1.0 - P[j][..., k])
    q = prod ** (beta / (M - 1))
    return q if np.ndim(q) else float(q)


def q_factors(probs: Sequence[Tensor], beta: float, mode: str = "full") -> list[Tensor] | None:
    """Differentiable q_i for every model and class; ``None`` means all ones."""
    M = len(probs)
    if M == 1 or beta == 0:
        return None
    if mode not in Q_MODES:
        raise ConfigError(f"q_gradient_mode must be one of {Q_MODES}, got {mode!r}")
    src = [T.detach(p) for p in probs] if mode == "stop" else list(probs)
    logs = [T.log(T.sub(1.0, p)) for p in src]
    total = logs[0]
    for lg in logs[1:]:
        total = T.add(total, lg)
    scale = beta / (M - 1)
    return [T.exp(T.mul(T.sub(total, lg), scale)) for lg in logs]


def mul_class_losses(probabilities: Sequence, beta: float,
                     weights: Sequence[float] | None = None,
                     q_gradient_mode: str = "full") -> Tensor:
    """Class losses of the multiplicative combination, for every class.

    Label-free: entry ``k`` is the loss the objective would place on class ``k``
    if it were the truth. Shape follows one probability input (``K`` or ``n x K``).
    """
    probs = [T.as_tensor(p) for p in probabilities]
    M = len(probs)
    if M == 0:
        raise ValueError("need at least one probability vector")
    if weights is not None and len(weights) != M:
        raise ConfigError(f"got {len(weights)} loss weights for {M} models")
    qs = q_factors(probs, beta, q_gradient_mode)
    total = None
    for i, p in enumerate(probs):
        term = T.log(p)
        if qs is not None:
            term = T.mul(qs[i], term)
        if weights is not None and weights[i] != 1.0:
            term = T.mul(term, float(weights[i]))
        total = term if total is None else T.add(total, term)
    return T.neg(total)


def predict_argmin(class_losses) -> np.ndarray | int:
    """Class with the smallest class loss; ties go to the lowest index."""
    L = np.asarray(getattr(class_losses, "data", class_losses), dtype=np.float64)
    if not np.all(np.isfinite(L)):
        raise NonFiniteError("class losses must be finite")
    pred = np.argmin(L, axis=-1)
    return int(pred) if pred.ndim == 0 else pred


def boosted_gate(class_losses, y, delta: float) -> np.ndarray | int:
    """1 where the true class beats every other class loss by more than ``delta``.

    Computed on values only; it enters the objective as a constant factor.
    """
    if delta < 0:
        raise ConfigError(f"margin delta must be >= 0, got {delta}")
    L = np.asarray(getattr(class_losses, "data", class_losses), dtype=np.float64)
    single = L.ndim == 1
    L2 = L.reshape(1, -1) if single else L
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.arange(L2.shape[0])
    target = L2[rows, y]
    others = L2.copy()
    others[rows, y] = np.inf
    gate = (target + delta < others.min(axis=1)).astype(np.int64)
    return int(gate[0]) if single else gate


# ---------------------------------------------------------------------------
# mixtures of modalities
# ---------------------------------------------------------------------------

def mixture_embedding(bundle: ModelBundle, sample, candidate: MixtureCandidate) -> Tensor:
    """u_c: sum of the (shared) encoder outputs over the candidate's modalities."""
    xs = _modalities(sample)
    cid = candidate.id
    u = None
    for m in candidate.members:
        e = encode(bundle, m, xs[m], candidate=cid)
        u = e if u is None else T.add(u, e)
    return u


def mixture_forward(bundle: ModelBundle, sample, candidate: MixtureCandidate) -> Tensor:
    _expect(bundle, "mulmix")
    if candidate.id >= len(bundle.candidates) or bundle.candidates[candidate.id] != candidate:
        raise ConfigError(f"candidate {candidate} does not belong to this bundle")
    return predict_head(bundle, candidate.id, mixture_embedding(bundle, sample, candidate))


def candidate_probabilities(bundle: ModelBundle, sample) -> list[Tensor]:
    """p_c for every mixture candidate, reusing each modality embedding once."""
    _expect(bundle, "mulmix")
    xs = _modalities(sample)
    if len(xs) != bundle.n_modalities:
        raise T.ShapeError(f"expected {bundle.n_modalities} modalities, got {len(xs)}")
    if not bundle.spec.shared_encoders:
        return [mixture_forward(bundle, xs, c) for c in bundle.candidates]
    embeds = [encode(bundle, m, v) for m, v in enumerate(xs)]
    out = []
    for c in bundle.candidates:
        u = embeds[c.members[0]]
        for m in c.members[1:]:
            u = T.add(u, embeds[m])
        out.append(predict_head(bundle, c.id, u))
    return out


def mulmix_class_losses(bundle: ModelBundle, sample, beta: float,
                        weights: Sequence[float] | None = None,
                        q_gradient_mode: str = "full") -> Tensor:
    """Multiplicative combination over all mixture candidates (exponent beta/(C-1))."""
    return mul_class_losses(candidate_probabilities(bundle, sample), beta, weights,
                            q_gradient_mode)


# ---------------------------------------------------------------------------
# objective and inference dispatch
# ---------------------------------------------------------------------------

def _expect(bundle: ModelBundle, *kinds: str) -> None:
    if bundle.kind not in kinds:
        raise ConfigError(f"operation needs a bundle of kind {' or '.join(kinds)}, "
                          f"got {bundle.kind!r}")


def _weights_for(config: FusionConfig, n_models: int):
    w = config.modality_loss_weights
    if w is None:
        return None
    if len(w) != n_models:
        raise ConfigError(f"modality_loss_weights has {len(w)} entries, "
                          f"objective combines {n_models} models")
    return w


def class_losses(bundle: ModelBundle, sample, config: FusionConfig) -> Tensor:
    """Class-loss matrix for the label-free argmin rule (late, mul, mulmix)."""
    if bundle.kind == "mulmix":
        probs = candidate_probabilities(bundle, sample)
        return mul_class_losses(probs, config.beta, _weights_for(config, len(probs)),
                                config.q_gradient_mode)
    if bundle.kind in ("mul", "late"):
        probs = modality_probabilities(bundle, sample)
        beta = config.beta if bundle.kind == "mul" else 0.0
        return mul_class_losses(probs, beta, _weights_for(config, len(probs)),
                                config.q_gradient_mode)
    raise ConfigError(f"class losses are not defined for kind {bundle.kind!r}")


def _pick(matrix: Tensor, y: np.ndarray) -> Tensor:
    return T.take(matrix, (np.arange(matrix.shape[0]), y))


def per_sample_loss(bundle: ModelBundle, sample, labels, config: FusionConfig) -> Tensor:
    """Vector of per-sample objectives (before batch averaging)."""
    xs = [_batched(v) for v in _modalities(sample)]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    kind = bundle.kind
    if kind in ("early", "add"):
        p = early_fusion_forward(bundle, xs) if kind == "early" else additive_forward(bundle, xs)
        return T.neg(T.log(_pick(p, y)))
    L = class_losses(bundle, xs, config)
    target = _pick(L, y)
    if config.boosted:
        keep = 1.0 - boosted_gate(L.data, y, config.delta)
        target = T.mul(target, keep.astype(np.float64))
    return target


def training_loss(bundle: ModelBundle, batch, config: FusionConfig, labels=None) -> Tensor:
    """Mean per-sample objective over a batch; differentiable end to end.

    ``batch`` is a MultimodalBatch, or per-modality matrices with ``labels``.
    """
    if labels is None:
        labels = batch.labels
    y = np.atleast_1d(np.asarray(labels))
    if y.size == 0:
        raise ValueError("training_loss: empty batch")
    if config.kind != bundle.kind:
        raise ConfigError(f"fusion kind {config.kind!r} does not match bundle kind {bundle.kind!r}")
    return T.mean(per_sample_loss(bundle, batch, y, config))


def predict(bundle: ModelBundle, sample, config: FusionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predicted classes and a per-sample score matrix.

    Scores are probabilities for early/add/late and negated class losses for
    mul/mulmix, so larger always means more likely; column 1 serves as the
    positive-class score for AUC.
    """
    xs = [_batched(v) for v in _modalities(sample)]
    kind = bundle.kind
    if kind == "early":
        scores = early_fusion_forward(bundle, xs).data
    elif kind == "add":
        scores = additive_forward(bundle, xs).data
    elif kind == "late":
        scores = late_fusion_forward(bundle, xs).data
    else:
        L = class_losses(bundle, xs, config).data
        return predict_argmin(L), -L
    return np.argmax(scores, axis=1), scores


def per_modality_predictions(bundle: ModelBundle, sample) -> np.ndarray | None:
    """(M, n) single-modality predictions from the bundle's own per-modality heads.

    Available for late/mul (one head per modality) and mulmix (singleton
    candidates); ``None`` for early/add.
    """
    xs = [_batched(v) for v in _modalities(sample)]
    if bundle.kind in ("late", "mul"):
        probs = modality_probabilities(bundle, xs)
    elif bundle.kind == "mulmix":
        singles = [c for c in bundle.candidates if len(c.members) == 1]
        probs = [mixture_forward(bundle, xs, c) for c in singles]
    else:
        return None
    return np.stack([np.argmax(p.data, axis=1) for p in probs])
