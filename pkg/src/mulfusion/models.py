"""Per-modality encoders, prediction heads and the parameter bundle.

Head layout by fusion kind:

=========  ==========================  =====================
kind       encoders                    heads
=========  ==========================  =====================
early      none                        1, on concatenated raw inputs
add        one per modality            1, on sum (or concat) of embeddings
late, mul  one per modality            M, one per modality
mulmix     one per modality (shared)   2^M - 1, one per mixture candidate
=========  ==========================  =====================
"""

from __future__ import annotations

import io
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from ._io import atomic_write_bytes
from .candidates import DEFAULT_MAX_MODALITIES, MixtureCandidate, enumerate_candidates
from .errors import ConfigError
from .tensor import Tensor

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1
FUSION_KINDS = ("early", "late", "add", "mul", "mulmix")
ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = ()
    activation: str = "relu"


@dataclass(frozen=True)
class HeadSpec:
    input_dim: int
    n_classes: int
    hidden: tuple[int, ...] = (64,)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture shared by every fusion kind.

    ``heads_on_raw`` makes late/mul heads read the raw modality vector instead
    of an encoder output. ``shared_encoders=False`` gives each mixture
    candidate its own encoders (mulmix only).
    """

    modality_dims: tuple[int, ...]
    n_classes: int = 2
    embed_dim: int = 32
    encoder_hidden: tuple[int, ...] = ()
    head_hidden: tuple[int, ...] = (64,)
    activation: str = "relu"
    add_mode: str = "sum"
    heads_on_raw: bool = False
    shared_encoders: bool = True
    max_modalities: int = DEFAULT_MAX_MODALITIES

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("modality_dims", "encoder_hidden", "head_hidden"):
            if key in d:
                d[key] = tuple(int(x) for x in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("modality_dims", "encoder_hidden", "head_hidden"):
            d[key] = list(d[key])
        return d


class Dense:
    def __init__(self, W: Tensor, b: Tensor):
        self.W = W
        self.b = b

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.W), self.b)


class MLP:
    """Dense layers with ReLU in between; ``out_act`` decides the last activation."""

    def __init__(self, layers: list[Dense], out_act: str):
        self.layers = layers
        self.out_act = out_act

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.out_act == "relu":
                x = T.relu(x)
        return x


@dataclass
class ModelBundle:
    kind: str
    spec: ModelSpec
    encoder_specs: list[EncoderSpec]
    head_specs: list[HeadSpec]
    encoders: dict = field(default_factory=dict)
    heads: list[MLP] = field(default_factory=list)
    params: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)
    candidates: list[MixtureCandidate] = field(default_factory=list)
    seed: int | None = None

    @property
    def n_modalities(self) -> int:
        return len(self.spec.modality_dims)

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def weight_names(self) -> list[str]:
        return [name for name in self.params if name.endswith(".W")]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def encoder(self, m: int, candidate: int | None = None) -> MLP:
        key = m if (candidate is None or self.spec.shared_encoders) else (candidate, m)
        return self.encoders[key]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"state dict keys differ from bundle: {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ConfigError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _check_dims(name: str, dims) -> None:
    for d in dims:
        if int(d) <= 0:
            raise ConfigError(f"{name}: layer sizes must be positive, got {list(dims)}")


def _layer_sizes(input_dim: int, hidden, output_dim: int) -> list[int]:
    return [int(input_dim), *[int(h) for h in hidden], int(output_dim)]


def layout(spec: ModelSpec, kind: str) -> tuple[dict, list[HeadSpec], list[MixtureCandidate]]:
    """Encoder keys/specs and head specs for a fusion kind, without allocating weights."""
    if kind not in FUSION_KINDS:
        raise ConfigError(f"unknown fusion kind {kind!r}; expected one of {FUSION_KINDS}")
    if spec.activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {spec.activation!r}; expected one of {ACTIVATIONS}")
    if spec.add_mode not in ("sum", "concat"):
        raise ConfigError(f"add_mode must be 'sum' or 'concat', got {spec.add_mode!r}")
    if spec.n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {spec.n_classes}")
    if not spec.modality_dims:
        raise ConfigError("at least one modality is required")
    _check_dims("modality_dims", spec.modality_dims)
    _check_dims("encoder_hidden", spec.encoder_hidden)
    _check_dims("head_hidden", spec.head_hidden)
    _check_dims("embed_dim", [spec.embed_dim])

    M, d, K = len(spec.modality_dims), spec.embed_dim, spec.n_classes
    enc = {m: EncoderSpec(spec.modality_dims[m], d, spec.encoder_hidden, spec.activation)
           for m in range(M)}
    candidates: list[MixtureCandidate] = []
    if kind == "early":
        enc = {}
        heads = [HeadSpec(sum(spec.modality_dims), K, spec.head_hidden)]
    elif kind == "add":
        heads = [HeadSpec(d if spec.add_mode == "sum" else M * d, K, spec.head_hidden)]
    elif kind in ("late", "mul"):
        if spec.heads_on_raw:
            enc = {}
            heads = [HeadSpec(spec.modality_dims[m], K, spec.head_hidden) for m in range(M)]
        else:
            heads = [HeadSpec(d, K, spec.head_hidden) for _ in range(M)]
    else:
        candidates = enumerate_candidates(M, spec.max_modalities)
        heads = [HeadSpec(d, K, spec.head_hidden) for _ in candidates]
        if not spec.shared_encoders:
            enc = {(c.id, m): enc[m] for c in candidates for m in c.members}
    return enc, heads, candidates


def _init_mlp(rng: np.random.Generator, prefix: str, sizes: list[int], out_act: str,
              registry: OrderedDict) -> MLP:
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        W = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True,
                   name=f"{prefix}.l{i}.W")
        b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.l{i}.b")
        registry[W.name] = W
        registry[b.name] = b
        layers.append(Dense(W, b))
    return MLP(layers, out_act)


def _encoder_prefix(key) -> str:
    return f"enc{key}" if isinstance(key, int) else f"enc{key[1]}@cand{key[0]}"


def init_bundle(spec: ModelSpec, kind: str, seed: int = 0) -> ModelBundle:
    """Allocate a bundle with He-uniform weights, U(+-sqrt(6/fan_in)), and zero biases."""
    enc_specs, head_specs, candidates = layout(spec, kind)
    rng = np.random.default_rng(seed)
    registry: OrderedDict[str, Tensor] = OrderedDict()
    encoders = {}
    for key, es in enc_specs.items():
        sizes = _layer_sizes(es.input_dim, es.hidden, es.output_dim)
        encoders[key] = _init_mlp(rng, _encoder_prefix(key), sizes, es.activation, registry)
    heads = []
    for h, hs in enumerate(head_specs):
        sizes = _layer_sizes(hs.input_dim, hs.hidden, hs.n_classes)
        heads.append(_init_mlp(rng, f"head{h}", sizes, "linear", registry))
    return ModelBundle(kind=kind, spec=spec, encoder_specs=list(enc_specs.values()),
                       head_specs=head_specs, encoders=encoders, heads=heads,
                       params=registry, candidates=candidates, seed=seed)


def _as_batch(v, expected_dim: int, what: str) -> tuple[Tensor, bool]:
    v = T.as_tensor(v)
    single = v.ndim == 1
    if single:
        v = T.reshape(v, (1, -1))
    if v.ndim != 2 or v.shape[1] != expected_dim:
        raise T.ShapeError(f"{what}: expected input dimension {expected_dim}, got shape {v.shape}")
    return v, single


def encode(bundle: ModelBundle, m: int, v, candidate: int | None = None) -> Tensor:
    """Embedding f_m(v_m) for one sample (1-D) or a batch (rows)."""
    M = bundle.n_modalities
    if not 0 <= m < M:
        raise IndexError(f"modality index {m} out of range for {M} modalities")
    if not bundle.encoders:
        raise ConfigError(f"a {bundle.kind!r} bundle has no encoders")
    enc = bundle.encoder(m, candidate)
    x, single = _as_batch(v, enc.input_dim, f"encode(modality {m})")
    out = enc(x)
    return T.reshape(out, (out.shape[1],)) if single else out


def predict_head(bundle: ModelBundle, h: int, u, eps: float = PROB_EPS) -> Tensor:
    """Class probabilities from head ``h``, clamped to [eps, 1 - eps]."""
    if not 0 <= h < len(bundle.heads):
        raise IndexError(f"head index {h} out of range for {len(bundle.heads)} heads")
    head = bundle.heads[h]
    x, single = _as_batch(u, head.input_dim, f"predict_head({h})")
    p = T.clip(T.softmax(head(x)), eps, 1.0 - eps)
    return T.reshape(p, (p.shape[1],)) if single else p


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(bundle: ModelBundle, path, extra: dict | None = None) -> None:
    meta = {
        "format": "mulfusion-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": bundle.kind,
        "spec": bundle.spec.to_dict(),
        "seed": bundle.seed,
        "param_names": list(bundle.params),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    arrays = {f"p{i}": p.data for i, p in enumerate(bundle.params.values())}
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != "mulfusion-checkpoint":
            raise ConfigError(f"{path}: not a mulfusion checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: checkpoint version {meta['version']} is newer than "
                              f"supported version {CHECKPOINT_VERSION}")
        state = {name: z[f"p{i}"] for i, name in enumerate(meta["param_names"])}
    bundle = init_bundle(ModelSpec.from_dict(meta["spec"]), meta["kind"], meta["seed"] or 0)
    bundle.load_state_dict(state)
    return bundle, meta.get("extra", {})
