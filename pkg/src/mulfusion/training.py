"""SGD-momentum / Adam training with L2 weight decay, clipping and early stopping."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, MultimodalBatch
from .errors import ConfigError, DivergenceError, NonFiniteError
from .evaluation import evaluate
from .fusion import FusionConfig, training_loss
from .models import ModelBundle

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd-momentum", "adam")


@dataclass
class OptimizerConfig:
    kind: str = "sgd-momentum"
    lr: float = 0.05
    momentum: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 2e-5
    clip_norm: float | None = None
    # piecewise-constant schedule: [(iteration, rate), ...] switching at those iterations
    schedule: list[tuple[int, float]] | None = None
    # multiplicative per-epoch decay, used when no schedule is given
    lr_decay: float = 1.0
    batch_size: int = 100
    max_epochs: int = 50
    max_iterations: int | None = None
    eval_every: int | None = None
    patience: int = 15
    dev_metric: str = "error"

    def violations(self) -> list[str]:
        out = []
        if self.kind not in OPTIMIZERS:
            out.append(f"optimizer.kind: {self.kind!r} is not one of {list(OPTIMIZERS)}")
        if self.lr < 0:
            out.append("optimizer.lr: must be >= 0")
        if not 0 <= self.momentum < 1:
            out.append("optimizer.momentum: must be in [0, 1)")
        if self.weight_decay < 0:
            out.append("optimizer.weight_decay: must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            out.append("optimizer.clip_norm: must be > 0 when set")
        if not 0 < self.lr_decay <= 1:
            out.append("optimizer.lr_decay: must be in (0, 1]")
        if self.batch_size <= 0:
            out.append("optimizer.batch_size: must be positive")
        if self.max_epochs <= 0:
            out.append("optimizer.max_epochs: must be positive")
        if self.patience <= 0:
            out.append("optimizer.patience: must be positive")
        if self.dev_metric not in ("error", "auc"):
            out.append("optimizer.dev_metric: must be 'error' or 'auc'")
        for it, rate in self.schedule or []:
            if rate <= 0 or it < 0:
                out.append(f"optimizer.schedule: bad step ({it}, {rate})")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        if self.schedule is not None:
            d["schedule"] = [list(s) for s in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        if d.get("schedule") is not None:
            d["schedule"] = [(int(i), float(r)) for i, r in d["schedule"]]
        return cls(**d)


@dataclass
class TrainState:
    iteration: int = 0
    epoch: int = 0
    buffers: dict = field(default_factory=dict)
    best_metric: float | None = None
    best_iteration: int | None = None
    evals_since_improvement: int = 0


@dataclass
class TrainLog:
    rows: list[tuple] = field(default_factory=list)
    stopped_early: bool = False
    best_iteration: int | None = None

    HEADER = ("iteration", "epoch", "train_loss", "dev_error", "dev_auc")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for row in self.rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]),
                        "" if row[4] is None else repr(row[4])])
        return buf.getvalue()


def learning_rate(cfg: OptimizerConfig, state: TrainState) -> float:
    if cfg.schedule:
        rate = cfg.lr
        for it, r in sorted(cfg.schedule):
            if state.iteration >= it:
                rate = r
        return rate
    return cfg.lr * cfg.lr_decay ** state.epoch


def apply_gradients(bundle: ModelBundle, cfg: OptimizerConfig, state: TrainState) -> None:
    """Update parameters in place from their ``.grad`` (missing grads count as zero)."""
    lr = learning_rate(cfg, state)
    grads = {}
    for name, p in bundle.params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if cfg.weight_decay and name.endswith(".W"):
            g += cfg.weight_decay * p.data
        grads[name] = g
    if cfg.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            for g in grads.values():
                g *= scale
    t = state.iteration + 1
    for name, p in bundle.params.items():
        g = grads[name]
        if cfg.kind == "sgd-momentum":
            v = state.buffers.get(name)
            v = g if v is None else cfg.momentum * v + g
            state.buffers[name] = v
            p.data -= lr * v
        else:
            b1, b2 = cfg.adam_betas
            m, s = state.buffers.get(name, (np.zeros_like(g), np.zeros_like(g)))
            m = b1 * m + (1 - b1) * g
            s = b2 * s + (1 - b2) * g * g
            state.buffers[name] = (m, s)
            m_hat = m / (1 - b1**t)
            s_hat = s / (1 - b2**t)
            p.data -= lr * m_hat / (np.sqrt(s_hat) + cfg.adam_eps)


def step(bundle: ModelBundle, batch: MultimodalBatch, fusion: FusionConfig,
         opt: OptimizerConfig, state: TrainState) -> float:
    """One forward/backward/update cycle; returns the batch loss before the update."""
    bundle.zero_grad()
    loss = training_loss(bundle, batch, fusion)
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(state.iteration, value)
    T.backward(loss)
    apply_gradients(bundle, opt, state)
    state.iteration += 1
    return value


def _improved(metric: str, new: float, best: float | None) -> bool:
    if best is None:
        return True
    return new < best if metric == "error" else new > best


def train(bundle: ModelBundle, dataset: Dataset, fusion: FusionConfig,
          opt: OptimizerConfig, seed: int = 0) -> tuple[ModelBundle, TrainLog]:
    """Train with seeded shuffling; return the best-dev parameters and the log.

    Dev evaluation happens every ``eval_every`` iterations (once per epoch by
    default); training stops after ``patience`` evaluations without improvement.
    """
    problems = opt.violations() + fusion.violations()
    if problems:
        raise ConfigError(problems)
    if len(dataset.train) == 0 or len(dataset.dev) == 0:
        raise ConfigError("train and dev splits must be non-empty")
    rng = np.random.default_rng(seed)
    state = TrainState()
    trace = TrainLog()
    best_state = bundle.state_dict()
    running: list[float] = []

    def evaluate_dev() -> bool:
        if not all(np.all(np.isfinite(p.data)) for p in bundle.parameters()):
            raise DivergenceError(state.iteration, float("nan"),
                                  f"parameters non-finite, epoch {state.epoch}, kind {fusion.kind}, "
                                  f"seed {seed}")
        try:
            dev = evaluate(bundle, dataset.dev, fusion, with_auc=dataset.n_classes == 2)
        except NonFiniteError:
            raise DivergenceError(state.iteration, float("nan"),
                                  f"dev losses non-finite, epoch {state.epoch}, kind {fusion.kind}, "
                                  f"seed {seed}") from None
        metric = dev["error"] if opt.dev_metric == "error" else dev["auc"]
        train_loss = float(np.mean(running)) if running else float("nan")
        trace.rows.append((state.iteration, state.epoch, train_loss, dev["error"], dev.get("auc")))
        running.clear()
        if _improved(opt.dev_metric, metric, state.best_metric):
            state.best_metric = metric
            state.best_iteration = state.iteration
            state.evals_since_improvement = 0
            best_state.update(bundle.state_dict())
        else:
            state.evals_since_improvement += 1
        return state.evals_since_improvement >= opt.patience

    done = False
    while not done and state.epoch < opt.max_epochs:
        for batch in dataset.train.minibatches(opt.batch_size, rng):
            try:
                running.append(step(bundle, batch, fusion, opt, state))
            except DivergenceError as err:
                raise DivergenceError(err.iteration, err.loss,
                                      f"epoch {state.epoch}, kind {fusion.kind}, seed {seed}") from None
            if opt.eval_every and state.iteration % opt.eval_every == 0:
                done = evaluate_dev()
            if opt.max_iterations is not None and state.iteration >= opt.max_iterations:
                done = True
            if done:
                break
        state.epoch += 1
        if not done and not opt.eval_every:
            done = evaluate_dev()
        if done and running:
            evaluate_dev()
    trace.stopped_early = state.evals_since_improvement >= opt.patience
    trace.best_iteration = state.best_iteration
    bundle.load_state_dict(best_state)
    log.debug("trained %s: %d iterations, best dev %s at %s", fusion.kind, state.iteration,
              state.best_metric, state.best_iteration)
    return bundle, trace
