"""Central finite-difference gradient checking against the tape engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError
from .tensor import Tensor, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    h: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        lines = [f"gradcheck h={self.h:g} tol={self.tol:g}: {'PASS' if self.passed else 'FAIL'}"]
        for p in self.params:
            lines.append(f"  {p.name}: max rel err {p.max_rel_error:.3e} at {p.worst_index} "
                         f"(analytic {p.analytic:.6g}, numeric {p.numeric:.6g})")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
    turning round-off into huge relative errors."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise ValueError(f"objective must be scalar, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteError(f"objective evaluated to {v}")
    return v


def numeric_gradient(f: Callable[[], object], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. each element of ``param`` (perturbed in place)."""
    if h <= 0:
        raise ValueError("step h must be positive")
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        try:
            f_plus = _scalar(f())
            flat[i] = orig - h
            f_minus = _scalar(f())
        except NonFiniteError as err:
            raise NonFiniteError(f"{err} while perturbing element {i} of "
                                 f"{param.name or 'param'}") from None
        finally:
            flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    loss = f()
    _scalar(loss)
    grads = backward(loss, params=params)
    return [g.copy() for g in grads]


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            h: float = 1e-5, tol: float = 1e-4,
                            floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current values of ``params`` on every
    call. The report holds the worst element per parameter.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    report = GradCheckReport(tol=tol, h=h)
    analytic = analytic_gradients(f, params)
    for k, (p, a) in enumerate(zip(params, analytic)):
        n = numeric_gradient(f, p, h)
        if p.size == 0:
            continue
        rel = relative_error(a, n, floor)
        idx = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.ndim else ()
        report.params.append(ParamCheck(
            name=p.name or f"param{k}",
            max_rel_error=float(rel[idx]) if rel.ndim else float(rel),
            worst_index=tuple(int(i) for i in idx),
            analytic=float(a[idx]) if a.ndim else float(a),
            numeric=float(n[idx]) if n.ndim else float(n),
        ))
    return report
