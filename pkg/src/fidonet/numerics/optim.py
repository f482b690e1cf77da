"""Adam optimizer over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import NumericError
from .tensor import Parameter

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Moment buffers plus hyperparameters; one instance per model."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes gradients afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise NumericError(f"parameter {p.name!r} has no gradient; run backward first")
        if p.grad.shape != p.data.shape:
            raise NumericError(
                f"parameter {p.name!r}: grad shape {p.grad.shape} != value shape {p.data.shape}"
            )

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[p.name] = m
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
        p.grad = np.zeros_like(p.data)
