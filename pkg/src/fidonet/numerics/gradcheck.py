"""Finite-difference gradient verification.

The central-difference oracle is intentionally independent of the
reverse-mode engine: it only re-runs the forward pass with perturbed
parameter values.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ..errors import NumericError
from .tensor import Parameter, Tensor

__all__ = ["grad_check"]


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
    coords: int = 64,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients against central differences.

    Samples up to `coords` coordinates per parameter (seeded, uniform
    without replacement) and returns the maximum relative error
    |a - n| / max(|a|, |n|, 1e-8) over all sampled coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)

    first = loss_fn().data.copy()
    second = loss_fn().data
    if first.tobytes() != second.tobytes():
        raise NumericError("loss_fn is not deterministic: repeated evaluation differs")

    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for p in params:
        if p.grad is None:
            raise NumericError(f"parameter {p.name!r} received no gradient from backward")
        analytic[p.name] = p.grad.copy()

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n_coords = min(coords, flat.size)
        idxs = rng.choice(flat.size, size=n_coords, replace=False)
        a_flat = analytic[p.name].reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = float(loss_fn().data)
            flat[idx] = orig - eps
            minus = float(loss_fn().data)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = float(a_flat[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
    for p in params:
        p.grad = None
    return max_rel
