"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from ..errors import DivergedError, InputError
from .tensor import backward
from .params import ParameterStore


def gradient_check(loss_fn, params, epsilon: float = 1e-5, tolerance: float = 1e-4,
                   max_entries: int = 200, rng=None) -> float:
    """Compare tape gradients with central differences on a random
    parameter subset; returns the worst relative error seen.

    ``loss_fn`` must be a deterministic nullary callable returning a
    scalar Tensor built from ``params``. Relative error uses
    |fd - g| / max(|fd|, |g|, 1).
    """
    if not (1e-7 <= epsilon <= 1e-4):
        raise InputError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    if isinstance(params, ParameterStore):
        named = list(params.items())
    elif isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"p{i}", t) for i, t in enumerate(params)]
    rng = rng or np.random.default_rng(0)

    for _, t in named:
        t.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise DivergedError("non-finite loss in gradient check")
    backward(loss)

    entries = []
    for name, t in named:
        for flat in range(t.data.size):
            entries.append((name, t, flat))
    if len(entries) > max_entries:
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    worst = 0.0
    for _, t, flat in entries:
        g = 0.0 if t.grad is None else float(t.grad.flat[flat])
        orig = float(t.data.flat[flat])
        t.data.flat[flat] = orig + epsilon
        lp = loss_fn().item()
        t.data.flat[flat] = orig - epsilon
        lm = loss_fn().item()
        t.data.flat[flat] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise DivergedError("non-finite loss during finite differencing")
        fd = (lp - lm) / (2.0 * epsilon)
        rel = abs(fd - g) / max(abs(fd), abs(g), 1.0)
        worst = max(worst, rel)
    return worst
