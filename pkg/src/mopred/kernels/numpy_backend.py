"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled backend in ``_core.pyx``; used as the
fallback when the extension is unavailable or when forced via
``MOPRED_PURE_PYTHON=1``.
"""

import numpy as np

NAME = "python"


def masked_softmax_fwd(scores, mask):
    """Row-wise softmax over valid entries.

    scores: (M, k) float64, mask: (M, k) uint8. Invalid entries get
    probability 0. Rows with no valid entry come back all-zero.
    """
    neg = np.where(mask.astype(bool), scores, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    # rows with no valid entry: max is -inf; shift of 0 keeps them finite
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(neg - m)
    e = np.where(mask.astype(bool), e, 0.0)
    z = e.sum(axis=1, keepdims=True)
    z = np.where(z > 0.0, z, 1.0)
    return e / z


def masked_softmax_bwd(probs, grad_out):
    """Backward of masked softmax; zero-probability entries get zero grad."""
    dot = (probs * grad_out).sum(axis=1, keepdims=True)
    return probs * (grad_out - dot)


def scatter_add_rows(out, idx, src):
    """out[idx[r]] += src[r] for every row r; idx (R,), src (R, D), out (N, D)."""
    np.add.at(out, idx, src)
    return out


def masked_max_pool_fwd(x, mask):
    """Per-group, per-channel max over valid entries.

    x: (G, n, d), mask: (G, n) uint8. Returns (out (G, d),
    argmax (G, d) int64, any_valid (G,) uint8); empty groups pool to zero.
    """
    valid = mask.astype(bool)[:, :, None]
    neg = np.where(valid, x, -np.inf)
    arg = neg.argmax(axis=1)
    out = np.take_along_axis(neg, arg[:, None, :], axis=1)[:, 0, :]
    any_valid = mask.any(axis=1)
    out = np.where(any_valid[:, None], out, 0.0)
    return out, arg.astype(np.int64), any_valid.astype(np.uint8)


def masked_max_pool_bwd(grad_out, argmax, any_valid, n):
    """Scatter pooled gradients back to the argmax positions."""
    g, d = grad_out.shape
    grad_x = np.zeros((g, n, d))
    gv = np.where(any_valid.astype(bool)[:, None], grad_out, 0.0)
    np.put_along_axis(grad_x, argmax[:, None, :], gv[:, None, :], axis=1)
    return grad_x
