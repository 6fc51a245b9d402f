"""Parameterized layers: MLPs, sinusoidal encodings, multi-head attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from . import tensor as T
from .tensor import Tensor
from .params import ParameterStore


class AttentionStats:
    """Counts attention-weight buffer elements (the O(N*k) vs O(N^2) term)."""

    def __init__(self):
        self.enabled = False
        self.total_weight_elems = 0
        self.peak_weight_elems = 0

    def reset(self):
        self.total_weight_elems = 0
        self.peak_weight_elems = 0

    def add(self, n: int):
        if self.enabled:
            self.total_weight_elems += n
            self.peak_weight_elems = max(self.peak_weight_elems, n)


stats = AttentionStats()


# ---------------------------------------------------------------------------
# MLP

def build_mlp(store: ParameterStore, prefix: str, dims):
    """Register weights/biases for an MLP with layer sizes ``dims``."""
    layers = []
    for i in range(len(dims) - 1):
        w = store.weight(f"{prefix}.w{i}", dims[i], dims[i + 1])
        b = store.zeros(f"{prefix}.b{i}", (dims[i + 1],))
        layers.append((w, b))
    return layers


def mlp_forward(x: Tensor, layers, activation: str = "relu") -> Tensor:
    """Affine + activation per hidden layer; the final layer is affine only."""
    x = T.as_tensor(x)
    if x.shape[-1] != layers[0][0].shape[0]:
        raise InputError(
            f"mlp input dim {x.shape[-1]} != expected {layers[0][0].shape[0]}")
    act = {"relu": T.relu, "tanh": T.tanh}[activation]
    h = x
    for i, (w, b) in enumerate(layers):
        h = T.matmul(h, w) + b
        if i < len(layers) - 1:
            h = act(h)
    return h


# ---------------------------------------------------------------------------
# positional encoding

def sinusoidal_pe(coords: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding of each coordinate channel.

    ``dim`` splits evenly across the ``c`` trailing coordinate channels;
    per channel, frequencies run a geometric ladder from 1 down to
    1/10000 (single frequency 1 when only one pair fits). Constant with
    respect to parameters, so this returns a plain ndarray.
    """
    coords = np.asarray(coords, dtype=np.float64)
    c = coords.shape[-1]
    if dim % (2 * c) != 0:
        raise InputError(f"pe dim {dim} not divisible by 2*{c}")
    pairs = dim // (2 * c)
    if pairs == 1:
        freqs = np.ones(1)
    else:
        freqs = 10000.0 ** (-np.arange(pairs) / (pairs - 1))
    angles = coords[..., :, None] * freqs  # (..., c, pairs)
    out = np.empty(coords.shape[:-1] + (c, pairs, 2))
    out[..., 0] = np.sin(angles)
    out[..., 1] = np.cos(angles)
    return out.reshape(coords.shape[:-1] + (dim,))


# ---------------------------------------------------------------------------
# attention

@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    num_heads: int


def build_attention(store: ParameterStore, prefix: str, q_dim: int, k_dim: int,
                    v_dim: int, model_dim: int, num_heads: int) -> AttentionParams:
    if model_dim % num_heads != 0:
        raise InputError(f"model dim {model_dim} not divisible by {num_heads} heads")
    return AttentionParams(
        wq=store.weight(f"{prefix}.wq", q_dim, model_dim),
        bq=store.zeros(f"{prefix}.bq", (model_dim,)),
        wk=store.weight(f"{prefix}.wk", k_dim, model_dim),
        bk=store.zeros(f"{prefix}.bk", (model_dim,)),
        wv=store.weight(f"{prefix}.wv", v_dim, model_dim),
        bv=store.zeros(f"{prefix}.bv", (model_dim,)),
        wo=store.weight(f"{prefix}.wo", model_dim, model_dim),
        bo=store.zeros(f"{prefix}.bo", (model_dim,)),
        num_heads=num_heads,
    )


def attention_gathered(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                       mask: np.ndarray, p: AttentionParams) -> Tensor:
    """Attention over per-query key/value sets.

    q_in: (B, Q, Cq); k_in/v_in: (B, Q, S, Ck/Cv) already gathered per
    query; mask: (B, Q, S) validity. Queries whose mask row is empty are
    rejected.
    """
    b, nq, s, _ = k_in.shape
    if mask is not None and not mask.reshape(-1, s).any(axis=1).all():
        raise InputError("attention query with empty neighborhood")
    h = p.num_heads
    dh = p.wq.shape[1] // h
    scale = 1.0 / np.sqrt(dh)
    q = T.matmul(q_in, p.wq) + p.bq            # (B, Q, D)
    k = T.matmul(k_in, p.wk) + p.bk            # (B, Q, S, D)
    v = T.matmul(v_in, p.wv) + p.bv
    qh = T.reshape(q, (b, nq, h, 1, dh))
    kh = T.transpose(T.reshape(k, (b, nq, s, h, dh)), (0, 1, 3, 4, 2))  # (B,Q,h,dh,S)
    vh = T.transpose(T.reshape(v, (b, nq, s, h, dh)), (0, 1, 3, 2, 4))  # (B,Q,h,S,dh)
    scores = T.mul(T.matmul(qh, kh), scale)     # (B,Q,h,1,S)
    stats.add(scores.data.size)
    m = None if mask is None else mask[:, :, None, None, :]
    probs = T.masked_softmax(scores, m)
    out = T.matmul(probs, vh)                   # (B,Q,h,1,dh)
    out = T.reshape(out, (b, nq, h * dh))
    return T.matmul(out, p.wo) + p.bo


def attention_dense(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                    key_mask: np.ndarray | None, p: AttentionParams) -> Tensor:
    """Full attention: every query sees every key (optionally key-masked)."""
    b, nq, _ = q_in.shape
    nk = k_in.shape[1]
    if nk == 0:
        raise InputError("attention with empty key set")
    h = p.num_heads
    dh = p.wq.shape[1] // h
    scale = 1.0 / np.sqrt(dh)
    q = T.matmul(q_in, p.wq) + p.bq
    k = T.matmul(k_in, p.wk) + p.bk
    v = T.matmul(v_in, p.wv) + p.bv
    qh = T.transpose(T.reshape(q, (b, nq, h, dh)), (0, 2, 1, 3))       # (B,h,Q,dh)
    kh = T.transpose(T.reshape(k, (b, nk, h, dh)), (0, 2, 3, 1))       # (B,h,dh,K)
    vh = T.transpose(T.reshape(v, (b, nk, h, dh)), (0, 2, 1, 3))       # (B,h,K,dh)
    scores = T.mul(T.matmul(qh, kh), scale)                            # (B,h,Q,K)
    stats.add(scores.data.size)
    m = None if key_mask is None else np.asarray(key_mask)[:, None, None, :]
    probs = T.masked_softmax(scores, m)
    out = T.matmul(probs, vh)                                          # (B,h,Q,dh)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, nq, h * dh))
    return T.matmul(out, p.wo) + p.bo


def multi_head_attention(q_tokens: Tensor, k_tokens: Tensor, v_tokens: Tensor,
                         p: AttentionParams, neighborhoods: np.ndarray | None = None) -> Tensor:
    """Token-level attention; ``neighborhoods`` (B, Q, S) int64 restricts each
    query to an explicit key index set (entries < 0 are padding), None means
    full attention."""
    if neighborhoods is None:
        return attention_dense(q_tokens, k_tokens, v_tokens, None, p)
    idx = np.asarray(neighborhoods, dtype=np.int64)
    mask = (idx >= 0).astype(np.uint8)
    safe = np.where(idx >= 0, idx, 0)
    k_in = T.gather_rows(k_tokens, safe)
    v_in = T.gather_rows(v_tokens, safe)
    return attention_gathered(q_tokens, k_in, v_in, mask, p)
