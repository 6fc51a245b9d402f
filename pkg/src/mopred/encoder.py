"""Scene context encoders.

Two stacks share one polyline-feature front end: the focal-centric stack
attends over tokens embedded in a single agent's frame with absolute
position encodings, and the symmetric stack attends query-centrically with
relative-pose encodings so its output is independent of the world frame.
Both end with dense future prediction for all agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .numerics import tensor as T
from .numerics.layers import (
    AttentionParams, attention_dense, attention_gathered, build_attention,
    build_mlp, mlp_forward, sinusoidal_pe,
)
from .numerics.params import ParameterStore
from .scene.transforms import relative_pose_pairs


def rel_pe_dim(d_model: int) -> int:
    """Raw sinusoidal width for 3-channel relative poses (needs 6 | dim)."""
    return 6 * int(np.ceil(d_model / 6))


@dataclass
class EncoderConfig:
    num_layers: int = 6
    d_model: int = 256
    num_heads: int = 4
    k_neighbors: int = 16
    polyline_hidden: int = 64
    ffn_multiple: int = 4
    attention: str = "local"    # local | dense
    dense_future: bool = True

    def validate(self, prefix="encoder"):
        problems = []
        if self.num_layers < 1:
            problems.append(f"{prefix}.num_layers: must be >= 1")
        if self.d_model < 1 or self.d_model % self.num_heads != 0:
            problems.append(
                f"{prefix}.d_model: {self.d_model} not divisible by "
                f"{prefix}.num_heads {self.num_heads}")
        if self.d_model % 4 != 0:
            problems.append(f"{prefix}.d_model: must be divisible by 4 for position encodings")
        if self.k_neighbors < 1:
            problems.append(f"{prefix}.k_neighbors: must be >= 1")
        if self.attention not in ("local", "dense"):
            problems.append(f"{prefix}.attention: unknown {self.attention!r}")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class EncodedScene:
    """Per-token features after context encoding, plus dense futures."""

    agent_features: T.Tensor          # (B, N_a, D)
    map_features: T.Tensor            # (B, N_m, D)
    token_pos: np.ndarray             # (B, N, 2)
    token_heading: np.ndarray         # (B, N,)
    dense_future: T.Tensor | None     # (B, N_a, T_f, 4)
    agent_any_valid: np.ndarray       # (B, N_a) bool


class EncoderParams:
    """Registers and holds all encoder parameters for one configuration."""

    def __init__(self, store: ParameterStore, cfg: EncoderConfig, agent_channels: int,
                 map_channels: int, t_future: int, symmetric: bool, prefix: str = "enc"):
        d = cfg.d_model
        h = cfg.polyline_hidden
        self.cfg = cfg
        self.symmetric = symmetric
        self.agent_poly = build_mlp(store, f"{prefix}.agent_poly", [agent_channels, h, d])
        self.map_poly = build_mlp(store, f"{prefix}.map_poly", [map_channels, h, d])
        self.layers = []
        for i in range(cfg.num_layers):
            p = f"{prefix}.layer{i}"
            qk_dim = 2 * d if symmetric else d + d  # content + (projected) PE
            layer = {
                "ln1_g": store.ones(f"{p}.ln1_g", (d,)),
                "ln1_b": store.zeros(f"{p}.ln1_b", (d,)),
                "attn": build_attention(store, f"{p}.attn", qk_dim, qk_dim, d, d,
                                        cfg.num_heads),
                "ln2_g": store.ones(f"{p}.ln2_g", (d,)),
                "ln2_b": store.zeros(f"{p}.ln2_b", (d,)),
                "ffn": build_mlp(store, f"{p}.ffn", [d, cfg.ffn_multiple * d, d]),
            }
            if symmetric:
                layer["pe_proj_w"] = store.weight(f"{p}.pe_proj_w", rel_pe_dim(d), d)
                layer["pe_proj_b"] = store.zeros(f"{p}.pe_proj_b", (d,))
            self.layers.append(layer)
        if cfg.dense_future:
            self.future_head = build_mlp(store, f"{prefix}.future_head", [d, d, t_future * 4])
            self.future_poly = build_mlp(store, f"{prefix}.future_poly", [4, h, d])
            self.future_fuse = build_mlp(store, f"{prefix}.future_fuse", [2 * d, d, d, d])
        self.t_future = t_future


def encode_polylines(feats: np.ndarray, valid: np.ndarray, mlp_layers):
    """PointNet-style polyline feature: masked max-pool over per-point MLP.

    feats: (..., P, C); valid: (..., P). Returns ((..., D) Tensor,
    any_valid bool array); all-invalid polylines give zero features.
    """
    pointwise = mlp_forward(T.constant(feats), mlp_layers)
    return T.masked_max_pool(pointwise, valid)


def _encoder_block(x, layer, attn_fn, ffn_act="relu"):
    h = T.layer_norm(x, layer["ln1_g"], layer["ln1_b"])
    x = x + attn_fn(h)
    h2 = T.layer_norm(x, layer["ln2_g"], layer["ln2_b"])
    return x + mlp_forward(h2, layer["ffn"], ffn_act)


def context_encode_focal(tokens: T.Tensor, token_pos: np.ndarray,
                         neighborhoods: np.ndarray | None, params: EncoderParams):
    """Focal-centric stack: queries/keys carry absolute-position encodings."""
    d = params.cfg.d_model
    pe = sinusoidal_pe(token_pos, d)
    x = tokens
    for layer in params.layers:
        def attn(h, layer=layer):
            q_in = T.concat([h, T.constant(pe)], axis=-1)
            if neighborhoods is None:
                return attention_dense(q_in, q_in, h, None, layer["attn"])
            idx = neighborhoods
            k_in = T.gather_rows(q_in, idx)
            v_in = T.gather_rows(h, idx)
            return attention_gathered(q_in, k_in, v_in,
                                      np.ones(idx.shape, dtype=np.uint8), layer["attn"])
        x = _encoder_block(x, layer, attn)
    return x


def context_encode_symmetric(tokens: T.Tensor, token_pos: np.ndarray,
                             token_heading: np.ndarray, neighborhoods: np.ndarray,
                             params: EncoderParams):
    """Query-centric stack: neighbors expressed in each query's own frame.

    Token features must already be polyline-local; positions/headings are
    world-frame and only enter through relative poses, which makes the
    output invariant to rigid transforms of the world frame.
    """
    cfg = params.cfg
    d = cfg.d_model
    b, n, k = neighborhoods.shape
    bid = np.arange(b)[:, None, None]
    pos_j = token_pos[bid, neighborhoods]        # (B, N, k, 2)
    head_j = token_heading[bid, neighborhoods]   # (B, N, k)
    rel_pos, rel_ang = relative_pose_pairs(
        token_pos[:, :, None, :], token_heading[:, :, None], pos_j, head_j)
    rel = np.concatenate([rel_pos, rel_ang[..., None]], axis=-1)        # (B,N,k,3)
    pe_pairs = sinusoidal_pe(rel, rel_pe_dim(d))
    pe_self = sinusoidal_pe(np.zeros((1, 1, 3)), rel_pe_dim(d))         # R[i,i] = 0

    x = tokens
    for layer in params.layers:
        def attn(h, layer=layer):
            pe_j = T.matmul(T.constant(pe_pairs), layer["pe_proj_w"]) + layer["pe_proj_b"]
            pe_i = T.matmul(T.constant(np.broadcast_to(pe_self, (b, n, rel_pe_dim(d)))),
                            layer["pe_proj_w"]) + layer["pe_proj_b"]
            h_j = T.gather_rows(h, neighborhoods)
            q_in = T.concat([h, pe_i], axis=-1)
            k_in = T.concat([h_j, pe_j], axis=-1)
            v_in = h_j + pe_j
            return attention_gathered(q_in, k_in, v_in,
                                      np.ones((b, n, k), dtype=np.uint8), layer["attn"])
        x = _encoder_block(x, layer, attn)
    return x


def dense_future_prediction(agent_features: T.Tensor, params: EncoderParams):
    """Regress (x, y, vx, vy) futures for all agents, re-encode them with a
    polyline encoder, and fuse back into the agent features."""
    b, n_a, d = agent_features.shape
    t_f = params.t_future
    flat = mlp_forward(agent_features, params.future_head)
    s_future = T.reshape(flat, (b, n_a, t_f, 4))
    pointwise = mlp_forward(s_future, params.future_poly)
    pooled, _ = T.masked_max_pool(pointwise, np.ones((b, n_a, t_f), dtype=bool))
    fused = mlp_forward(T.concat([agent_features, pooled], axis=-1), params.future_fuse)
    return s_future, fused


def encode_scene(batch, params: EncoderParams) -> EncodedScene:
    """Full encoder pass over a SceneBatch (see model.SceneBatch)."""
    cfg = params.cfg
    n_a = batch.agent_feats.shape[1]
    agent_tok, agent_ok = encode_polylines(batch.agent_feats, batch.agent_valid,
                                           params.agent_poly)
    map_tok, _ = encode_polylines(batch.map_feats, batch.map_valid, params.map_poly)
    tokens = T.concat([agent_tok, map_tok], axis=1)

    neighborhoods = batch.neighborhoods if cfg.attention == "local" else None
    if params.symmetric:
        if neighborhoods is None:
            raise InputError("symmetric encoder requires local neighborhoods")
        x = context_encode_symmetric(tokens, batch.token_pos, batch.token_heading,
                                     neighborhoods, params)
    else:
        x = context_encode_focal(tokens, batch.token_pos, neighborhoods, params)

    f_agent = x[:, :n_a, :]
    f_map = x[:, n_a:, :]
    s_future = None
    if cfg.dense_future:
        s_future, f_agent = dense_future_prediction(f_agent, params)
    return EncodedScene(
        agent_features=f_agent,
        map_features=f_map,
        token_pos=batch.token_pos,
        token_heading=batch.token_heading,
        dense_future=s_future,
        agent_any_valid=agent_ok,
    )
