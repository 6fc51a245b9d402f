"""Losses, optimizer, and the training loop.

The trajectory loss is a hard-assignment mixture NLL: only the mode whose
intention point lies closest to the GT endpoint receives the Gaussian
regression term, plus cross-entropy on the mode probabilities. Dense
future prediction adds an L1 term over all agents. Deep supervision
averages the decoder terms across layers.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .decoder import IntentionPointSet, LayerOutput
from .errors import ConfigError, DivergedError, InputError
from .numerics import tensor as T
from .numerics.params import ParameterStore
from .scene.transforms import future_in_frame
from .scene.types import AGENT_CATEGORIES

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 80
    epochs: int = 30
    lr_decay: float = 0.5
    lr_decay_every: int = 2
    lr_decay_start: int = 20
    grad_clip: float = 10.0
    seed: int = 0

    def validate(self, prefix="train"):
        problems = []
        if self.learning_rate <= 0:
            problems.append(f"{prefix}.learning_rate: must be > 0")
        if self.epochs < 1:
            problems.append(f"{prefix}.epochs: must be >= 1")
        if self.batch_size < 1:
            problems.append(f"{prefix}.batch_size: must be >= 1")
        if not (0 < self.lr_decay <= 1):
            problems.append(f"{prefix}.lr_decay: must be in (0, 1]")
        if self.lr_decay_every < 1:
            problems.append(f"{prefix}.lr_decay_every: must be >= 1")
        if problems:
            raise ConfigError(problems)
        return self

    def lr_at_epoch(self, epoch: int) -> float:
        """1-indexed epoch; decays by ``lr_decay`` every ``lr_decay_every``
        epochs starting at ``lr_decay_start``."""
        if epoch < self.lr_decay_start:
            return self.learning_rate
        steps = (epoch - self.lr_decay_start) // self.lr_decay_every + 1
        return self.learning_rate * (self.lr_decay ** steps)


@dataclass
class LossBreakdown:
    total: T.Tensor
    gmm_nll: float
    classification: float
    dense_future: float
    per_layer: list = field(default_factory=list)

    @property
    def total_value(self) -> float:
        return self.total.item()


def select_positive_mode(gt_endpoint, intention_points) -> int:
    """Index of the intention point closest to the GT endpoint (ties to
    the lower index)."""
    d = np.linalg.norm(np.asarray(intention_points, dtype=np.float64)
                       - np.asarray(gt_endpoint, dtype=np.float64), axis=-1)
    return int(d.argmin())


def positive_modes_batch(gt_future_focal: np.ndarray, local_points: np.ndarray):
    """(positive index (B, N_o), has-endpoint mask (B, N_o)).

    The endpoint is the last valid future frame in the agent's own frame;
    agents without one are excluded from the GMM loss.
    """
    b, n_o, t_f, _ = gt_future_focal.shape
    valid = gt_future_focal[..., 4] > 0
    has = valid.any(axis=-1)
    # index of last valid frame (0 for excluded agents, masked later)
    last = np.where(has, t_f - 1 - valid[..., ::-1].argmax(axis=-1), 0)
    endpoint = np.take_along_axis(
        gt_future_focal[..., 0:2], last[..., None, None], axis=2)[:, :, 0, :]
    d = np.linalg.norm(local_points - endpoint[:, :, None, :], axis=-1)
    return d.argmin(axis=-1), has


def gmm_nll_loss(layer: LayerOutput, gt_future_focal: np.ndarray,
                 positive: np.ndarray, include: np.ndarray):
    """(nll, classification) for one decoder layer, means over included
    agents; NLL is averaged per agent over its valid timesteps.

    Only the positive mode's Gaussians enter the NLL; classification is
    cross-entropy against the positive index.
    """
    b, n_o, k = layer.logits.shape
    onehot = np.zeros((b, n_o, k))
    np.put_along_axis(onehot, positive[..., None], 1.0, axis=-1)
    w_agent = include.astype(np.float64)
    denom_agents = max(float(w_agent.sum()), 1.0)

    sel = onehot[..., None, None]
    mu = T.sum_(layer.means * sel, axis=2)        # (B, N_o, T, 2)
    sg = T.sum_(layer.sigmas * sel, axis=2)
    rho = T.sum_(layer.rhos * onehot[..., None], axis=2)   # (B, N_o, T)

    gt_xy = gt_future_focal[..., 0:2]
    m_t = (gt_future_focal[..., 4] > 0).astype(np.float64)  # (B, N_o, T)
    dx = T.constant(gt_xy[..., 0]) - mu[..., 0]
    dy = T.constant(gt_xy[..., 1]) - mu[..., 1]
    sx, sy = sg[..., 0], sg[..., 1]
    one_m = T.constant(1.0) - T.square(rho)
    z = T.square(dx / sx) + T.square(dy / sy) \
        - T.constant(2.0) * rho * dx * dy / (sx * sy)
    nll_t = T.constant(LOG_2PI) + T.log(sx) + T.log(sy) \
        + T.mul(T.log(one_m), 0.5) + z / (T.mul(one_m, 2.0))

    steps = np.maximum(m_t.sum(axis=-1), 1.0)
    per_agent = T.sum_(nll_t * T.constant(m_t), axis=-1) / T.constant(steps)
    nll = T.sum_(per_agent * T.constant(w_agent)) / T.constant(denom_agents)

    ce_agent = T.neg(T.sum_(layer.log_probs * T.constant(onehot), axis=-1))
    ce = T.sum_(ce_agent * T.constant(w_agent)) / T.constant(denom_agents)
    return nll, ce


def dense_future_loss(predicted: T.Tensor, gt_future_agents: np.ndarray):
    """Mean absolute error over valid frames, all agents, 4 channels."""
    mask = (gt_future_agents[..., 4] > 0).astype(np.float64)
    target = gt_future_agents[..., 0:4]
    err = T.abs_(predicted - T.constant(target))
    weighted = T.sum_(err * T.constant(mask[..., None]))
    denom = max(float(mask.sum()) * 4.0, 1.0)
    return weighted / T.constant(denom)


def total_loss(layer_outputs, dense_future: T.Tensor | None, batch,
               intention: IntentionPointSet | None, focal_local_points=None) -> LossBreakdown:
    """L_SUM = mean over decoder layers of (NLL + classification) + L_DMP."""
    b, n_o = batch.focal_idx.shape
    if focal_local_points is None:
        if intention is not None:
            cats = sorted(intention.points)
            row = {AGENT_CATEGORIES.index(c): i for i, c in enumerate(cats)}
            stack = np.stack([intention.points[c] for c in cats])
            focal_local_points = stack[np.vectorize(row.__getitem__)(
                batch.focal_categories).reshape(b, n_o)]
        else:
            # single-mode baseline: positive mode is always 0
            k = layer_outputs[0].logits.shape[-1]
            focal_local_points = np.zeros((b, n_o, k, 2))
    positive, include = positive_modes_batch(batch.gt_future_focal, focal_local_points)

    per_layer = []
    acc = None
    for layer in layer_outputs:
        nll, ce = gmm_nll_loss(layer, batch.gt_future_focal, positive, include)
        term = nll + ce
        acc = term if acc is None else acc + term
        per_layer.append((nll.item(), ce.item()))
    decoder_term = acc / T.constant(float(len(layer_outputs)))

    if dense_future is not None:
        dmp = dense_future_loss(dense_future, batch.gt_future_agents)
        total = decoder_term + dmp
        dmp_val = dmp.item()
    else:
        total = decoder_term
        dmp_val = 0.0
    return LossBreakdown(
        total=total,
        gmm_nll=float(np.mean([p[0] for p in per_layer])),
        classification=float(np.mean([p[1] for p in per_layer])),
        dense_future=dmp_val,
        per_layer=per_layer,
    )


class AdamW:
    """Decoupled weight-decay Adam with global-norm gradient clipping."""

    def __init__(self, store: ParameterStore, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8, grad_clip: float = 10.0):
        self.store = store
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self, lr: float):
        grads = {}
        sq = 0.0
        for name, t in self.store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            grads[name] = g
            sq += float((g * g).sum())
        norm = np.sqrt(sq)
        scale = 1.0 if norm <= self.grad_clip else self.grad_clip / norm
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, t in self.store.items():
            g = grads[name] * scale
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mh = self.m[name] / bc1
            vh = self.v[name] / bc2
            t.data = t.data - lr * (mh / (np.sqrt(vh) + self.eps) + self.wd * t.data)


def train(model, scenes, cfg: TrainConfig, log_path=None, quiet: bool = True):
    """Train in place; returns (ParameterStore, per-epoch log rows).

    Deterministic given ``cfg.seed``: shuffling is the only randomness.
    A non-finite loss aborts with the offending batch in the diagnostics.
    """
    cfg.validate()
    if not scenes:
        raise InputError("training dataset is empty")
    samples = model.samples(scenes)
    opt = AdamW(model.store, weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at_epoch(epoch)
        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        batches = 0
        t0 = time.perf_counter()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = model.batch([samples[i] for i in idx])
            outputs, encoded = model.forward(batch)
            loss = total_loss(outputs, encoded.dense_future, batch, model.intention)
            value = loss.total_value
            if not np.isfinite(value):
                raise DivergedError(
                    f"non-finite loss at epoch {epoch}",
                    diagnostics={"epoch": epoch, "scene_ids": batch.scene_ids,
                                 "breakdown": (loss.gmm_nll, loss.classification,
                                               loss.dense_future)})
            model.store.zero_grad()
            T.backward(loss.total)
            opt.step(lr)
            sums += (value, loss.gmm_nll, loss.classification, loss.dense_future)
            batches += 1
        row = {
            "epoch": epoch,
            "l_sum": sums[0] / batches,
            "l_gmm": sums[1] / batches,
            "classification": sums[2] / batches,
            "l_dmp": sums[3] / batches,
            "lr": lr,
        }
        rows.append(row)
        if not quiet:
            print(f"epoch {epoch:3d}  L_SUM {row['l_sum']:.4f}  "
                  f"nll {row['l_gmm']:.4f}  cls {row['classification']:.4f}  "
                  f"dmp {row['l_dmp']:.4f}  lr {lr:.2e}  "
                  f"({time.perf_counter() - t0:.1f}s)")
    if log_path:
        write_training_log(log_path, rows)
    return model.store, rows


def write_training_log(path, rows):
    """CSV of (epoch, L_SUM, L_GMM, classification, L_DMP, lr)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_sum", "l_gmm", "classification", "l_dmp", "lr"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['l_sum']:.9f}", f"{r['l_gmm']:.9f}",
                        f"{r['classification']:.9f}", f"{r['l_dmp']:.9f}",
                        f"{r['lr']:.9e}"])


def collect_endpoints(scenes):
    """GT endpoints per category, in each focal agent's local frame."""
    out = {}
    for scene in scenes:
        for fid in scene.focal_ids:
            track = scene.agent(fid)
            fut = future_in_frame(track, track.latest_pose())
            valid = fut[:, 4] > 0
            if not valid.any():
                continue
            last = int(np.nonzero(valid)[0][-1])
            out.setdefault(track.category, []).append(fut[last, 0:2])
    return {c: np.asarray(v) for c, v in out.items()}
