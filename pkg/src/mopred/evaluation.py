"""Trajectory selection, forecasting metrics, and joint combination.

The miss/mAP thresholding here is deliberately simplified relative to the
public benchmarks: a static final-step distance threshold (default 2.0 m)
rather than velocity- and horizon-scaled thresholds. Reports carry that
caveat in their header.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

MISS_THRESHOLD_NOTE = (
    "miss/mAP use a static final-step distance threshold; "
    "not comparable to velocity-scaled public-benchmark values")


def nms_select(endpoints, confidences, num_select: int, threshold: float):
    """Greedy endpoint non-maximum suppression.

    Candidates are visited by descending confidence (ties toward lower
    index); one is suppressed when its endpoint lies within ``threshold``
    of an already-kept endpoint. If fewer than ``num_select`` survive, the
    highest-confidence suppressed candidates backfill the remainder.
    """
    if threshold <= 0:
        raise InputError("nms threshold must be > 0")
    endpoints = np.asarray(endpoints, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    order = np.argsort(-confidences, kind="stable")
    kept = []
    suppressed = []
    for idx in order:
        if len(kept) == num_select:
            break
        d = [np.linalg.norm(endpoints[idx] - endpoints[j]) for j in kept]
        if any(x < threshold for x in d):
            suppressed.append(idx)
        else:
            kept.append(idx)
    for idx in suppressed:
        if len(kept) == num_select:
            break
        kept.append(idx)
    return np.asarray(kept[:num_select], dtype=np.int64)


def combine_joint(set_a: dict, set_b: dict, num_select: int):
    """Top joint predictions of two agents ranked by confidence product.

    ``set_a``/``set_b`` need "trajectories" (K, T, 2) and "confidences"
    (K,). All K_A * K_B pairs are enumerated; ties break lexicographically
    on (i, j).
    """
    conf_a = np.asarray(set_a["confidences"], dtype=np.float64)
    conf_b = np.asarray(set_b["confidences"], dtype=np.float64)
    if conf_a.size == 0 or conf_b.size == 0:
        raise InputError("joint combination needs nonempty prediction sets")
    pairs = [(float(conf_a[i] * conf_b[j]), i, j)
             for i in range(conf_a.size) for j in range(conf_b.size)]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    out = []
    for conf, i, j in pairs[:num_select]:
        out.append({
            "pair": (i, j),
            "confidence": conf,
            "trajectories": (np.asarray(set_a["trajectories"])[i],
                             np.asarray(set_b["trajectories"])[j]),
        })
    return out


@dataclass
class MetricsReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    mean_ap: float
    per_category: dict
    sample_count: int
    excluded_count: int
    miss_threshold: float
    note: str = MISS_THRESHOLD_NOTE
    config_hash: str = ""
    seed: int = 0

    def to_dict(self):
        return {
            "min_ade": self.min_ade,
            "min_fde": self.min_fde,
            "miss_rate": self.miss_rate,
            "mean_ap": self.mean_ap,
            "per_category": self.per_category,
            "sample_count": self.sample_count,
            "excluded_count": self.excluded_count,
            "miss_threshold": self.miss_threshold,
            "note": self.note,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# " + self.note])
            w.writerow(["min_ade", "min_fde", "miss_rate", "mean_ap",
                        "sample_count", "excluded_count", "miss_threshold",
                        "config_hash", "seed"])
            w.writerow([f"{self.min_ade:.9f}", f"{self.min_fde:.9f}",
                        f"{self.miss_rate:.9f}", f"{self.mean_ap:.9f}",
                        self.sample_count, self.excluded_count,
                        self.miss_threshold, self.config_hash, self.seed])


def _gt_lookup(scenes):
    table = {}
    for scene in scenes:
        for fid in scene.focal_ids:
            track = scene.agent(fid)
            table[(scene.scene_id, fid)] = (track.future, track.category)
    return table


def displacement_stats(trajectories, gt_future):
    """(ade (M,), fde (M,)) over valid GT frames; None without valid GT."""
    valid = gt_future[:, 4] > 0
    if not valid.any():
        return None
    trajs = np.asarray(trajectories, dtype=np.float64)
    t = min(trajs.shape[1], gt_future.shape[0])
    v = valid[:t]
    if not v.any():
        return None
    diff = trajs[:, :t][:, v] - gt_future[:t][v, 0:2]
    dists = np.linalg.norm(diff, axis=-1)
    last = int(np.nonzero(v)[0][-1])
    fde = np.linalg.norm(trajs[:, last] - gt_future[last, 0:2], axis=-1)
    return dists.mean(axis=1), fde


def _average_precision(rows, num_gt: int) -> float:
    """Interpolated AP; rows are (confidence, order, hit, gt_key)."""
    if num_gt == 0:
        return 0.0
    rows = sorted(rows, key=lambda r: (-r[0], r[1]))
    matched = set()
    tp = np.zeros(len(rows))
    for i, (_, _, hit, key) in enumerate(rows):
        if hit and key not in matched:
            matched.add(key)
            tp[i] = 1.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    # monotone (interpolated) precision envelope
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def compute_metrics(records, scenes, miss_threshold: float = 2.0,
                    config_hash: str = "", seed: int = 0) -> MetricsReport:
    """Marginal metrics over world-frame prediction records.

    Each record: scene_id, agent_id, trajectories (M, T, 2), confidences
    (M,). Agents without any valid GT frame are excluded and counted.
    """
    gt = _gt_lookup(scenes)
    ades, fdes, misses = [], [], []
    ap_rows = {}
    gt_counts = {}
    excluded = 0
    order = 0
    for rec in records:
        key = (rec["scene_id"], rec["agent_id"])
        if key not in gt:
            raise InputError(f"prediction for unknown focal agent {key}")
        future, category = gt[key]
        stats = displacement_stats(rec["trajectories"], future)
        if stats is None:
            excluded += 1
            continue
        ade, fde = stats
        ades.append(float(ade.min()))
        fdes.append(float(fde.min()))
        misses.append(float(not (fde < miss_threshold).any()))
        gt_counts[category] = gt_counts.get(category, 0) + 1
        rows = ap_rows.setdefault(category, [])
        for m, conf in enumerate(np.asarray(rec["confidences"], dtype=np.float64)):
            rows.append((float(conf), order, bool(fde[m] < miss_threshold), key))
            order += 1
    per_category = {
        cat: _average_precision(rows, gt_counts.get(cat, 0))
        for cat, rows in ap_rows.items()
    }
    mean_ap = float(np.mean(list(per_category.values()))) if per_category else 0.0
    n = len(ades)
    return MetricsReport(
        min_ade=float(np.mean(ades)) if n else 0.0,
        min_fde=float(np.mean(fdes)) if n else 0.0,
        miss_rate=float(np.mean(misses)) if n else 0.0,
        mean_ap=mean_ap,
        per_category=per_category,
        sample_count=n,
        excluded_count=excluded,
        miss_threshold=miss_threshold,
        config_hash=config_hash,
        seed=seed,
    )


def write_predictions(path, records, config_hash: str = "", seed: int = 0):
    """JSON-lines prediction file, one focal agent per record."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "scene_id": rec["scene_id"],
                "agent_id": rec["agent_id"],
                "trajectories": np.asarray(rec["trajectories"]).tolist(),
                "confidences": np.asarray(rec["confidences"]).tolist(),
                "config_hash": config_hash,
                "seed": seed,
            }, sort_keys=True))
            fh.write("\n")


def read_predictions(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            records.append({
                "scene_id": doc["scene_id"],
                "agent_id": doc["agent_id"],
                "trajectories": np.asarray(doc["trajectories"], dtype=np.float64),
                "confidences": np.asarray(doc["confidences"], dtype=np.float64),
            })
    return records
