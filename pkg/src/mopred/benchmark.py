"""Efficiency benchmarks.

Two axes matter: (1) how inference latency scales with the number of focal
agents under per-focal re-encoding versus one shared symmetric encoding,
and (2) how the attention-weight working set scales with token count under
local versus dense attention. A separate microbenchmark compares the
compiled and pure-python kernel backends.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import kernels
from .decoder import DecoderConfig
from .encoder import EncoderConfig, encode_scene
from .errors import InputError
from .model import ModelConfig, MotionPredictor
from .numerics.layers import stats
from .scene.generator import GeneratorConfig, generate_scene
from .scene.types import Scene
from .training import collect_endpoints
from .decoder import generate_intention_points

VARIANTS = ("per_focal", "shared")


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)          # latency rows
    buffer_rows: list = field(default_factory=list)   # attention-buffer rows
    kernel_rows: list = field(default_factory=list)   # backend comparison
    config_hash: str = ""
    seed: int = 0
    kernel_backend: str = ""

    def to_dict(self):
        return {
            "latency": self.rows,
            "attention_buffers": self.buffer_rows,
            "kernels": self.kernel_rows,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "kernel_backend": self.kernel_backend,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "num_focal", "total_ms", "total_iqr_ms",
                        "encoder_ms", "encoder_iqr_ms", "attn_weight_elems",
                        "kernel_backend", "flag"])
            for r in self.rows:
                w.writerow([r["variant"], r["num_focal"],
                            f"{r['total_ms']:.3f}", f"{r['total_iqr_ms']:.3f}",
                            f"{r['encoder_ms']:.3f}", f"{r['encoder_iqr_ms']:.3f}",
                            r["attn_weight_elems"], self.kernel_backend,
                            r.get("flag", "")])


def _time_fn(fn, repetitions: int, warmup: int = 2):
    """(median_s, iqr_s, flag); repetitions rescale once if the median is
    below a safe clock-resolution floor."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    med = median(samples)
    flag = ""
    if med < 1e-4:
        flag = "below-resolution; repetitions x10"
        samples = []
        for _ in range(repetitions * 10):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        med = median(samples)
    q = np.percentile(samples, [25, 75])
    return med, float(q[1] - q[0]), flag


def _bench_model_config(mode: str) -> ModelConfig:
    return ModelConfig(
        mode=mode,
        encoder=EncoderConfig(num_layers=2, d_model=32, num_heads=2, k_neighbors=8,
                              polyline_hidden=32, ffn_multiple=2),
        decoder=DecoderConfig(num_layers=2, num_modes=8, dynamic_map_count=12,
                              num_heads=2, query_neighbors=16),
        t_future=20, max_polyline_points=10,
    )


def _focal_subset(scene: Scene, count: int) -> Scene:
    if count > len(scene.focal_ids):
        raise InputError(f"bench scene has only {len(scene.focal_ids)} focal agents")
    return Scene(scene_id=scene.scene_id, agents=scene.agents,
                 map_polylines=scene.map_polylines,
                 focal_ids=scene.focal_ids[:count], dt=scene.dt,
                 metadata=scene.metadata)


def benchmark_efficiency(agent_counts=(8, 16, 32), repetitions: int = 15,
                         seed: int = 0, variants=VARIANTS) -> BenchReport:
    """Latency/working-set scaling over the number of focal agents.

    One fixed scene; each variant predicts for its first ``count`` agents.
    "per_focal" re-encodes the scene per focal agent (focal-centric);
    "shared" encodes once symmetrically and decodes all agents jointly.
    """
    max_count = max(agent_counts)
    gen = GeneratorConfig(num_agents=max_count + 2, num_focal=max_count,
                          entry_distance_range=(3.0, 30.0))
    scene = generate_scene(gen, [seed, 0])
    endpoints = collect_endpoints(
        [generate_scene(GeneratorConfig(), [seed, i]) for i in range(2, 40)])
    intention = generate_intention_points(endpoints, 8, seed=seed)

    models = {}
    for variant in variants:
        mode = "mtr" if variant == "per_focal" else "mtr++"
        model = MotionPredictor(_bench_model_config(mode), rng_seed=seed)
        model.set_intention_points(intention)
        models[variant] = model

    report = BenchReport(seed=seed, kernel_backend=kernels.BACKEND)
    for variant, model in models.items():
        for count in agent_counts:
            sub = _focal_subset(scene, count)

            def run_total():
                model.forward(model.batch(model.samples([sub])))

            def run_encoder_full():
                batch = model.batch(model.samples([sub]))
                encode_scene(batch, model.encoder_params)

            total_ms, total_iqr, flag1 = _time_fn(run_total, repetitions)
            enc_ms, enc_iqr, flag2 = _time_fn(run_encoder_full, repetitions)

            stats.enabled = True
            stats.reset()
            model.forward(model.batch(model.samples([sub])))
            elems = stats.total_weight_elems
            stats.enabled = False

            report.rows.append({
                "variant": variant,
                "num_focal": count,
                "total_ms": total_ms * 1e3,
                "total_iqr_ms": total_iqr * 1e3,
                "encoder_ms": enc_ms * 1e3,
                "encoder_iqr_ms": enc_iqr * 1e3,
                "attn_weight_elems": int(elems),
                "flag": flag1 or flag2,
            })
    report.buffer_rows = attention_buffer_sweep(seed=seed)
    return report


def attention_buffer_sweep(agent_counts=(8, 16, 32), seed: int = 0):
    """Attention-weight buffer elements vs token count, local vs dense.

    Local buffers grow linearly (N * k per head), dense quadratically
    (N^2 per head); counted from real encoder forwards.
    """
    rows = []
    for attention in ("local", "dense"):
        for count in agent_counts:
            gen = GeneratorConfig(num_agents=count, num_focal=1,
                                  entry_distance_range=(3.0, 30.0))
            scene = generate_scene(gen, [seed, 0])
            cfg = _bench_model_config("mtr")
            cfg.encoder.attention = attention
            model = MotionPredictor(cfg, rng_seed=seed)
            batch = model.batch(model.samples([scene]))
            stats.enabled = True
            stats.reset()
            encode_scene(batch, model.encoder_params)
            rows.append({
                "attention": attention,
                "tokens": int(batch.token_pos.shape[1]),
                "weight_elems": int(stats.total_weight_elems),
                "peak_elems": int(stats.peak_weight_elems),
            })
            stats.enabled = False
    return rows


def benchmark_kernels(repetitions: int = 30, seed: int = 0):
    """Compiled-vs-python backend microbenchmarks plus one full train step."""
    rng = np.random.default_rng(seed)
    b, q, s, d, n = 32, 48, 8, 32, 48
    scores = rng.standard_normal((b * q, s))
    mask = (rng.random((b * q, s)) > 0.2).astype(np.uint8)
    mask[:, 0] = 1
    idx = rng.integers(0, n, (b, q, s)).astype(np.int64)
    flat_idx = (np.arange(b)[:, None, None] * n + idx).reshape(-1)
    src = rng.standard_normal((b * q * s, d))
    pool_x = rng.standard_normal((b * q, s, d))

    cases = {
        "masked_softmax_fwd": lambda impl: impl.masked_softmax_fwd(scores, mask),
        "scatter_add_rows": lambda impl: impl.scatter_add_rows(
            np.zeros((b * n, d)), flat_idx, src),
        "masked_max_pool_fwd": lambda impl: impl.masked_max_pool_fwd(pool_x, mask),
    }
    rows = []
    for backend_name, impl in kernels.available_backends().items():
        for case, fn in cases.items():
            med, iqr, flag = _time_fn(lambda: fn(impl), repetitions)
            rows.append({"kernel": case, "backend": backend_name,
                         "median_us": med * 1e6, "iqr_us": iqr * 1e6, "flag": flag})

    # one full forward+backward per backend on a desk-scale batch
    from .numerics import tensor as T
    from .training import total_loss
    gen = GeneratorConfig()
    scenes = [generate_scene(gen, [seed, i]) for i in range(8)]
    endpoints = collect_endpoints(
        [generate_scene(gen, [seed, 100 + i]) for i in range(40)])
    intention = generate_intention_points(endpoints, 8, seed=seed)
    model = MotionPredictor(_bench_model_config("mtr++"), rng_seed=seed)
    model.set_intention_points(intention)
    batch = model.batch(model.samples(scenes))
    previous = kernels.BACKEND
    for backend_name in kernels.available_backends():
        kernels.use_backend(backend_name)

        def step():
            outputs, encoded = model.forward(batch)
            loss = total_loss(outputs, encoded.dense_future, batch, model.intention)
            model.store.zero_grad()
            T.backward(loss.total)

        med, iqr, flag = _time_fn(step, max(3, repetitions // 5))
        rows.append({"kernel": "model_fwd_bwd", "backend": backend_name,
                     "median_us": med * 1e6, "iqr_us": iqr * 1e6, "flag": flag})
    kernels.use_backend(previous)
    return rows


def write_kernel_rows(path_csv, rows):
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel", "backend", "median_us", "iqr_us", "flag"])
        for r in rows:
            w.writerow([r["kernel"], r["backend"], f"{r['median_us']:.2f}",
                        f"{r['iqr_us']:.2f}", r["flag"]])
