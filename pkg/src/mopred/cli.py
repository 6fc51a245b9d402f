"""Command line interface.

Subcommands: gen-data, train, eval, predict, bench. Exit codes: 0 success,
2 malformed configuration (one ``error: <path>: <message>`` line per
violation on stderr), 3 missing input file, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import EVAL_DEFAULTS, RunConfig, load_config, validate_config
from .decoder import IntentionPointSet, generate_intention_points
from .errors import ConfigError, DivergedError, InputError
from .evaluation import compute_metrics, write_predictions
from .model import MotionPredictor
from .numerics.params import load_checkpoint, restore_into, save_checkpoint
from .scene.generator import generate_dataset
from .scene.io import read_scenes, write_scenes
from .training import collect_endpoints, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3


def _fail_config(problems) -> int:
    for p in problems:
        print(f"error: config: {p}", file=sys.stderr)
    return EXIT_CONFIG


def _fail_missing(exc) -> int:
    print(f"error: missing-file: {exc}", file=sys.stderr)
    return EXIT_MISSING


def _fail(topic, exc) -> int:
    print(f"error: {topic}: {exc}", file=sys.stderr)
    return EXIT_ERROR


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return validate_config({"preset": "desk"})


def _dataset(args, cfg: RunConfig):
    path = getattr(args, "data", None) or cfg.scenario_file
    if path:
        return read_scenes(path)
    if cfg.generator is None or cfg.num_scenes < 1:
        raise ConfigError(["data: no scenario_file, --data, or generator configured"])
    return generate_dataset(cfg.generator, cfg.seed, cfg.num_scenes)


def _build_model(cfg: RunConfig) -> MotionPredictor:
    return MotionPredictor(cfg.model, rng_seed=cfg.seed)


def _restore_model(ckpt_path: str):
    params, meta = load_checkpoint(ckpt_path)
    doc = meta["extra"].get("run_config", {})
    cfg = validate_config(doc)
    model = MotionPredictor(cfg.model, rng_seed=meta["rng_seed"])
    restore_into(model.store, params)
    ips_doc = meta["extra"].get("intention_points")
    if ips_doc:
        model.set_intention_points(IntentionPointSet.from_dict(ips_doc))
    return model, cfg, meta


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    gen = cfg.generator
    if gen is None:
        raise ConfigError(["data.generator: required for gen-data"])
    seed = cfg.seed if args.seed is None else args.seed
    count = args.scenes if args.scenes is not None else (cfg.num_scenes or 100)
    scenes = generate_dataset(gen, seed, count)
    write_scenes(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out} (seed {seed}, "
          f"config {cfg.config_hash()})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    scenes = _dataset(args, cfg)
    model = _build_model(cfg)
    if cfg.model.decoder.head_type == "intention":
        endpoints = collect_endpoints(scenes)
        ips = generate_intention_points(endpoints, cfg.model.decoder.num_modes,
                                        seed=cfg.seed)
        model.set_intention_points(ips)
    log_path = args.log or (args.out + ".log.csv")
    train(model, scenes, cfg.train, log_path=log_path, quiet=args.quiet)
    extra = {"run_config": cfg.raw}
    if model.intention is not None:
        extra["intention_points"] = model.intention.to_dict()
    save_checkpoint(args.out, model.store, cfg.config_hash(), extra=extra)
    print(f"wrote checkpoint {args.out} and log {log_path} "
          f"(config {cfg.config_hash()})")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg, meta = _restore_model(args.ckpt)
    scenes = read_scenes(args.data)
    records = model.predict_scenes(
        scenes, num_select=cfg.eval.num_select, nms_threshold=cfg.eval.nms_threshold,
        batch_size=cfg.eval.batch_size)
    write_predictions(args.out, records, config_hash=meta["config_hash"],
                      seed=meta["rng_seed"])
    print(f"wrote {len(records)} prediction records to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, meta = _restore_model(args.ckpt)
    scenes = read_scenes(args.data)
    records = model.predict_scenes(
        scenes, num_select=cfg.eval.num_select, nms_threshold=cfg.eval.nms_threshold,
        batch_size=cfg.eval.batch_size)
    report = compute_metrics(records, scenes, miss_threshold=cfg.eval.miss_threshold,
                             config_hash=meta["config_hash"], seed=meta["rng_seed"])
    out = args.out or "metrics"
    report.write_json(out + ".json")
    report.write_csv(out + ".csv")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .benchmark import benchmark_efficiency, benchmark_kernels, write_kernel_rows

    cfg = _load_run_config(args)
    counts = tuple(int(x) for x in args.counts.split(","))
    report = benchmark_efficiency(agent_counts=counts, repetitions=args.reps,
                                  seed=cfg.seed)
    report.config_hash = cfg.config_hash()
    if args.kernels:
        report.kernel_rows = benchmark_kernels(seed=cfg.seed)
        write_kernel_rows(args.out + ".kernels.csv", report.kernel_rows)
    report.write_json(args.out + ".json")
    report.write_csv(args.out + ".csv")
    for row in report.rows:
        print(f"{row['variant']:>10}  n_focal={row['num_focal']:<3d} "
              f"total {row['total_ms']:8.2f} ms  encoder {row['encoder_ms']:8.2f} ms")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mopred",
        description="Multimodal motion prediction at desk scale: synthetic "
                    "scenario generation, training, evaluation, benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic scenario JSONL file")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--data", help="scenario JSONL (overrides config data section)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="write world-frame predictions JSONL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="compute metrics against ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output prefix (.json/.csv)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="latency / memory-scaling benchmark")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--counts", default="8,16,32")
    p.add_argument("--reps", type=int, default=15)
    p.add_argument("--kernels", action="store_true",
                   help="also compare kernel backends")
    p.add_argument("--out", default="bench")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail_config(exc.problems)
    except FileNotFoundError as exc:
        return _fail_missing(exc)
    except DivergedError as exc:
        return _fail("diverged", f"{exc}; diagnostics={exc.diagnostics}")
    except InputError as exc:
        return _fail("input", exc)


if __name__ == "__main__":
    sys.exit(main())
