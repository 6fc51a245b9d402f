"""Run configuration: TOML document -> validated dataclasses.

One document drives every subcommand. All hyperparameters default to the
published large-scale values; ``preset = "desk"`` swaps in the small
configuration used for fast CPU experiments before explicit keys apply.
Validation reports every violation at once and rejects unknown keys.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .scene.generator import GeneratorConfig
from .training import TrainConfig

PAPER_MODEL = {
    "mode": "mtr++",
    "d_model": 256,
    "num_heads": 4,
    "encoder_layers": 6,
    "decoder_layers": 6,
    "k_neighbors": 16,
    "query_neighbors": 16,
    "num_modes": 64,
    "dynamic_map_count": 128,
    "query_interaction": "both",
    "head_type": "intention",
    "t_future": 80,
    "max_polyline_points": 20,
    "max_map_polylines": 768,
    "polyline_hidden": 64,
    "ffn_multiple": 4,
    "dense_future": True,
    "attention": "local",
}

DESK_MODEL = {
    **PAPER_MODEL,
    "d_model": 32,
    "num_heads": 2,
    "encoder_layers": 2,
    "decoder_layers": 2,
    "k_neighbors": 8,
    "num_modes": 8,
    "dynamic_map_count": 12,
    "t_future": 20,
    "max_polyline_points": 10,
    "max_map_polylines": 64,
    "polyline_hidden": 32,
    "ffn_multiple": 2,
}

PAPER_TRAIN = {
    "learning_rate": 1e-4,
    "weight_decay": 0.01,
    "batch_size": 80,
    "epochs": 30,
    "lr_decay": 0.5,
    "lr_decay_every": 2,
    "lr_decay_start": 20,
    "grad_clip": 10.0,
}

DESK_TRAIN = {
    **PAPER_TRAIN,
    "learning_rate": 2e-3,
    "batch_size": 32,
    "epochs": 8,
    "lr_decay_start": 6,
    "lr_decay_every": 1,
}

EVAL_DEFAULTS = {
    "num_select": 6,
    "nms_threshold": 2.5,
    "miss_threshold": 2.0,
    "batch_size": 64,
}


@dataclass
class EvalConfig:
    num_select: int = 6
    nms_threshold: float = 2.5
    miss_threshold: float = 2.0
    batch_size: int = 64

    def validate(self, prefix="eval"):
        problems = []
        if self.num_select < 1:
            problems.append(f"{prefix}.num_select: must be >= 1")
        if self.nms_threshold <= 0:
            problems.append(f"{prefix}.nms_threshold: must be > 0")
        if self.miss_threshold <= 0:
            problems.append(f"{prefix}.miss_threshold: must be > 0")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "paper"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    generator: GeneratorConfig | None = None
    num_scenes: int = 0
    scenario_file: str = ""
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _take(section: dict, known: dict, path: str, problems: list) -> dict:
    """Overlay ``section`` onto ``known`` defaults, flagging unknown keys
    and wrong types."""
    out = dict(known)
    for key, value in section.items():
        if key not in known:
            problems.append(f"{path}.{key}: unknown key")
            continue
        want = type(known[key])
        if want in (float, int) and isinstance(value, bool):
            problems.append(f"{path}.{key}: expected {want.__name__}")
            continue
        if want is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, want):
            problems.append(f"{path}.{key}: expected {want.__name__}, "
                            f"got {type(value).__name__}")
            continue
        out[key] = value
    return out


_GEN_DEFAULTS = {f.name: getattr(GeneratorConfig(), f.name)
                 for f in fields(GeneratorConfig)}
_GEN_DEFAULTS["num_scenes"] = 100
# tuples arrive from TOML as lists
_GEN_TUPLES = {k for k, v in _GEN_DEFAULTS.items() if isinstance(v, tuple)}


def validate_config(document: dict) -> RunConfig:
    """Build a RunConfig, reporting every violated invariant at once."""
    problems = []
    top_known = {"seed", "preset", "model", "data", "train", "eval"}
    for key in document:
        if key not in top_known:
            problems.append(f"{key}: unknown key")

    preset = document.get("preset", "paper")
    if preset not in ("paper", "desk"):
        problems.append(f"preset: must be 'paper' or 'desk', got {preset!r}")
        preset = "paper"
    seed = document.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        problems.append("seed: expected int")
        seed = 0

    model_defaults = DESK_MODEL if preset == "desk" else PAPER_MODEL
    train_defaults = DESK_TRAIN if preset == "desk" else PAPER_TRAIN
    m = _take(document.get("model", {}), model_defaults, "model", problems)
    t = _take(document.get("train", {}), train_defaults, "train", problems)
    e = _take(document.get("eval", {}), EVAL_DEFAULTS, "eval", problems)

    data = document.get("data", {})
    scenario_file = ""
    generator = None
    num_scenes = 0
    for key in data:
        if key not in ("scenario_file", "generator"):
            problems.append(f"data.{key}: unknown key")
    if "scenario_file" in data:
        if not isinstance(data["scenario_file"], str):
            problems.append("data.scenario_file: expected str")
        else:
            scenario_file = data["scenario_file"]
    if "generator" in data or not scenario_file:
        g = dict(_GEN_DEFAULTS)
        gen_section = data.get("generator", {})
        if isinstance(gen_section, dict):
            for key, value in gen_section.items():
                if key not in _GEN_DEFAULTS:
                    problems.append(f"data.generator.{key}: unknown key")
                    continue
                if key in _GEN_TUPLES:
                    value = tuple(value) if isinstance(value, (list, tuple)) else value
                g[key] = value
        else:
            problems.append("data.generator: expected a table")
        num_scenes = g.pop("num_scenes")
        if not isinstance(num_scenes, int) or num_scenes < 0:
            problems.append("data.generator.num_scenes: expected int >= 0")
            num_scenes = 0
        try:
            generator = GeneratorConfig(**g).validate()
        except ConfigError as exc:
            problems.extend("data." + p for p in exc.problems)
        except TypeError as exc:
            problems.append(f"data.generator: {exc}")

    model_cfg = None
    try:
        model_cfg = ModelConfig(
            mode=m["mode"],
            encoder=EncoderConfig(
                num_layers=m["encoder_layers"], d_model=m["d_model"],
                num_heads=m["num_heads"], k_neighbors=m["k_neighbors"],
                polyline_hidden=m["polyline_hidden"], ffn_multiple=m["ffn_multiple"],
                attention=m["attention"], dense_future=m["dense_future"]),
            decoder=DecoderConfig(
                num_layers=m["decoder_layers"], num_modes=m["num_modes"],
                dynamic_map_count=m["dynamic_map_count"], num_heads=m["num_heads"],
                query_neighbors=m["query_neighbors"],
                query_interaction=m["query_interaction"], head_type=m["head_type"]),
            t_future=m["t_future"],
            max_polyline_points=m["max_polyline_points"],
            max_map_polylines=m["max_map_polylines"],
        ).validate()
    except ConfigError as exc:
        problems.extend(exc.problems)

    train_cfg = None
    try:
        train_cfg = TrainConfig(seed=seed, **t).validate()
    except ConfigError as exc:
        problems.extend(exc.problems)

    eval_cfg = None
    try:
        eval_cfg = EvalConfig(**e).validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if eval_cfg and model_cfg and eval_cfg.num_select > m["num_modes"]:
        problems.append("eval.num_select: exceeds model.num_modes")

    if problems:
        raise ConfigError(problems)

    data_raw = {}
    if scenario_file:
        data_raw["scenario_file"] = scenario_file
    if generator is not None:
        data_raw["generator"] = {
            **{f.name: list(v) if isinstance((v := getattr(generator, f.name)), tuple)
               else v for f in fields(GeneratorConfig)},
            "num_scenes": num_scenes,
        }
    raw = {"seed": seed, "preset": preset, "model": m, "train": t, "eval": e,
           "data": data_raw}
    return RunConfig(seed=seed, preset=preset, model=model_cfg, train=train_cfg,
                     eval=eval_cfg, generator=generator, num_scenes=num_scenes,
                     scenario_file=scenario_file, raw=raw)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            document = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: invalid TOML: {exc}"])
    return validate_config(document)
