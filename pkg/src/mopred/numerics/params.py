"""Named parameter storage, deterministic initialization, checkpoints."""

from __future__ import annotations

import base64
import json

import numpy as np

from ..errors import InputError
from .tensor import Tensor, parameter

CHECKPOINT_FORMAT = "mopred-checkpoint-v1"


class ParameterStore:
    """Flat map of hierarchical names to trainable tensors.

    Initialization is a pure function of ``rng_seed`` and registration
    order: weights are Glorot-uniform in +-sqrt(6/(fan_in+fan_out)),
    biases and norm offsets zero, norm gains one.
    """

    def __init__(self, rng_seed: int):
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self._rng.uniform(-limit, limit, (fan_in, fan_out)))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise InputError(f"duplicate parameter name: {name}")
        t = parameter(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def checksum(self) -> float:
        """Order-stable digest of all parameter values (for determinism tests)."""
        return float(sum(float(np.sum(t.data)) for t in self._params.values()))


def save_checkpoint(path, store: ParameterStore, config_hash: str, extra: dict | None = None):
    """Write parameters as name -> shape -> little-endian float64 payload."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "rng_seed": store.rng_seed,
        "config_hash": config_hash,
        "params": {
            name: {
                "shape": list(t.data.shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(t.data, dtype="<f8").tobytes()).decode("ascii"),
            }
            for name, t in store.items()
        },
    }
    if extra:
        doc["extra"] = _jsonify(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Read a checkpoint document; returns (params dict, meta dict).

    ``params`` maps name -> float64 ndarray; ``meta`` carries rng_seed,
    config_hash and any extra payload.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"unrecognized checkpoint format: {doc.get('format')!r}")
    params = {}
    for name, entry in doc["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
        params[name] = arr
    meta = {
        "rng_seed": doc["rng_seed"],
        "config_hash": doc["config_hash"],
        "extra": doc.get("extra", {}),
    }
    return params, meta


def restore_into(store: ParameterStore, params: dict):
    """Copy checkpoint arrays into an already-built store, checking shapes."""
    missing = set(store.names()) - set(params)
    unexpected = set(params) - set(store.names())
    if missing or unexpected:
        raise InputError(
            f"checkpoint/model mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
    for name, arr in params.items():
        t = store[name]
        if t.data.shape != arr.shape:
            raise InputError(f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}")
        t.data = arr.copy()


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
