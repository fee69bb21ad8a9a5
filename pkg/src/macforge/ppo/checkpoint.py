"""Versioned JSON checkpoints with bit-exact weight storage."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .algo import AdamState, PpoHyper
from .net import PARAM_ORDER, Architecture

FORMAT = "macforge-ppo-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _pack_tree(tree: dict) -> dict:
    return {k: _pack(tree[k]) for k in PARAM_ORDER}


def dumps(arch: Architecture, params: dict, adam: AdamState | None = None,
          rng: np.random.Generator | None = None, hyper: PpoHyper | None = None,
          step: int = 0, extra: dict | None = None) -> str:
    doc = {"format": FORMAT, "version": VERSION, "arch": arch.to_json(), "step": step,
           "params": _pack_tree(params)}
    if adam is not None:
        doc["adam"] = {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                       "m": _pack_tree(adam.m), "v": _pack_tree(adam.v)}
    if rng is not None:
        doc["rng"] = rng.bit_generator.state
    if hyper is not None:
        doc["hyper"] = hyper.to_json()
    if extra:
        doc["extra"] = extra
    return json.dumps(doc, sort_keys=True, indent=1)


def save(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(dumps(*args, **kwargs))
    return path


def loads(text: str, expect: Architecture | None = None) -> dict:
    """Parse a checkpoint into ``arch, params, adam, rng, hyper, step, extra``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a JSON checkpoint: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r} v{doc.get('version')}")
    arch = Architecture.from_json(doc["arch"])
    if expect is not None and arch != expect:
        raise CheckpointError(f"architecture mismatch: checkpoint {arch}, expected {expect}")
    shapes = arch.shapes()
    params = {k: _unpack(doc["params"][k]) for k in PARAM_ORDER}
    for k, v in params.items():
        if v.shape != shapes[k]:
            raise CheckpointError(f"parameter {k} has shape {v.shape}, expected {shapes[k]}")
    out = {"arch": arch, "params": params, "adam": None, "rng": None,
           "hyper": None, "step": doc.get("step", 0), "extra": doc.get("extra", {})}
    if "adam" in doc:
        a = doc["adam"]
        out["adam"] = AdamState({k: _unpack(a["m"][k]) for k in PARAM_ORDER},
                                {k: _unpack(a["v"][k]) for k in PARAM_ORDER},
                                a["t"], a["beta1"], a["beta2"], a["eps"])
    if "rng" in doc:
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng"]
        out["rng"] = rng
    if "hyper" in doc:
        out["hyper"] = PpoHyper(**doc["hyper"])
    return out


def load(path, expect: Architecture | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(text, expect)
