"""Checkpoint persistence: a manifest plus one tensor blob per weight.

A checkpoint directory contains ``manifest.json`` (model spec, training
history, normalization statistics, seed, dataset fingerprint, weight-file
index) and a ``weights/`` folder with one STN1 tensor per named parameter.
That is sufficient to resume or evaluate without touching the training
pipeline again. Manifests are written atomically (tmp + rename).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MinMaxStats, TargetStats
from .errors import FormatError
from .models import LayerSpec, Model, ModelSpec
from .tensorio import read_tensor, write_tensor
from .train import EpochStats

MANIFEST_NAME = "manifest.json"
WEIGHTS_DIR = "weights"

_TUPLE_FIELDS = {"kernel", "strides", "pool", "target"}


def _spec_to_json(spec: ModelSpec) -> dict:
    layers = []
    for lspec in spec.layers:
        d = {k: v for k, v in dataclasses.asdict(lspec).items() if v is not None}
        layers.append(d)
    return {"name": spec.name, "input_shape": list(spec.input_shape), "layers": layers}


def _spec_from_json(obj: dict) -> ModelSpec:
    layers = []
    for entry in obj["layers"]:
        kwargs = dict(entry)
        for key in _TUPLE_FIELDS:
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        layers.append(LayerSpec(**kwargs))
    return ModelSpec(obj["name"], layers, tuple(obj["input_shape"]))


@dataclass
class Checkpoint:
    model: Model
    history: list[EpochStats]
    input_stats: MinMaxStats | None
    target_stats: TargetStats | None
    seed: int
    dataset_fingerprint: str | None


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def save_checkpoint(path: str | Path, model: Model,
                    history: list[EpochStats] | None = None,
                    input_stats: MinMaxStats | None = None,
                    target_stats: TargetStats | None = None,
                    seed: int = 0,
                    dataset_fingerprint: str | None = None) -> None:
    path = Path(path)
    (path / WEIGHTS_DIR).mkdir(parents=True, exist_ok=True)
    weights = {}
    for name, arr in model.parameters().items():
        fname = f"{name}.stn"
        write_tensor(path / WEIGHTS_DIR / fname, arr)
        weights[name] = f"{WEIGHTS_DIR}/{fname}"
    manifest = {
        "format": "sonovox-checkpoint",
        "version": 1,
        "model": _spec_to_json(model.spec),
        "seed": int(seed),
        "dataset_fingerprint": dataset_fingerprint,
        "input_stats": None if input_stats is None else
            {"lo": input_stats.lo, "hi": input_stats.hi},
        "target_stats": None if target_stats is None else
            {"mean": [float(v) for v in target_stats.mean],
             "std": [float(v) for v in target_stats.std]},
        "history": [dataclasses.asdict(h) for h in (history or [])],
        "weights": weights,
    }
    _atomic_write(path / MANIFEST_NAME,
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, dtype=np.float32) -> Checkpoint:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"{path} is not a checkpoint directory (no {MANIFEST_NAME})")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "sonovox-checkpoint":
        raise FormatError(f"{manifest_path}: not a checkpoint manifest")
    spec = _spec_from_json(manifest["model"])
    model = Model.build(spec, seed=manifest.get("seed", 0), dtype=dtype)
    values = {}
    for name, rel in manifest["weights"].items():
        values[name] = read_tensor(path / rel).astype(dtype, copy=False)
    model.set_parameters(values)
    input_stats = None
    if manifest.get("input_stats"):
        s = manifest["input_stats"]
        input_stats = MinMaxStats(lo=s["lo"], hi=s["hi"])
    target_stats = None
    if manifest.get("target_stats"):
        s = manifest["target_stats"]
        target_stats = TargetStats(mean=np.array(s["mean"]), std=np.array(s["std"]))
    history = [EpochStats(**h) for h in manifest.get("history", [])]
    return Checkpoint(
        model=model, history=history, input_stats=input_stats,
        target_stats=target_stats, seed=manifest.get("seed", 0),
        dataset_fingerprint=manifest.get("dataset_fingerprint"),
    )


def checkpoint_fingerprint(path: str | Path) -> str:
    """Content hash of a checkpoint (manifest + weights), timestamp-free."""
    path = Path(path)
    digest = hashlib.sha256()
    files = [path / MANIFEST_NAME]
    files.extend(sorted((path / WEIGHTS_DIR).iterdir()))
    for p in files:
        if p.is_file():
            digest.update(p.name.encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()
