"""Parameter checkpoints: JSON manifest plus one raw float64 file per tensor."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError
from ..tensorio import read_manifest, read_raw, write_manifest, write_raw


def _filename(name: str) -> str:
    return name.replace("/", "_") + ".f64"


def save_params(directory: str | Path, params: dict[str, np.ndarray], layers: list[dict[str, Any]] | None = None,
                seed: int | None = None, step_count: int = 0, **extra: Any) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, value in params.items():
        fname = _filename(name)
        write_raw(directory / fname, value)
        tensors.append({"name": name, "shape": list(value.shape), "file": fname})
    write_manifest(directory, {
        "layers": layers or [], "tensors": tensors, "seed": seed, "step_count": step_count,
        "dtype": "<f8", "order": "row-major", **extra,
    })


def load_params(directory: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    out = {}
    for t in manifest["tensors"]:
        out[t["name"]] = read_raw(directory / t["file"], tuple(t["shape"]))
    return out, manifest


def restore_into(params: dict[str, np.ndarray], loaded: dict[str, np.ndarray]) -> None:
    """Copy ``loaded`` values into the live parameter arrays ``params``."""
    missing = set(params) ^ set(loaded)
    if missing:
        raise DataError(f"checkpoint parameter names differ: {sorted(missing)}")
    for name, p in params.items():
        if p.shape != loaded[name].shape:
            raise DataError(f"{name}: checkpoint shape {loaded[name].shape} != model shape {p.shape}")
        p[...] = loaded[name]
