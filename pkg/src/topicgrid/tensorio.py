"""Raw tensor dumps: a JSON manifest next to little-endian float64 files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

MANIFEST = "manifest.json"


def write_raw(path: str | Path, array: np.ndarray) -> None:
    np.ascontiguousarray(array, dtype="<f8").tofile(path)


def read_raw(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    data = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} float64 values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def write_manifest(directory: str | Path, manifest: dict[str, Any]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(directory: str | Path) -> dict[str, Any]:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise DataError(f"missing manifest: {path}")
    return json.loads(path.read_text())


def dump_tensor(directory: str | Path, array: np.ndarray, **meta: Any) -> None:
    """Write ``array`` as ``data.f64`` plus a manifest recording its shape and ``meta``."""
    directory = Path(directory)
    manifest = dict(meta)
    manifest["shape"] = list(array.shape)
    manifest["dtype"] = "<f8"
    manifest["data"] = "data.f64"
    write_manifest(directory, manifest)
    write_raw(directory / "data.f64", array)


def load_tensor(directory: str | Path) -> tuple[np.ndarray, dict[str, Any]]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    array = read_raw(directory / manifest["data"], tuple(manifest["shape"]))
    return array, manifest
