"""Tensor fixtures: little-endian float64 flat binaries with a JSON sidecar, or CSV."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_tensor(path: str | Path, array) -> Path:
    """Write ``<path>.bin`` plus ``<path>.json`` holding {shape, dtype}."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f8")
    path.with_suffix(".bin").write_bytes(arr.tobytes())
    path.with_suffix(".json").write_text(json.dumps({"shape": list(arr.shape), "dtype": "float64"}))
    return path.with_suffix(".bin")


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return np.atleast_1d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("dtype", "float64") != "float64":
        raise ValueError(f"unsupported tensor dtype {meta['dtype']!r}")
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    return data.reshape(meta["shape"]).astype(np.float64)


def save_dataset(directory: str | Path, arrays: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        save_tensor(directory / name, arr)


def load_dataset(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"{directory} is not a dataset directory")
    out = {p.stem: load_tensor(p) for p in sorted(directory.glob("*.bin"))}
    if not out:
        raise ValueError(f"{directory} holds no .bin tensors")
    return out
