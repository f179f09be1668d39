"""Checkpoint serialization: parameter trees to/from JSON.

Format: one JSON object ``{"format": "hybridqrl-checkpoint-1", "params":
{name: {"shape": [...], "data": [flat floats]}}}``.  Floats go through
Python's repr round-trip, so values restore bit-exactly.
"""
from __future__ import annotations

import json
import os
import tempfile
from typing import Mapping

import numpy as np

from .autodiff import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_TAG"]

FORMAT_TAG = "hybridqrl-checkpoint-1"


def _entry(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}


def save_checkpoint(params: Mapping[str, "Tensor | np.ndarray"], path: str) -> None:
    """Write atomically (temp file + rename in the target directory)."""
    tree = {}
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        tree[name] = _entry(arr)
    payload = {"format": FORMAT_TAG, "params": tree}
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a recognized checkpoint "
                         f"(format={payload.get('format')!r})")
    out = {}
    for name, entry in payload["params"].items():
        out[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return out


def restore_into(params: Mapping[str, Tensor], tree: Mapping[str, np.ndarray],
                 strict: bool = True) -> None:
    """Copy ``tree`` values into existing tensors (shapes must match)."""
    missing = [k for k in params if k not in tree]
    if strict and missing:
        raise KeyError(f"checkpoint missing parameters: {missing}")
    for name, p in params.items():
        if name in tree:
            arr = tree[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != "
                                 f"parameter shape {p.data.shape}")
            p.data[...] = arr
