"""Checkpoint directories: manifest.json + tensors.bin.

The manifest carries the format version, the training-step counter, a config
echo, and a tensor table (name, dtype, shape, byte offset/length).  Buffers
are concatenated little-endian row-major in sorted-name order, which makes
the round trip bit-exact and the files byte-deterministic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensor import Tensor

FORMAT_VERSION = 1

_DTYPE_TO_TAG = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_TAG_TO_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    step: int
    config: dict

    def params(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Wrap stored arrays as trainable tensors (copies)."""
        return {k: Tensor(v.copy(), requires_grad=requires_grad)
                for k, v in self.tensors.items()}


def save_checkpoint(path: str, tensors: dict, step: int, config: dict) -> None:
    os.makedirs(path, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.dtype not in _DTYPE_TO_TAG:
            raise DataError(f"checkpoint tensor '{name}' has unsupported dtype {arr.dtype}")
        arrays[name] = arr

    table = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = arrays[name]
        blob = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        table.append({
            "name": name,
            "dtype": _DTYPE_TO_TAG[arr.dtype],
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "config": config,
        "tensors": table,
    }
    with open(os.path.join(path, "tensors.bin"), "wb") as f:
        for blob in blobs:
            f.write(blob)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    manifest_path = os.path.join(path, "manifest.json")
    bin_path = os.path.join(path, "tensors.bin")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint manifest at {manifest_path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {manifest.get('format_version')}")
    try:
        with open(bin_path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint buffers at {bin_path}: {e}") from e

    tensors: dict[str, np.ndarray] = {}
    total = 0
    for entry in manifest["tensors"]:
        dtype = _TAG_TO_DTYPE.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"tensor '{entry['name']}': unknown dtype tag {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if entry["length"] != expected:
            raise DataError(
                f"tensor '{entry['name']}': length {entry['length']} != shape {shape} x {dtype}")
        lo, hi = entry["offset"], entry["offset"] + entry["length"]
        if hi > len(raw):
            raise DataError(f"tensor '{entry['name']}': buffer truncated ({hi} > {len(raw)})")
        arr = np.frombuffer(raw[lo:hi], dtype=dtype).reshape(shape)
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        total += entry["length"]
    if total != len(raw):
        raise DataError(f"checkpoint buffer size {len(raw)} != manifest total {total}")
    return Checkpoint(tensors=tensors, step=int(manifest["step"]), config=manifest["config"])
