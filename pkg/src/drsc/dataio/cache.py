"""Per-utterance feature cache.

Each utterance is stored as ``<id>.f32`` plus a ``<id>.json`` sidecar. The
binary layout (all little-endian) is::

    magic  b"DRSC"        4 bytes
    version               uint32
    n_arrays              uint32
    per array: ndim uint32, dims uint32 * ndim, data float32 * prod(dims)

A cached entry is reused only when its sidecar carries the current
extraction parameters; anything else is recomputed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable

import numpy as np

from drsc.config import stable_hash

MAGIC = b"DRSC"
VERSION = 1


def write_arrays(path: str | Path, arrays: list[np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path: str | Path) -> list[np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a feature container")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: container version {version}, expected {VERSION}")
    offset, out = 12, []
    for _ in range(n):
        (ndim,) = struct.unpack_from("<I", blob, offset)
        shape = struct.unpack_from(f"<{ndim}I", blob, offset + 4)
        offset += 4 + 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        out.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy())
        offset += 4 * count
    return out


class FeatureCache:
    def __init__(self, root: str | Path, params: dict):
        self.root = Path(root)
        self.params = params
        self.params_hash = stable_hash(params)

    def _paths(self, key: str) -> tuple[Path, Path]:
        safe = key.replace("/", "_")
        return self.root / f"{safe}.f32", self.root / f"{safe}.json"

    def is_valid(self, key: str) -> bool:
        data, side = self._paths(key)
        if not (data.exists() and side.exists()):
            return False
        meta = json.loads(side.read_text(encoding="utf-8"))
        return meta.get("params_hash") == self.params_hash and meta.get("version") == VERSION

    def get(self, key: str) -> list[np.ndarray] | None:
        return read_arrays(self._paths(key)[0]) if self.is_valid(key) else None

    def put(self, key: str, arrays: list[np.ndarray]) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        data, side = self._paths(key)
        write_arrays(data, arrays)
        side.write_text(json.dumps({"version": VERSION, "params": self.params,
                                    "params_hash": self.params_hash}, sort_keys=True),
                        encoding="utf-8")

    def get_or_compute(self, key: str, compute: Callable[[], list[np.ndarray]]) -> list[np.ndarray]:
        hit = self.get(key)
        if hit is not None:
            return hit
        arrays = [np.asarray(a, dtype=np.float32) for a in compute()]
        self.put(key, arrays)
        return arrays
