"""Weight files: one JSON header line, then raw little-endian float64 blobs.

The header carries the op-graph description, parameter names/shapes in
declaration order, and the training seed; payload bytes follow in the same
order.  Round-trips are exact (no text formatting of floats).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import EngineError, Tensor

_MAGIC = "fixsynth-weights"
_VERSION = 1


class SerializationError(EngineError):
    pass


def save_params(path: str | Path, params: dict[str, Tensor],
                graph: dict, seed: int | None = None,
                extra: dict | None = None) -> None:
    header = {
        "magic": _MAGIC,
        "version": _VERSION,
        "graph": graph,
        "seed": seed,
        "params": [{"name": name, "shape": list(t.shape)} for name, t in params.items()],
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[dict, dict[str, Tensor]]:
    """Returns (header, params); params are requires_grad=True tensors."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SerializationError(f"{path}: malformed weight header") from exc
        if header.get("magic") != _MAGIC:
            raise SerializationError(f"{path}: not a weight file (bad magic)")
        params: dict[str, Tensor] = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise SerializationError(
                    f"{path}: truncated payload for parameter '{spec['name']}'")
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            params[spec["name"]] = Tensor(arr, requires_grad=True)
        trailing = fh.read(1)
        if trailing:
            raise SerializationError(f"{path}: unexpected trailing bytes")
    return header, params
