"""Named parameter arrays with matching gradient buffers, plus checkpoint I/O.

Checkpoint format (version 1): a JSON document
``{"format": "radarfusion-params", "version": 1, "arrays": {name:
{"shape": [...], "data": "<base64>"}}}`` where data is the raw
little-endian float64 buffer in C order.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "radarfusion-params"
CHECKPOINT_VERSION = 1


class ParamBlock:
    """A flat dict of named float64 parameter arrays and their gradients."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.array(array, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        return list(self._values.keys())

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self._grads[name]
        if np.shape(grad) != g.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        g += grad

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamBlock":
        out = ParamBlock()
        for name, v in self._values.items():
            out.add(name, v.copy())
            out._grads[name][...] = self._grads[name]
        return out

    def save(self, path) -> None:
        arrays = {}
        for name, v in sorted(self._values.items()):
            buf = np.ascontiguousarray(v, dtype="<f8").tobytes()
            arrays[name] = {
                "shape": list(v.shape),
                "data": base64.b64encode(buf).decode("ascii"),
            }
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "arrays": arrays,
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ParamBlock":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unrecognized checkpoint format in {path}")
        block = cls()
        for name, entry in doc["arrays"].items():
            buf = base64.b64decode(entry["data"])
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(entry["shape"])
            block.add(name, arr)
        return block


def sgd_step(params: ParamBlock, learning_rate: float) -> None:
    """In-place p <- p - lr * g for every parameter, then zero the gradients.

    Aborts without touching any parameter if a gradient is non-finite.
    """
    for name in params.names():
        if not np.all(np.isfinite(params.grad(name))):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    for name in params.names():
        params.value(name)[...] -= learning_rate * params.grad(name)
    params.zero_grads()
