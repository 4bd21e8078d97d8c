"""Named parameter store, initialisation and the on-disk container format.

Container layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"CEP3PSET"
    8       4     uint32 format version (1)
    12      8     uint64 manifest length M in bytes
    20      M     UTF-8 JSON manifest: {"version": 1, "seed": int|null,
                  "arrays": [{"name", "shape", "dtype": "float32",
                              "offset", "count", "init"}]}
    20+M    ...   float32 little-endian array payloads, C order, packed in
                  manifest order; "offset" is relative to the payload start.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import DTYPE, Tensor

MAGIC = b"CEP3PSET"
FORMAT_VERSION = 1


class ParameterSet:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, seed: int | None = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}
        self._init: dict[str, str] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, shape, init: str = "uniform", fan_in: int | None = None) -> Tensor:
        """Create a parameter.

        ``uniform`` draws from U(-sqrt(1/fan_in), sqrt(1/fan_in)) with fan_in
        defaulting to ``shape[0]``; ``zeros`` is used for biases;
        ``loguniform`` spreads magnitudes over [1e-3, 1e1] (time frequencies).
        """
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if init == "zeros":
            value = np.zeros(shape, dtype=DTYPE)
        elif init == "uniform":
            fan = fan_in if fan_in is not None else shape[0]
            bound = np.sqrt(1.0 / max(fan, 1))
            value = self.rng.uniform(-bound, bound, size=shape)
        elif init == "loguniform":
            value = 10.0 ** self.rng.uniform(-3.0, 1.0, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        self._init[name] = init
        return t

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def collect(self, grads: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
        """Per-name gradients; parameters absent from ``grads`` get zeros."""
        return {
            name: np.array(grads[t], dtype=DTYPE) if t in grads else np.zeros_like(t.value)
            for name, t in self._params.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            tgt = self._params[name]
            if tgt.shape != tuple(arr.shape):
                raise ValueError(f"{name}: shape {arr.shape} != {tgt.shape}")
            tgt.value = np.asarray(arr, dtype=DTYPE).copy()

    # ------------------------------------------------------------------ io

    def save(self, path: str | Path) -> None:
        entries, chunks, offset = [], [], 0
        for name, t in self._params.items():
            arr = np.ascontiguousarray(t.value, dtype="<f4")
            entries.append({
                "name": name, "shape": list(t.shape), "dtype": "float32",
                "offset": offset, "count": int(arr.size), "init": self._init[name],
            })
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        manifest = json.dumps({"version": FORMAT_VERSION, "seed": self.seed, "arrays": entries},
                              sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(manifest)))
            fh.write(manifest)
            for c in chunks:
                fh.write(c)

    @staticmethod
    def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        version, mlen = struct.unpack("<IQ", data[8:20])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        manifest = json.loads(data[20:20 + mlen].decode("utf-8"))
        payload = memoryview(data)[20 + mlen:]
        arrays = {}
        for e in manifest["arrays"]:
            raw = np.frombuffer(payload, dtype="<f4", count=e["count"], offset=e["offset"])
            arrays[e["name"]] = raw.astype(DTYPE).reshape(e["shape"])
        return manifest, arrays

    def load(self, path: str | Path) -> None:
        _, arrays = self.read_container(path)
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"container lacks parameters: {sorted(missing)}")
        self.load_values(arrays)
