"""Named parameter storage, the Adam optimiser and checkpoint files.

Checkpoint layout (all integers little-endian)::

    b"SLUCKPT\\n"                  8-byte magic
    <uint64 header length>
    <header: UTF-8 JSON>           {"schema": 1, "name": ..., "metadata": {...},
                                    "entries": [{"name", "dtype", "shape"}, ...]}
    <raw values>                   each entry's C-ordered bytes, in entry order

Values are written with their own dtype, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SLUCKPT\n"
SCHEMA_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, path):
        super().__init__(f"non-finite gradient in parameter {path!r}")
        self.path = path


class ParameterSet:
    """Ordered map of parameter path -> array, with a parallel gradient map."""

    def __init__(self, values=None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name, value):
        value = np.asarray(value)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.values[name]

    def __setitem__(self, name, value):
        value = np.asarray(value)
        if name in self.values and value.shape != self.values[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != existing {self.values[name].shape}")
        self.values[name] = value
        if name not in self.grads or self.grads[name].shape != value.shape:
            self.grads[name] = np.zeros_like(value)

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def accumulate(self, name, grad):
        self.grads[name] += grad

    def copy(self):
        out = ParameterSet()
        for name, value in self.values.items():
            out.values[name] = value.copy()
            out.grads[name] = self.grads[name].copy()
        return out

    def astype(self, dtype):
        out = ParameterSet()
        for name, value in self.values.items():
            out.add(name, value.astype(dtype))
        return out

    def num_parameters(self):
        return sum(v.size for v in self.values.values())


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Decay is applied as ``p <- p - lr * wd * p`` before the Adam update.
    Moment buffers are created lazily, zero-initialised, per parameter path.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParameterSet, lr, frozen=()):
        for name, g in params.grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.values.items():
            if name in frozen:
                continue
            g = params.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p -= (lr * self.weight_decay) * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params, optimizer, lr):
    """Functional spelling of :meth:`Adam.step`."""
    return optimizer.step(params, lr)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    name: str
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def save(self, path):
        entries = []
        blobs = []
        for key, arr in self.arrays.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            entries.append({"name": key, "dtype": le.dtype.str, "shape": list(arr.shape)})
            blobs.append(le.tobytes(order="C"))
        header = json.dumps(
            {"schema": SCHEMA_VERSION, "name": self.name, "metadata": self.metadata, "entries": entries},
            sort_keys=True,
        ).encode("utf-8")
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        return path

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
        start = len(MAGIC) + 8
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        if header.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint schema {header.get('schema')}")
        offset = start + hlen
        arrays = {}
        for entry in header["entries"]:
            dtype = np.dtype(entry["dtype"])
            count = math.prod(entry["shape"])
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
            offset += count * dtype.itemsize
        if offset != len(data):
            raise ValueError(f"{path}: {len(data) - offset} trailing bytes after checkpoint payload")
        return cls(header["name"], arrays, header["metadata"])
