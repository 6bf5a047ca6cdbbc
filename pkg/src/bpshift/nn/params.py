"""Named parameters, Adam state and the ``BPNN1`` checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"BPNN1"                 magic
    u32                      header length H
    H bytes                  UTF-8 JSON header
    payload                  raw tensor bytes, concatenated in header order

The header lists ``{"name", "dtype", "shape", "offset", "nbytes"}`` for each
tensor plus a free-form ``"meta"`` object.
"""

import json
import os
import struct
import tempfile
import zlib
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

MAGIC = b"BPNN1"
FORMAT_VERSION = 1


def param_rng(seed, name):
    """Generator for one named parameter, independent of the other names."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ParameterSet:
    """Ordered name -> :class:`Tensor` mapping with Adam moments."""

    def __init__(self, params=None):
        self._params = OrderedDict()
        self.m = {}
        self.v = {}
        self.t = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def count(self):
        """Total number of scalar parameters."""
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state):
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self

    # -- serialisation -------------------------------------------------

    def to_bytes(self, meta=None):
        entries, chunks, offset = [], [], 0
        for name, p in self._params.items():
            arr = np.ascontiguousarray(p.data)
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = arr.tobytes()
            entries.append({
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
        header = {"version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob):
        """Decode a checkpoint; returns ``(ParameterSet, meta)``."""
        if blob[: len(MAGIC)] != MAGIC:
            raise ValueError("not a BPNN1 checkpoint")
        (hlen,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
        start = len(MAGIC) + 4
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        base = start + hlen
        ps = cls()
        for e in header["tensors"]:
            raw = blob[base + e["offset"] : base + e["offset"] + e["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
            ps.add(e["name"], Tensor(arr.astype(arr.dtype.newbyteorder("="))))
        return ps, header.get("meta", {})

    def save(self, path, meta=None):
        """Write atomically (temp file in the same directory, then rename)."""
        atomic_write(path, self.to_bytes(meta))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def atomic_write(path, data):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data if isinstance(data, bytes) else data.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter with a gradient.

    The step counter ``params.t`` increments even when all gradients are
    zero or missing.
    """
    params.t += 1
    t = params.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = params.m.get(name)
        v = params.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        params.m[name] = m
        params.v[name] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return params
