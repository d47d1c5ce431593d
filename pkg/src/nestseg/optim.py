"""Parameter storage, Adam, and the NSEG1 checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"NSEG1"


class MissingGradientError(RuntimeError):
    pass


class ParamStore:
    """Ordered mapping of parameter name to leaf tensor, plus Adam state."""

    def __init__(self, seed=0):
        self.seed = seed
        self.params = {}
        self.moments = {}
        self.step_count = 0

    def add(self, name, values):
        if name in self.params:
            raise KeyError(f"duplicate parameter id {name!r}")
        t = Tensor(values, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def num_values(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {k: p.values.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise KeyError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for k, v in state.items():
            p = self.params[k]
            if v.shape != p.shape:
                raise ValueError(f"parameter {k!r}: checkpoint shape {v.shape} != model shape {p.shape}")
            p.values = np.array(v, dtype=np.float64)


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter, then zero the grads."""
    missing = [k for k, p in store if p.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for parameters: {', '.join(missing)}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store:
        g = p.grad
        if name not in store.moments:
            store.moments[name] = (np.zeros_like(p.values), np.zeros_like(p.values))
        m, v = store.moments[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def save_checkpoint(path, state):
    """Write ``{name: array}`` as NSEG1: magic, then per parameter
    u32 name length, name bytes, u32 rank, u32 dims, f64 values (all little-endian)."""
    chunks = [MAGIC]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not an NSEG1 checkpoint")
    pos = len(MAGIC)
    state = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(data):
                raise ValueError(f"{path}: truncated values for {name!r}")
            state[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    return state
