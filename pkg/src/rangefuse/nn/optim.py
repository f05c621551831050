"""Named parameter store, seeded initialization, Adam, and checkpoints.

Parameters are created lazily by name; initialization draws from a child
RNG keyed by the parameter's name, so a store is reproducible regardless
of the order layers first touch their weights. Checkpoints are a JSON
manifest (name/shape/offset) behind an 8-byte little-endian length header,
followed by raw little-endian float64 data; round trips are byte-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..seeding import child_rng
from .tensor import Tensor

_FORMAT = 1


class ParamStore:
    """Mutable map of parameter name -> Tensor plus Adam state."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def param(self, name: str, shape: tuple[int, ...], init: str = "glorot",
              fan: tuple[int, int] | None = None) -> Tensor:
        """Fetch a parameter, creating it on first touch.

        `init` is "glorot" (uniform, fan-scaled) or "zeros". `fan` overrides
        the (fan_in, fan_out) inferred from the shape; biases and other 1-D
        parameters default to zeros.
        """
        if name in self.params:
            t = self.params[name]
            if t.data.shape != tuple(shape):
                raise ValueError(f"parameter {name} exists with shape {t.data.shape}, requested {shape}")
            return t
        shape = tuple(int(s) for s in shape)
        if init == "zeros" or len(shape) < 2 and init == "glorot":
            data = np.zeros(shape, dtype=np.float64)
        elif init == "glorot":
            if fan is None:
                if len(shape) == 2:
                    fan = (shape[0], shape[1])
                elif len(shape) == 3:
                    fan = (shape[1] * shape[2], shape[0] * shape[2])
                else:
                    raise ValueError(f"cannot infer fan for shape {shape}; pass fan=")
            limit = np.sqrt(6.0 / (fan[0] + fan[1]))
            data = child_rng(self.seed, f"init:{name}").uniform(-limit, limit, shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale all gradients so their joint L2 norm is at most max_norm."""
        total = 0.0
        for name in self.names():
            g = self.params[name].grad
            if g is not None:
                total += float(np.sum(g * g))
        norm = float(np.sqrt(total))
        if norm > max_norm > 0.0:
            scale = max_norm / norm
            for t in self.params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over all parameters; grads are zeroed after."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.names():
        p = store.params[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store._m[name] = m
        store._v[name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grads()


def save_checkpoint(store: ParamStore, path, meta: dict | None = None) -> None:
    """Write parameters to `path`; see module docstring for the layout."""
    names = store.names()
    manifest_params = []
    offset = 0
    blobs = []
    for name in names:
        data = store.params[name].data
        blob = np.ascontiguousarray(data, dtype="<f8").tobytes()
        manifest_params.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": _FORMAT,
        "seed": store.seed,
        "step": store.step_count,
        "meta": meta or {},
        "params": manifest_params,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Read a checkpoint back into a fresh ParamStore; returns (store, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"checkpoint {path} is truncated")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise ValueError(f"checkpoint {path} has a corrupt header length")
    manifest = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    if manifest.get("format") != _FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')}")
    store = ParamStore(manifest["seed"])
    store.step_count = int(manifest["step"])
    base = 8 + header_len
    for entry in manifest["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + int(entry["offset"])
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(shape)
        store.params[entry["name"]] = Tensor(data.astype(np.float64).copy(), requires_grad=True)
    return store, manifest.get("meta", {})
