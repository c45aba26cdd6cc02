"""Named parameter storage, initialisers, Adam and the weight file format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import MalformedHeaderError, ModelKindMismatchError, ShapeMismatchError, TruncatedFileError, VersionMismatchError

WEIGHT_MAGIC = "MAPW"
WEIGHT_VERSION = 1


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Ordered name -> parameter map with Adam state."""

    def __init__(self):
        self._p: dict[str, Param] = {}
        self.step = 0

    def add(self, name, value):
        if name in self._p:
            raise KeyError(f"parameter {name!r} already defined")
        value = np.array(value, dtype=np.float64)
        self._p[name] = Param(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name):
        return self._p[name].value

    def __contains__(self, name):
        return name in self._p

    def __iter__(self):
        return iter(self._p)

    def __len__(self):
        return len(self._p)

    def names(self):
        return list(self._p)

    def values(self):
        return {k: p.value for k, p in self._p.items()}

    def param(self, name) -> Param:
        return self._p[name]

    def zero_grad(self):
        for p in self._p.values():
            p.grad[...] = 0.0

    def set_grads(self, grads: dict):
        for k, g in grads.items():
            p = self._p[k]
            if g.shape != p.value.shape:
                raise ShapeMismatchError(f"gradient for {k!r} has shape {g.shape}, parameter {p.value.shape}")
            p.grad[...] = g

    def count(self):
        return int(sum(p.value.size for p in self._p.values()))

    def snapshot(self):
        return {k: p.value.copy() for k, p in self._p.items()}

    def restore(self, snap):
        for k, v in snap.items():
            self._p[k].value[...] = v

    def grad_norm(self):
        return float(np.sqrt(sum(np.sum(p.grad ** 2) for p in self._p.values())))


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out) if shape is None else shape)


def init_dense(store, prefix, rng, n_in, n_out):
    store.add(prefix + ".W", xavier_uniform(rng, n_in, n_out))
    store.add(prefix + ".b", np.zeros(n_out))


def init_lstm(store, prefix, rng, n_in, n_hid, groups=None):
    """Xavier input weights, uniform(+-1/sqrt(h)) recurrent weights, forget bias +1."""
    lead = () if groups is None else (groups,)
    store.add(prefix + ".Wx", xavier_uniform(rng, n_in, 4 * n_hid, lead + (n_in, 4 * n_hid)))
    lim = 1.0 / np.sqrt(n_hid)
    store.add(prefix + ".Wh", rng.uniform(-lim, lim, lead + (n_hid, 4 * n_hid)))
    b = np.zeros(lead + ((1,) if groups is not None else ()) + (4 * n_hid,))
    b[..., n_hid:2 * n_hid] = 1.0
    store.add(prefix + ".b", b)


def init_mha(store, prefix, rng, d):
    for k in ("WQ", "WK", "WV", "WO"):
        store.add(f"{prefix}.{k}", xavier_uniform(rng, d, d))


def sub(store, prefix, keys):
    return {k: store[f"{prefix}.{k}"] for k in keys}


LSTM_KEYS = ("Wx", "Wh", "b")
MHA_KEYS = ("WQ", "WK", "WV", "WO")


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of every parameter from its stored gradient."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in store._p.values():
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad * p.grad
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)


# ---------------------------------------------------------------- file format


def save_weights(store: ParamStore, path, kind, extra=None):
    manifest = {
        "format": WEIGHT_VERSION,
        "kind": kind,
        "params": [{"name": k, "shape": list(store[k].shape)} for k in store.names()],
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(f"{WEIGHT_MAGIC} v{WEIGHT_VERSION}\n".encode())
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for k in store.names():
            fh.write(np.ascontiguousarray(store[k], dtype="<f8").tobytes())


def load_weights(path, expected_kind=None):
    """Returns (ParamStore, kind, extra)."""
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    header = data[:nl].decode(errors="replace") if nl >= 0 else ""
    parts = header.split()
    if len(parts) != 2 or parts[0] != WEIGHT_MAGIC or not parts[1].startswith("v"):
        raise MalformedHeaderError(f"{path}: not a weight file")
    try:
        version = int(parts[1][1:])
    except ValueError:
        raise MalformedHeaderError(f"{path}: bad version tag {parts[1]!r}") from None
    if version != WEIGHT_VERSION:
        raise VersionMismatchError(version, WEIGHT_VERSION)
    pos = nl + 1
    if len(data) < pos + 8:
        raise TruncatedFileError(f"{path}: manifest length missing", expected=pos + 8, actual=len(data))
    (n,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    if len(data) < pos + n:
        raise TruncatedFileError(f"{path}: manifest cut short", expected=pos + n, actual=len(data))
    try:
        manifest = json.loads(data[pos:pos + n])
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f"{path}: unreadable manifest ({exc})") from None
    pos += n
    kind = manifest["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise ModelKindMismatchError(expected_kind, kind)
    sizes = [int(np.prod(e["shape"], dtype=np.int64)) for e in manifest["params"]]
    need = pos + 8 * sum(sizes)
    if len(data) != need:
        raise TruncatedFileError(f"{path}: weight blob holds {len(data) - pos} bytes, manifest needs {need - pos}",
                                 expected=need - pos, actual=len(data) - pos)
    store = ParamStore()
    for e, size in zip(manifest["params"], sizes):
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(e["shape"]).astype(np.float64)
        store.add(e["name"], arr)
        pos += 8 * size
    return store, kind, manifest.get("extra", {})
