"""Minimal numerical engine: layers with exact hand-derived gradients.

The model is small enough (one graph convolution, one hypergraph convolution,
a two-layer predictor, cosine scoring) that each operation carries its own
backward rule; no general tape is needed. All forward functions preserve the
input dtype so the same code runs in float32 for training and float64 for
finite-difference checks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class NumericsError(ArithmeticError):
    """Non-finite values where finite ones are required."""


NORM_EPS = 1e-8

# count of cosine calls that hit the degenerate-norm guard
_guard_hits = 0


def cosine_guard_hits() -> int:
    return _guard_hits


def reset_cosine_guard() -> None:
    global _guard_hits
    _guard_hits = 0


class Parameter:
    """A named dense value with a same-shaped gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        # asarray keeps 0-d shapes (ascontiguousarray would promote them)
        self.value = np.asarray(value)
        if not self.value.flags.c_contiguous:
            self.value = np.ascontiguousarray(self.value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def spmm(sparse, dense):
    """Sparse (or dense) matrix times dense matrix, deterministic order."""
    dense = np.asarray(dense)
    if sparse.shape[1] != dense.shape[0]:
        raise ValueError(f"inner dims disagree: {sparse.shape} x {dense.shape}")
    if sp.issparse(sparse):
        return np.asarray(sparse.dot(dense))
    return np.asarray(sparse) @ dense


def linear_forward(x, w):
    return x @ w


def linear_backward(x, w, upstream):
    """Gradients of y = x @ w: returns (d/dx, d/dw)."""
    return upstream @ w.T, x.T @ upstream


def prelu_forward(x, slope):
    s = float(slope)
    return np.where(x >= 0, x, s * x)


def prelu_backward(x, slope, upstream):
    """Returns (d/dx, d/dslope); d/dslope sums x * upstream over negative x."""
    s = float(slope)
    dx = np.where(x < 0, s * upstream, upstream)
    # min(x, 0) zeroes the nonnegative entries, so one dot covers the sum
    dslope = np.vdot(np.minimum(x, 0), upstream)
    return dx, np.asarray(dslope, dtype=x.dtype)


def cosine_forward(a, b):
    """Cosine similarity of two vectors with degenerate-norm guard.

    Returns (value, ctx) where ctx feeds :func:`cosine_backward`. Norms are
    floored at NORM_EPS; the value is clipped to [-1, 1] against rounding.
    """
    global _guard_hits
    a = np.asarray(a)
    b = np.asarray(b)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na < NORM_EPS or nb < NORM_EPS:
        _guard_hits += 1
    na = max(na, NORM_EPS)
    nb = max(nb, NORM_EPS)
    c = float(np.dot(a, b)) / (na * nb)
    c = min(1.0, max(-1.0, c))
    return c, (a, b, na, nb, c)


def cosine_backward(ctx, upstream: float):
    a, b, na, nb, c = ctx
    da = (b / (na * nb) - c * a / (na * na)) * upstream
    db = (a / (na * nb) - c * b / (nb * nb)) * upstream
    return da.astype(a.dtype), db.astype(b.dtype)


class Adam:
    """Adam with bias correction over a fixed list of Parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        """Apply one update from the accumulated gradients, then zero them."""
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericsError(f"non-finite gradient for {p.name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.value -= (self.lr * update).astype(p.value.dtype)
            p.zero_grad()


def ema_update(target: Parameter, online: Parameter, tau: float) -> None:
    """target <- tau * target + (1 - tau) * online; no gradient ever crosses."""
    if target.value.shape != online.value.shape:
        raise ValueError(
            f"EMA shape mismatch: {target.value.shape} vs {online.value.shape}"
        )
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must be in [0, 1]")
    target.value *= tau
    target.value += (1.0 - tau) * online.value


@dataclass
class EmaLink:
    source: str  # online parameter name
    dest: str  # target parameter name
    tau: float


# ---------------------------------------------------------------------------
# checkpoint container: u32 header length, JSON header, float32 LE payload
# ---------------------------------------------------------------------------

_MAGIC = b"UGADCKP1"


def save_checkpoint(path, params, step: int, tau: float, optimizer: Adam | None = None) -> None:
    entries = []
    tensors = []
    for p in params:
        entries.append({"name": p.name, "shape": list(p.value.shape), "dtype": "float32"})
        tensors.append(np.ascontiguousarray(p.value, dtype="<f4"))
    if optimizer is not None:
        for p in optimizer.params:
            for tag, store in (("m", optimizer.m), ("v", optimizer.v)):
                name = f"adam.{tag}.{p.name}"
                entries.append({"name": name, "shape": list(p.value.shape), "dtype": "float32"})
                tensors.append(np.ascontiguousarray(store[p.name], dtype="<f4"))
    header = {
        "format": "ugad-checkpoint",
        "version": 1,
        "params": entries,
        "step": int(step),
        "tau": float(tau),
        "optimizer": optimizer is not None,
        "adam_step": int(optimizer.step_count) if optimizer is not None else 0,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in tensors:
            fh.write(t.tobytes())


def load_checkpoint(path):
    """Returns (header dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["params"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError("checkpoint payload truncated")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    return header, arrays
