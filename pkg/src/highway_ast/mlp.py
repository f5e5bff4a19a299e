"""Minimal dense networks with manual backprop, shared by the driving policy
and the danger classifier.

Hidden layers are rectified-linear with optional inverted dropout; the output
layer is linear (callers apply softmax where needed).  Weight files are a
small versioned binary: magic, version, layer dims, extra scalars, then
row-major little-endian float64 weight and bias blocks per layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class WeightFormatError(ValueError):
    """Weight file is corrupt, truncated, or has the wrong magic/version."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss."""


@dataclass
class Mlp:
    """Fully connected net; weights[i] has shape (fan_in, fan_out)."""

    weights: list
    biases: list

    @classmethod
    def create(cls, dims: Sequence[int], seed: int) -> "Mlp":
        """He-initialized network with the given layer sizes."""
        if len(dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        rng = np.random.default_rng(np.random.PCG64(seed))
        weights = []
        biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def dims(self) -> tuple:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def validate_finite(self) -> None:
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainingError("network weights contain non-finite values")

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Deterministic forward pass (dropout off). x: (d,) or (batch, d)."""
        out, _ = self.forward_cached(np.atleast_2d(np.asarray(x, dtype=float)))
        return out

    def forward_cached(
        self,
        x: np.ndarray,
        dropout_p: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> tuple:
        """Forward pass returning (output, cache) for backward().

        With dropout_p > 0 an rng must be supplied; dropout uses inverted
        scaling so no rescale is needed at evaluation time.
        """
        if dropout_p > 0.0 and rng is None:
            raise ValueError("dropout requires an rng")
        h = np.atleast_2d(np.asarray(x, dtype=float))
        inputs = [h]
        zs = []
        masks = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                zs.append(z)
                h = np.maximum(z, 0.0)
                if dropout_p > 0.0:
                    keep = rng.random(h.shape) >= dropout_p
                    h = h * keep / (1.0 - dropout_p)
                    masks.append(keep)
                else:
                    masks.append(None)
            else:
                h = z
            inputs.append(h)
        return h, (inputs, zs, masks, dropout_p)

    def backward(self, cache: tuple, grad_out: np.ndarray) -> list:
        """Gradients [(dW, db), ...] given dLoss/dOutput of shape (batch, d_out)."""
        inputs, zs, masks, dropout_p = cache
        grads = [None] * self.n_layers
        g = np.atleast_2d(grad_out)
        for i in reversed(range(self.n_layers)):
            grads[i] = (inputs[i].T @ g, g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i].T
                if masks[i - 1] is not None:
                    g = g * masks[i - 1] / (1.0 - dropout_p)
                g = g * (zs[i - 1] > 0.0)
        return grads


@dataclass
class Adam:
    """Adam optimizer state for one Mlp."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: Mlp, grads: list) -> None:
        if not self.m:
            for w, b in zip(net.weights, net.biases):
                self.m.append((np.zeros_like(w), np.zeros_like(b)))
                self.v.append((np.zeros_like(w), np.zeros_like(b)))
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (dw, db) in enumerate(grads):
            for slot, param, grad in ((0, net.weights[i], dw), (1, net.biases[i], db)):
                m = self.m[i][slot]
                v = self.v[i][slot]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.atleast_2d(z)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Weight file I/O.

_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")


def save_mlp(path, net: Mlp, magic: bytes, version: int, extras: Sequence[float] = ()) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    net.validate_finite()
    dims = net.dims
    parts = [_HEADER.pack(magic, version, net.n_layers)]
    for d in dims:
        parts.append(_U32.pack(d))
    parts.append(_U32.pack(len(extras)))
    parts.append(np.asarray(extras, dtype="<f8").tobytes())
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_mlp(path, magic: bytes, version: int) -> tuple:
    """Load (Mlp, extras) saved by save_mlp; strict about magic, version, size."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise WeightFormatError(f"truncated weight file: missing {what}")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    offset = 0
    got_magic, got_version, n_layers = _HEADER.unpack(take(_HEADER.size, "header"))
    if got_magic != magic:
        raise WeightFormatError(
            f"bad magic {got_magic!r}, expected {magic!r}"
        )
    if got_version != version:
        raise WeightFormatError(
            f"unsupported weight file version {got_version}, expected {version}"
        )
    if n_layers < 1 or n_layers > 64:
        raise WeightFormatError(f"implausible layer count {n_layers}")
    dims = [_U32.unpack(take(_U32.size, "dims"))[0] for _ in range(n_layers + 1)]
    (n_extras,) = _U32.unpack(take(_U32.size, "extras count"))
    extras = np.frombuffer(take(8 * n_extras, "extras"), dtype="<f8").tolist()
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(take(8 * fan_in * fan_out, "weights"), dtype="<f8")
        b = np.frombuffer(take(8 * fan_out, "biases"), dtype="<f8")
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(blob):
        raise WeightFormatError("trailing bytes after weight data")
    net = Mlp(weights, biases)
    net.validate_finite()
    return net, tuple(extras)
