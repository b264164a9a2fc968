"""Small fully connected network with hand-written backprop and Adam.

Everything is float64 so central finite differences can check the gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from collections.abc import Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_HIDDEN = (128, 64, 32)


@dataclass
class Mlp:
    """ReLU hidden layers, identity output. ``weights[k]`` has shape (out, in)."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ShapeError(f"invalid widths {self.widths}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[k + 1], self.widths[k]) or b.shape != (self.widths[k + 1],):
                raise ShapeError(f"layer {k} shape mismatch")

    @classmethod
    def create(cls, widths: Sequence[int], rng: np.random.Generator) -> Mlp:
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ShapeError(f"invalid widths {widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths, widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(widths, weights, biases)

    @classmethod
    def zeros(cls, widths: Sequence[int]) -> Mlp:
        widths = tuple(int(w) for w in widths)
        return cls(widths, [np.zeros((b, a)) for a, b in zip(widths, widths[1:])], [np.zeros(b) for b in widths[1:]])

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> Mlp:
        return Mlp(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: Mlp) -> None:
        if other.widths != self.widths:
            raise ShapeError("width mismatch")
        for dst, src in zip(self.params, other.params):
            dst[...] = src


@dataclass
class ForwardCache:
    activations: list[np.ndarray]
    pre: list[np.ndarray]


def _as_batch(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.widths[0]:
        raise ShapeError(f"input shape {x.shape} does not match width {net.widths[0]}")
    return x2, single


def forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    h, single = _as_batch(net, x)
    acts, pre = [h], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return (h[0] if single else h), ForwardCache(acts, pre)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return forward_cached(net, x)[0]


def mse_loss(net: Mlp, x: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    out = np.atleast_2d(forward(net, x))
    diff = out - np.atleast_2d(target)
    if mask is not None:
        diff = diff * np.atleast_2d(mask)
    return float(np.mean(np.sum(diff**2, axis=1)))


def backward(
    net: Mlp, x: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, list[np.ndarray]]:
    """Loss and gradients (ordered like ``net.params``).

    The loss is the squared error summed over outputs and averaged over the
    batch; ``mask`` zeroes outputs that carry no target (Q-learning updates
    only the action taken).
    """
    out, cache = forward_cached(net, x)
    out = np.atleast_2d(out)
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if target.shape != out.shape:
        raise ShapeError(f"target shape {target.shape} does not match output {out.shape}")
    diff = out - target
    if mask is not None:
        diff = diff * np.atleast_2d(mask)
    n = out.shape[0]
    loss = float(np.sum(diff**2) / n)
    delta = 2.0 * diff / n
    grads_w: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        grads_w[k] = delta.T @ cache.activations[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * (cache.pre[k - 1] > 0)
    return loss, [g for pair in zip(grads_w, grads_b) for g in pair]


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """Bias-corrected Adam, updating ``params`` in place."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError("parameter and gradient shapes differ")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_checkpoint(net: Mlp, path: str | Path) -> None:
    """Header: layer count then widths (little-endian int64); body: W then b per layer, float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", len(net.widths)))
        fh.write(struct.pack(f"<{len(net.widths)}q", *net.widths))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Mlp:
    data = Path(path).read_bytes()
    (n,) = struct.unpack_from("<q", data, 0)
    widths = struct.unpack_from(f"<{n}q", data, 8)
    offset = 8 + 8 * n
    weights, biases = [], []
    for a, b in zip(widths, widths[1:]):
        w = np.frombuffer(data, dtype="<f8", count=a * b, offset=offset).reshape(b, a).astype(np.float64)
        offset += 8 * a * b
        bias = np.frombuffer(data, dtype="<f8", count=b, offset=offset).astype(np.float64)
        offset += 8 * b
        weights.append(w)
        biases.append(bias)
    if offset != len(data):
        raise ShapeError("checkpoint size does not match its header")
    return Mlp(tuple(widths), weights, biases)
