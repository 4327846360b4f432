"""Dense float64 MLPs with hand-rolled backprop, Adam, and EMA shadows.

Everything downstream that learns — grid policies, observation classifiers,
time-conditioned classifiers — trains through this module. The scale is small
enough that exactness beats framework weight: float64 parameters, explicit
gradients that are checked against finite differences, and bit-reproducible
trajectories for a fixed seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteDetected

_ACTIVATIONS = ("tanh", "relu")


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteDetected(f"non-finite values in {name}")


class Mlp:
    """Fully-connected net: affine layers with tanh or relu between them.

    Parameters are kept as a flat list [W0, b0, W1, b1, ...] with W of shape
    (fan_in, fan_out) so a batch forward is x @ W + b.
    """

    def __init__(self, sizes: list[int], activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass; (B, in) -> (B, out) logits. Also accepts a single vector."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            h = h @ w + b
            if layer < self.n_layers - 1:
                h = self._act(h)
        _check_finite("forward output", h)
        return h

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that also returns the per-layer inputs needed by backprop."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = [x]
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            h = h @ w + b
            if layer < self.n_layers - 1:
                h = self._act(h)
                cache.append(h)
        return h, cache

    def backprop(self, cache: list[np.ndarray], upstream: np.ndarray
                 ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of sum(upstream * logits) w.r.t. parameters and the input batch.

        `cache` is the second result of forward_cached; `upstream` is dL/dlogits
        of shape (B, out). Returns (param_grads matching self.params, dL/dx).
        """
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        delta = np.asarray(upstream, dtype=np.float64)
        for layer in reversed(range(self.n_layers)):
            h_in = cache[layer]
            grads[2 * layer] = h_in.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                w = self.params[2 * layer]
                delta = delta @ w.T
                if self.activation == "tanh":
                    delta = delta * (1.0 - cache[layer] ** 2)
                else:
                    delta = delta * (cache[layer] > 0.0)
        input_grad = delta @ self.params[0].T
        return grads, input_grad

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.sizes = list(self.sizes)
        dup.activation = self.activation
        dup.params = [p.copy() for p in self.params]
        return dup


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Module-level forward, returning logits."""
    return net.forward(x)


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients of sum(upstream * net(x))."""
    _, cache = net.forward_cached(x)
    grads, _ = net.backprop(cache, upstream)
    return grads


# ---------------------------------------------------------------------------
# Optimization


@dataclass
class AdamState:
    """Adam moment accumulators; step counts completed updates."""

    lr: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float, **kwargs) -> "AdamState":
        return cls(
            lr=float(lr),
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
              ) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update, in place on params; returns (params, state).

    Raises NonFiniteDetected (and leaves parameters untouched) if any gradient
    is non-finite, so a bad step never corrupts the model.
    """
    for g in grads:
        _check_finite("gradients", g)
    state.step += 1
    correct1 = 1.0 - state.beta1 ** state.step
    correct2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    return params, state


@dataclass
class EmaShadow:
    """Exponential moving average of a parameter list (a target-network copy)."""

    beta: float
    shadow: list[np.ndarray]

    @classmethod
    def of(cls, params: list[np.ndarray], beta: float) -> "EmaShadow":
        if not (0.0 <= beta <= 1.0):
            raise ValueError(f"smoothing factor must lie in [0,1], got {beta}")
        return cls(float(beta), [p.copy() for p in params])


def ema_update(shadow: EmaShadow, live_params: list[np.ndarray]) -> EmaShadow:
    """shadow <- beta * shadow + (1 - beta) * live, in place."""
    for s, p in zip(shadow.shadow, live_params):
        s *= shadow.beta
        s += (1.0 - shadow.beta) * p
    return shadow


# ---------------------------------------------------------------------------
# Softmax utilities shared by every training loop


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def softmax_cross_entropy(logits: np.ndarray, target_index: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row CE loss and its logits gradient (softmax - onehot)."""
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    loss = -logp[rows, target_index]
    grad = np.exp(logp)
    grad[rows, target_index] -= 1.0
    return loss, grad


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then the float64 parameter blob


def save_checkpoint(path: str, header: dict, arrays: list[np.ndarray]) -> None:
    header = dict(header)
    header["param_shapes"] = [list(a.shape) for a in arrays]
    blob = b"".join(np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in arrays)
    payload = (json.dumps(header, sort_keys=True) + "\n").encode() + blob
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode())
    arrays: list[np.ndarray] = []
    offset = newline + 1
    for shape in header["param_shapes"]:
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(raw, dtype=np.float64, count=count, offset=offset)
        arrays.append(flat.reshape(shape).copy())
        offset += count * 8
    return header, arrays


def save_mlp(path: str, net: Mlp, step: int = 0, extra: dict | None = None) -> None:
    header = {"kind": "mlp", "sizes": net.sizes, "activation": net.activation, "step": int(step)}
    if extra:
        header.update(extra)
    save_checkpoint(path, header, net.params)


def load_mlp(path: str) -> tuple[Mlp, dict]:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "mlp":
        raise ValueError(f"checkpoint at {path} is not an MLP (kind={header.get('kind')!r})")
    net = Mlp.__new__(Mlp)
    net.sizes = [int(s) for s in header["sizes"]]
    net.activation = header["activation"]
    net.params = arrays
    return net, header
