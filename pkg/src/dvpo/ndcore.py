"""Small dense-numerics toolkit: tanh MLPs with exact reverse-mode gradients,
Adam, central finite differences and seeded random streams.

Everything is float64. Batched inputs are ``(batch, features)`` arrays; a 1-D
input is treated as a single row and the output is returned 1-D as well.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray

_ACTIVATIONS = ("identity", "tanh")


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    String keys are mapped through crc32 so a stream is addressed by name and
    adding a new stream never shifts the draws of an existing one.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


@dataclass
class Mlp:
    layer_dims: tuple[int, ...]
    weights: list[Array]
    biases: list[Array]
    out_activation: str = "identity"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"bad layer_dims {self.layer_dims}")
        if self.out_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.out_activation!r}")
        n = len(self.layer_dims) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError("weights/biases do not match layer_dims")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k], self.layer_dims[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}, expected {shape}")

    @classmethod
    def init(
        cls,
        layer_dims: Sequence[int],
        rng: np.random.Generator,
        out_activation: str = "identity",
        out_scale: float = 1.0,
    ) -> "Mlp":
        """Gaussian init with std 1/sqrt(fan_in); zero biases.

        ``out_scale`` multiplies the last layer (small values give a
        near-uniform initial softmax policy).
        """
        dims = [int(d) for d in layer_dims]
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            if k == len(dims) - 2:
                w *= out_scale
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(tuple(dims), weights, biases, out_activation)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], out_activation: str = "identity") -> "Mlp":
        dims = [int(d) for d in layer_dims]
        return cls(
            tuple(dims),
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
            out_activation,
        )

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def params(self) -> list[Array]:
        """Parameter arrays, interleaved ``[W0, b0, W1, b1, ...]`` (live views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params: Sequence[Array]) -> None:
        if len(params) != 2 * len(self.weights):
            raise ShapeError("parameter list length mismatch")
        for k in range(len(self.weights)):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ShapeError(f"layer {k}: parameter shape mismatch")
            self.weights[k] = np.array(w, dtype=np.float64)
            self.biases[k] = np.array(b, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.out_activation,
        )

    def __call__(self, x) -> Array:
        return mlp_forward(self, x)


def _as_batch(net: Mlp, x) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim {net.in_dim}")
    return x, single


def mlp_forward_cached(net: Mlp, x) -> tuple[Array, list[Array]]:
    """Forward pass returning ``(output, activations)``.

    ``activations[k]`` is the input to layer k; the last entry is the output.
    Output is always 2-D here.
    """
    h, _ = _as_batch(net, x)
    acts = [h]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if k < last or net.out_activation == "tanh":
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_forward(net: Mlp, x) -> Array:
    out, _ = mlp_forward_cached(net, x)
    if np.ndim(x) == 1:
        return out[0]
    return out


def mlp_backward_cached(net: Mlp, acts: list[Array], upstream) -> tuple[list[Array], Array]:
    """Reverse pass given the cached activations.

    Parameter gradients are summed over the batch; returns
    ``(grads in params order, input gradient)``.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != acts[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} vs output {acts[-1].shape}")
    last = len(net.weights) - 1
    grads: list[Array] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    for k in range(last, -1, -1):
        if k < last or net.out_activation == "tanh":
            g = g * (1.0 - acts[k + 1] ** 2)
        grads[2 * k] = acts[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k].T
    return grads, g


def mlp_backward(net: Mlp, x, upstream_grad) -> tuple[list[Array], Array]:
    """Exact gradients of ``sum(upstream_grad * net(x))``.

    Returns parameter gradients (``[dW0, db0, ...]``) and the input gradient,
    shaped like ``x``.
    """
    out, acts = mlp_forward_cached(net, x)
    up = np.asarray(upstream_grad, dtype=np.float64)
    if up.ndim == 1 and np.ndim(x) == 1:
        up = up[None, :]
    grads, dx = mlp_backward_cached(net, acts, up)
    if np.ndim(x) == 1:
        dx = dx[0]
    return grads, dx


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[Array] = field(default_factory=list)
    second_moment: list[Array] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Array], **hyper) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(state: AdamState, params: Sequence[Array], grads: Sequence[Array]) -> tuple[list[Array], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.first_moment:
        state = AdamState.for_params(
            params,
            learning_rate=state.learning_rate,
            beta1=state.beta1,
            beta2=state.beta2,
            epsilon=state.epsilon,
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_params.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
        step_count=t,
        first_moment=new_m,
        second_moment=new_v,
    )
    return new_params, new_state


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`.

    ``net`` is anything exposing ``params`` and ``set_params``.
    """

    def __init__(self, net, learning_rate: float = 3e-4, **hyper):
        self.net = net
        self.state = AdamState.for_params(net.params, learning_rate=learning_rate, **hyper)

    def step(self, grads: Sequence[Array]) -> None:
        params, self.state = adam_step(self.state, self.net.params, grads)
        self.net.set_params(params)


def finite_difference_grad(f: Callable[[Array], float], params, h: float = 1e-5) -> Array:
    """Central-difference gradient of scalar ``f`` at ``params`` (any shape)."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(params, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)
