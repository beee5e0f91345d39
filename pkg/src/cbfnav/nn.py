"""Dense feed-forward networks on flat parameter vectors, with manual reverse mode.

Layout of a flat vector for sizes ``(d0, d1, ..., dk)``: for each layer the
weight matrix ``W`` of shape ``(d_in, d_out)`` in row-major order, then its
bias ``b`` of length ``d_out``. Hidden layers use tanh, the last is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ShapeError("an MLP needs at least an input and an output width")
        if self.activation not in ("tanh", "identity"):
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def layers(self, theta):
        """Yield ``(W, b)`` views into ``theta``."""
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[off:off + a * b].reshape(a, b)
            off += a * b
            yield W, theta[off:off + b]
            off += b

    def init(self, rng: np.random.Generator, out_scale: float = 1.0) -> np.ndarray:
        """Glorot-uniform weights, zero biases; last layer scaled by ``out_scale``."""
        theta = np.zeros(self.n_params)
        off = 0
        n_layers = len(self.sizes) - 1
        for k, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = np.sqrt(6.0 / (a + b))
            if k == n_layers - 1:
                lim *= out_scale
            theta[off:off + a * b] = rng.uniform(-lim, lim, a * b)
            off += a * b + b
        return theta


def _check(spec: MlpSpec, theta, x):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} parameters, got {theta.shape}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n_in or x.ndim > 2:
        raise ShapeError(f"input must have trailing width {spec.n_in}, got {x.shape}")
    return theta, x


def _act(spec, z):
    return np.tanh(z) if spec.activation == "tanh" else z


def mlp_forward(spec: MlpSpec, theta, x) -> np.ndarray:
    """Forward pass; ``x`` is one input vector or a ``(batch, n_in)`` array."""
    theta, x = _check(spec, theta, x)
    h = x
    layers = list(spec.layers(theta))
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1:
            h = _act(spec, h)
    return h


def mlp_forward_cache(spec: MlpSpec, theta, x):
    """Forward pass that also returns the post-activation of every layer input."""
    theta, x = _check(spec, theta, x)
    acts = [x]
    h = x
    layers = list(spec.layers(theta))
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1:
            h = _act(spec, h)
        acts.append(h)
    return h, acts


def mlp_backward(spec: MlpSpec, theta, x, upstream, cache=None):
    """Reverse-mode gradients of ``sum(upstream * mlp_forward(x))``.

    Returns ``(grad_theta, grad_x)``. For batched input the parameter
    gradient is summed over the batch.
    """
    theta, x = _check(spec, theta, x)
    if cache is None:
        _, cache = mlp_forward_cache(spec, theta, x)
    g = np.asarray(upstream, dtype=float)
    out_shape = x.shape[:-1] + (spec.n_out,)
    if g.shape != out_shape:
        raise ShapeError(f"upstream gradient must have shape {out_shape}, got {g.shape}")
    layers = list(spec.layers(theta))
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        h_in = cache[k]
        if g.ndim == 1:
            gW = np.outer(h_in, g)
            gb = g.copy()
        else:
            gW = h_in.T @ g
            gb = g.sum(axis=0)
        grads.append((gW, gb))
        g = g @ W.T
        if k > 0 and spec.activation == "tanh":
            g = g * (1.0 - h_in * h_in)
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
    return flat, g


class Adam:
    """Adam optimiser over a flat parameter vector (minimisation)."""

    def __init__(self, n: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
