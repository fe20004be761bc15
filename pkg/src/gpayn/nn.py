"""Small float64 MLPs with hand-written backprop, plus Adam."""
from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class Mlp:
    """Affine layers with ReLU between them; the head is linear or tanh."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], head: str = "linear"):
        if head not in ("linear", "tanh"):
            raise ValueError(f"unknown head {head!r}")
        if len(weights) != len(biases) or not weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer {i}: W {W.shape} / b {b.shape}")
            if i and weights[i - 1].shape[1] != W.shape[0]:
                raise ShapeMismatch(f"layer {i} input {W.shape[0]} != previous output {weights[i - 1].shape[1]}")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.head = head

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, head: str = "linear") -> "Mlp":
        # uniform(+-1/sqrt(fan_in)) for both W and b, as torch's nn.Linear does
        Ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            k = 1.0 / np.sqrt(n_in)
            Ws.append(rng.uniform(-k, k, (n_in, n_out)))
            bs.append(rng.uniform(-k, k, n_out))
        return cls(Ws, bs, head)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, params: list[np.ndarray]):
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.head)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights[0].shape[0]:
            raise ShapeMismatch(f"input dim {x.shape[-1]} != {self.weights[0].shape[0]}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self._check(x)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return np.tanh(h) if self.head == "tanh" else h

    __call__ = forward

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass that keeps layer inputs for ``backward``."""
        h = self._check(x)
        cache = []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        if self.head == "tanh":
            h = np.tanh(h)
        cache.append(h)
        return h, cache

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of sum(dout * output) w.r.t. params (same order as ``params``) and input."""
        g = np.asarray(dout, dtype=np.float64)
        if self.head == "tanh":
            g = g * (1.0 - cache[-1] ** 2)
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            x = cache[i]
            grads = [x.T @ g, g.sum(axis=0)] + grads
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (x > 0.0)  # x is the ReLU output of layer i-1
        return grads, g


def polyak(target: Mlp, online: Mlp, tau: float):
    for t, o in zip(target.params(), online.params()):
        t *= 1.0 - tau
        t += tau * o


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        """In-place update of ``params``."""
        if len(params) != len(self.m):
            raise ShapeMismatch("parameter count changed")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch(f"grad {g.shape} != param {p.shape}")
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> list[np.ndarray]:
        return self.m + self.v
