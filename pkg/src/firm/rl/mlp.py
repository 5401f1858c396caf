"""Fully connected networks with hand-written backpropagation (float64)."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeMismatch(ValueError):
    pass


def _act(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def _act_grad(kind: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (pre > 0.0).astype(float)  # subgradient 0 at the kink
    if kind == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


class Mlp:
    """``y = f_L(... f_1(x W_1 + b_1) ...)`` with weights stored as (fan_in, fan_out)."""

    def __init__(self, dims: list[int], activations: list[str], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(dims) - 1 != len(activations) or len(weights) != len(activations) or len(biases) != len(activations):
            raise ShapeMismatch("dims, activations, weights and biases disagree in depth")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (dims[k + 1],):
                raise ShapeMismatch(f"layer {k}: expected {(dims[k], dims[k + 1])}, got {w.shape} / {b.shape}")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.dims = list(dims)
        self.activations = list(activations)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, dims: list[int], activations: list[str], rng: np.random.Generator, final_scale: float = 1.0) -> Mlp:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; last layer scaled."""
        ws, bs = [], []
        for k in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[k])
            ws.append(rng.uniform(-bound, bound, size=(dims[k], dims[k + 1])))
            bs.append(rng.uniform(-bound, bound, size=dims[k + 1]))
        ws[-1] *= final_scale
        bs[-1] *= final_scale
        return cls(dims, activations, ws, bs)

    # parameters are exposed as an ordered flat list [W_0, b_0, W_1, b_1, ...]
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.weights):
            raise ShapeMismatch("parameter count differs")
        for k in range(len(self.weights)):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ShapeMismatch(f"layer {k} parameter shape differs")
            self.weights[k] = np.array(w, dtype=np.float64)
            self.biases[k] = np.array(b, dtype=np.float64)

    def copy(self) -> Mlp:
        return Mlp(self.dims, self.activations, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns the output and the cache needed by ``backward``."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = []
        for w, b, a in zip(self.weights, self.biases, self.activations):
            pre = h @ w + b
            post = _act(a, pre)
            cache.append((h, pre, post))
            h = post
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(grad_out * y)`` w.r.t. the parameters and the input."""
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        g = np.asarray(grad_out, dtype=np.float64)
        for k in range(len(self.weights) - 1, -1, -1):
            h_in, pre, post = cache[k]
            g = g * _act_grad(self.activations[k], pre, post)
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return grads, g

    def sgd(self, grads: list[np.ndarray], lr: float) -> None:
        """In-place step ``p -= lr * g``; pass a negative ``lr`` to ascend."""
        for k in range(len(self.weights)):
            self.weights[k] -= lr * grads[2 * k]
            self.biases[k] -= lr * grads[2 * k + 1]

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "activations": self.activations,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Mlp:
        dims = [int(x) for x in d["dims"]]
        ws = [np.asarray(w, float).reshape(dims[k], dims[k + 1]) for k, w in enumerate(d["weights"])]
        bs = [np.asarray(b, float).reshape(dims[k + 1]) for k, b in enumerate(d["biases"])]
        return cls(dims, list(d["activations"]), ws, bs)


def soft_update(target: Mlp, live: Mlp, tau: float) -> None:
    """target <- tau * live + (1 - tau) * target, parameter by parameter."""
    if target.dims != live.dims:
        raise ShapeMismatch(f"target dims {target.dims} != live dims {live.dims}")
    for k in range(len(live.weights)):
        target.weights[k] = tau * live.weights[k] + (1.0 - tau) * target.weights[k]
        target.biases[k] = tau * live.biases[k] + (1.0 - tau) * target.biases[k]
