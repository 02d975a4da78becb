"""Cross-entropy loss and the two optimizers."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, ConsistencyError, ShapeError
from ..tensor import Tensor

LOG_FLOOR = 1e-12


def cross_entropy_loss(probs: Tensor, targets, class_weights=None) -> Tensor:
    """-mean_i w[y_i] * log(max(p_i[y_i], 1e-12)) for probabilities (N, C)."""
    y = np.asarray(targets, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != y.size:
        raise ShapeError(f"probs {probs.shape} do not match {y.size} targets")
    if y.size and (y.min() < 0 or y.max() >= probs.shape[1]):
        raise ShapeError("target index outside the class axis")
    onehot = np.zeros(probs.shape)
    onehot[np.arange(y.size), y] = 1.0
    picked = T.reduce("sum", T.mul(probs, onehot), axes=1)
    ll = T.log(T.clamp_min(picked, LOG_FLOOR))
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (probs.shape[1],):
            raise ShapeError(f"class_weights must have {probs.shape[1]} entries")
        ll = T.mul(ll, w[y])
    return T.neg(T.reduce("mean", ll))


class Optimizer:
    def __init__(self, params, lr: float):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr

    def _grads(self) -> list[tuple[int, object, np.ndarray]]:
        out = []
        for i, p in enumerate(self.params):
            if not p.trainable:
                continue
            if p.grad is None:
                raise ConsistencyError(f"trainable parameter #{i} {p.shape} has no gradient")
            out.append((i, p, p.grad))
        return out

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD(Optimizer):
    """v <- momentum * v + g;  p <- p - lr * v."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {}

    def step(self) -> None:
        for i, p, g in self._grads():
            v = self.velocity.get(i)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[i] = v
            p.data -= self.lr * v


class Adam(Optimizer):
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p, g in self._grads():
            m = self.m.get(i, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(i, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[i], self.v[i] = m, v
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"adam": Adam, "sgd_momentum": SGD}


def make_optimizer(name: str, params, lr: float) -> Optimizer:
    if name not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {name!r}; valid: {', '.join(OPTIMIZERS)}")
    return OPTIMIZERS[name](params, lr)
