"""SGD and Adam parameter updates keyed by parameter name."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError
from .nets import EpsilonNet


class SgdOptimizer:
    """p <- p - lr * g."""

    kind = "sgd"

    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, net: EpsilonNet, grads: dict[str, np.ndarray]) -> EpsilonNet:
        self.step_count += 1
        for name, p in net.named_parameters():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}"
                )
            p.data = p.data - self.learning_rate * g
        return net


class AdamOptimizer:
    """Standard Adam with bias correction; missing grads are treated as zero."""

    kind = "adam"

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, net: EpsilonNet, grads: dict[str, np.ndarray]) -> EpsilonNet:
        self.step_count += 1
        t = self.step_count
        for name, p in net.named_parameters():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}"
                )
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return net


def make_optimizer(kind: str, learning_rate: float):
    if kind == "sgd":
        return SgdOptimizer(learning_rate)
    if kind == "adam":
        return AdamOptimizer(learning_rate)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def collect_grads(net: EpsilonNet) -> dict[str, np.ndarray]:
    """Grab gradients accumulated by a backward pass, keyed by name."""
    return {name: p.grad for name, p in net.named_parameters() if p.grad is not None}
