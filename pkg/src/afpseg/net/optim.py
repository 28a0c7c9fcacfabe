"""Plain SGD and Adam, operating on the network's named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .model import Network, backward, forward_with_cache
from .ops import loss_and_grad

__all__ = ["OptimizerState", "init_optimizer", "apply_gradients", "train_step"]


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optimizer(
    net: Network,
    kind: str = "adam",
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigurationError(f"unknown optimizer kind: {kind!r}")
    if learning_rate <= 0:
        raise ConfigurationError("learning_rate must be positive")
    state = OptimizerState(
        kind=kind, learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon
    )
    if kind == "adam":
        state.m = {k: np.zeros_like(p) for k, p in net.params.items()}
        state.v = {k: np.zeros_like(p) for k, p in net.params.items()}
    return state


def apply_gradients(state: OptimizerState, params: dict, grads: dict) -> None:
    """One optimizer step, updating ``params`` in place."""
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for name, p in params.items():
            p -= lr * grads[name]
        return

    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def train_step(net: Network, state: OptimizerState, x: np.ndarray, labels: np.ndarray) -> float:
    """Forward, backward, and parameter update on one minibatch."""
    probs, cache = forward_with_cache(net, x)
    loss, dlogits = loss_and_grad(probs, labels)
    grads = backward(net, cache, dlogits)
    apply_gradients(state, net.params, grads)
    return loss
