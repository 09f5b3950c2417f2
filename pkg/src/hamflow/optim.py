"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_update(params, grads, state, config):
    """One Adam step, updating parameter values and optimizer state in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for name, tensor in params.items():
        g = np.asarray(grads[name], dtype=float)
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.value)
            state.v[name] = np.zeros_like(tensor.value)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        tensor.value = tensor.value - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state
