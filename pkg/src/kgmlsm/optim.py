"""Adam updates and a reduce-on-plateau learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(store, lr):
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state = AdamState(lr=lr)
    for name, t in store.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(store, grads, state):
    """One Adam update with bias correction, applied in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


@dataclass
class PlateauScheduler:
    """Halve the learning rate after `patience` epochs without improvement.

    Improvement means a strictly lower monitored value, by any margin. The
    lr never drops below min_lr; a reduction resets the stall counter.
    """

    lr: float
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 1e-6
    best: float = None
    bad_epochs: int = 0

    def step(self, value):
        value = float(value)
        if self.best is None or value < self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def plateau_scheduler_step(state, monitored_value):
    """Functional form of PlateauScheduler.step; returns the new lr."""
    return state.step(monitored_value)
