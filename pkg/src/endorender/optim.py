from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NumericError
from .store import ParamStore, group_of


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    group_lr_scale: dict[str, float] = field(default_factory=dict)   # e.g. {"gamma": 0.1}

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Bias-corrected Adam update in place, then zero the gradient slots."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericError(
                f"non-finite gradient in group {group_of(name)!r} (parameter {name!r}, {bad} entries)")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in store.values.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        _adam_kernel(p.reshape(-1), store.grads[name].reshape(-1), state.m[name].reshape(-1),
                     state.v[name].reshape(-1), state.lr * state.group_lr_scale.get(group_of(name), 1.0),
                     state.beta1, state.beta2, state.eps, bc1, bc2)
    store.step += 1


@njit(cache=True)
def _adam_kernel(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    # one fused pass; zeroes the gradient slot as it goes
    step = lr / bc1
    for i in range(p.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= step * m[i] / (np.sqrt(v[i] / bc2) + eps)
        g[i] = 0.0
