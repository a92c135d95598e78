"""Co-located spotlight and learned gamma.

Incident intensity ``L0 * cos(theta)^n / d^q``, where theta is measured
from the light's forward axis. All four scalars are stored as logs so they
stay positive under unconstrained updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError

LIGHT_KEYS = ("light.log_L0", "light.log_n", "light.log_q", "light.log_gamma")
GRAD_CLAMP = 1e4
MIN_DISTANCE = 1e-6


@dataclass
class SpotlightParams:
    L0: float = 1.0
    n_exp: float = 1.0
    q_exp: float = 2.0
    gamma: float = 2.2

    def __post_init__(self):
        for name in ("L0", "n_exp", "q_exp", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def to_raw(self) -> dict[str, np.ndarray]:
        return {
            "light.log_L0": np.array([np.log(self.L0)]),
            "light.log_n": np.array([np.log(self.n_exp)]),
            "light.log_q": np.array([np.log(self.q_exp)]),
            "light.log_gamma": np.array([np.log(self.gamma)]),
        }

    @classmethod
    def from_raw(cls, raw: dict[str, np.ndarray]) -> "SpotlightParams":
        return cls(*(float(np.exp(raw[k][0])) for k in LIGHT_KEYS))


@dataclass
class LightContext:
    Li: np.ndarray
    log_cos: np.ndarray
    log_d: np.ndarray
    lit: np.ndarray


def incident_light(x: np.ndarray, x_light: np.ndarray, v_light: np.ndarray, p: SpotlightParams,
                   return_context: bool = False):
    """Spotlight intensity at world points ``x`` (..., 3).

    ``x_light`` and ``v_light`` broadcast against ``x``. Points on or behind
    the light's equatorial plane receive nothing.
    """
    rel = np.asarray(x, dtype=np.float64) - np.asarray(x_light, dtype=np.float64)
    d = np.linalg.norm(rel, axis=-1)
    if np.any(d < MIN_DISTANCE):
        raise DegenerateGeometryError("surface point coincides with the light source")
    cos = np.sum(rel * np.asarray(v_light, dtype=np.float64), axis=-1) / d
    lit = cos > 0
    with np.errstate(divide="ignore"):
        log_cos = np.where(lit, np.log(np.where(lit, cos, 1.0)), 0.0)
    log_d = np.log(d)
    Li = np.where(lit, p.L0 * np.power(np.where(lit, cos, 0.0), p.n_exp) / np.power(d, p.q_exp), 0.0)
    if return_context:
        return Li, LightContext(Li, log_cos, log_d, lit)
    return Li


def incident_light_backward(ctx: LightContext, p: SpotlightParams, upstream: np.ndarray,
                            grads: dict[str, np.ndarray]) -> None:
    """Accumulate gradients w.r.t. the log-parameters of L0, n and q."""
    g = np.asarray(upstream, dtype=np.float64) * ctx.Li
    d_n = np.clip(g * ctx.log_cos * p.n_exp, -GRAD_CLAMP, GRAD_CLAMP)
    d_q = np.clip(-g * ctx.log_d * p.q_exp, -GRAD_CLAMP, GRAD_CLAMP)
    grads["light.log_L0"] += g.sum()
    grads["light.log_n"] += d_n.sum()
    grads["light.log_q"] += d_q.sum()


def gamma_map(c_hdr: np.ndarray, gamma: float, clamp: bool = True) -> np.ndarray:
    c = np.maximum(np.asarray(c_hdr, dtype=np.float64), 0.0)
    out = np.power(c, gamma)
    return np.clip(out, 0.0, 1.0) if clamp else out
