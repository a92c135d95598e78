"""Neural material field and the co-located Disney-style BRDF.

The material field maps hash-grid features through a small ReLU MLP to five
logits; a logistic squashes them to base color (3), roughness and metallic.
The specular lobe is evaluated for the co-located light/camera case, where the
half vector equals the view direction, and is white (one scalar for all
channels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hashgrid
from .hashgrid import HashGridConfig

GRAZING_CUTOFF = 1e-4
MIN_ROUGHNESS = 1e-3
DIELECTRIC_F0 = 0.04
HIDDEN = 64
OUTPUTS = 5
MLP_KEYS = ("mlp.w0", "mlp.b0", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2")


@dataclass
class BrdfSample:
    """Per-point material; arrays broadcast over a batch."""

    b: np.ndarray   # (..., 3) base color
    r: np.ndarray   # (...) roughness
    m: np.ndarray   # (...) metallic


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_mlp(in_dim: int, rng: np.random.Generator, hidden: int = HIDDEN) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases."""
    def layer(fan_in, fan_out):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return {
        "mlp.w0": layer(in_dim, hidden), "mlp.b0": np.zeros(hidden),
        "mlp.w1": layer(hidden, hidden), "mlp.b1": np.zeros(hidden),
        "mlp.w2": layer(hidden, OUTPUTS), "mlp.b2": np.zeros(OUTPUTS),
    }


@dataclass
class MaterialContext:
    enc: hashgrid.EncodeContext
    feats: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    out: np.ndarray   # squashed (N, 5)


def predict_material(x_norm: np.ndarray, params: dict[str, np.ndarray], tables: np.ndarray,
                     cfg: HashGridConfig, return_context: bool = False):
    feats, enc = hashgrid.encode(x_norm, tables, cfg, return_context=True)
    h0 = np.maximum(feats @ params["mlp.w0"] + params["mlp.b0"], 0.0)
    h1 = np.maximum(h0 @ params["mlp.w1"] + params["mlp.b1"], 0.0)
    out = sigmoid(h1 @ params["mlp.w2"] + params["mlp.b2"])
    s = BrdfSample(b=out[:, :3], r=out[:, 3], m=out[:, 4])
    if return_context:
        return s, MaterialContext(enc, feats, h0, h1, out)
    return s


def predict_material_backward(ctx: MaterialContext, d_out: np.ndarray, params, grads,
                              cfg: HashGridConfig, scatter: bool = True):
    """Backpropagate ``d loss / d (b, r, m)`` stacked as (N, 5) into ``grads``.

    With ``scatter=False`` the hash-table step is left to the caller, and the
    feature gradient is returned instead.
    """
    d_raw = d_out * ctx.out * (1.0 - ctx.out)
    grads["mlp.w2"] += ctx.h1.T @ d_raw
    grads["mlp.b2"] += d_raw.sum(axis=0)
    d_h1 = (d_raw @ params["mlp.w2"].T) * (ctx.h1 > 0)
    grads["mlp.w1"] += ctx.h0.T @ d_h1
    grads["mlp.b1"] += d_h1.sum(axis=0)
    d_h0 = (d_h1 @ params["mlp.w1"].T) * (ctx.h0 > 0)
    grads["mlp.w0"] += ctx.feats.T @ d_h0
    grads["mlp.b0"] += d_h0.sum(axis=0)
    d_feats = d_h0 @ params["mlp.w0"].T
    if not scatter:
        return d_feats
    hashgrid.encode_backward(ctx.enc, d_feats, grads["hash.tables"], cfg)
    return None


def brdf_diffuse(s: BrdfSample) -> np.ndarray:
    return (1.0 - np.asarray(s.m))[..., None] / np.pi * np.asarray(s.b)


def specular_terms(c, r, m, factor4: bool = False):
    """White specular lobe and its partials for cosine ``c = n . omega``.

    Returns ``(f_s, df_s/dr, df_s/dm)``. With the half vector equal to the view
    direction, ``G / c^2`` reduces to ``1 / (c(1-k) + k)^2``.
    """
    c = np.asarray(c, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    live = c >= GRAZING_CUTOFF
    c = np.where(live, c, 1.0)
    # r = 0 is a delta lobe (0/0 at c = 1); the floor keeps it finite
    floored = r < MIN_ROUGHNESS
    r = np.maximum(r, MIN_ROUGHNESS)

    a2 = r ** 4
    t = c * c * (a2 - 1.0) + 1.0
    D = a2 / (np.pi * t * t)
    dD_da2 = (t - 2.0 * a2 * c * c) / (np.pi * t ** 3)

    F0 = DIELECTRIC_F0 * (1.0 - m) + m
    schlick = (1.0 - c) ** 5
    F = F0 + (1.0 - F0) * schlick
    dF_dm = (1.0 - DIELECTRIC_F0) * (1.0 - schlick)

    k = (r + 1.0) ** 2 / 8.0
    u = c * (1.0 - k) + k
    V = 1.0 / (u * u)
    dV_dk = -2.0 * (1.0 - c) / u ** 3

    scale = 0.25 if factor4 else 1.0
    fs = scale * D * F * V
    dfs_dr = np.where(floored, 0.0, scale * F * (dD_da2 * 4.0 * r ** 3 * V + D * dV_dk * (r + 1.0) / 4.0))
    dfs_dm = scale * D * V * dF_dm
    zero = np.zeros_like(fs)
    return np.where(live, fs, zero), np.where(live, dfs_dr, zero), np.where(live, dfs_dm, zero)


def brdf_specular(omega: np.ndarray, n: np.ndarray, s: BrdfSample, factor4: bool = False) -> np.ndarray:
    c = np.sum(np.asarray(omega) * np.asarray(n), axis=-1)
    return specular_terms(c, s.r, s.m, factor4)[0]


def brdf_total(omega: np.ndarray, n: np.ndarray, s: BrdfSample, factor4: bool = False) -> np.ndarray:
    return brdf_diffuse(s) + brdf_specular(omega, n, s, factor4)[..., None]
