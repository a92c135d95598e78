"""Photometric L1 loss with metallic and albedo-smoothness regularizers, plus its backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import brdf, hashgrid
from .errors import EndoRenderError
from .renderer import shade_backward, shade_points

LAMBDA_METALLIC = 1e-4
LAMBDA_ALBEDO = 1e-3
JITTER_RADIUS = 0.01


@dataclass
class LossBreakdown:
    total: float
    l1: float
    metallic_penalty: float
    albedo_smoothness: float


def compute_loss(pred, gt, m_vals, albedo_pairs, lambda_m: float = LAMBDA_METALLIC,
                 lambda_b: float = LAMBDA_ALBEDO) -> LossBreakdown:
    """Loss from already-evaluated quantities.

    ``albedo_pairs`` is ``(b_x, b_jittered)``, each (N, 3).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    m_vals = np.asarray(m_vals, dtype=np.float64)
    b0, b1 = (np.asarray(a, dtype=np.float64) for a in albedo_pairs)
    if pred.size == 0 or m_vals.size == 0 or b0.size == 0:
        raise ValueError("loss needs a non-empty batch")
    if pred.shape != gt.shape or len(pred) != len(m_vals) or b0.shape != b1.shape or len(b0) != len(pred):
        raise ValueError("loss batch components must have matching lengths")
    l1 = float(np.mean(np.abs(pred - gt)))
    metal = float(np.mean(np.abs(m_vals)))
    smooth = float(np.mean(np.sum(np.abs(b0 - b1), axis=-1)))
    return LossBreakdown(l1 + lambda_m * metal + lambda_b * smooth, l1, metal, smooth)


def sample_jitter(rng: np.random.Generator, n: int, radius: float = JITTER_RADIUS) -> np.ndarray:
    """Uniform offsets inside a ball of the given radius."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * (radius * rng.uniform(size=(n, 1)) ** (1.0 / 3.0))


@dataclass
class PixelBatch:
    x: np.ndarray        # (N, 3) world points
    n: np.ndarray        # (N, 3) unit normals
    omega: np.ndarray    # (N, 3) unit directions toward the camera
    x_cam: np.ndarray    # (N, 3) camera centers
    v_light: np.ndarray  # (N, 3) light axes
    gt: np.ndarray       # (N, 3) target colors in [0, 1]
    jitter: np.ndarray   # (N, 3) smoothness offsets in normalized coordinates

    def __len__(self):
        return len(self.x)

    def subset(self, sel) -> "PixelBatch":
        return PixelBatch(*(getattr(self, k)[sel] for k in
                            ("x", "n", "omega", "x_cam", "v_light", "gt", "jitter")))


@dataclass
class LossContext:
    scene: object
    batch: PixelBatch
    breakdown: LossBreakdown
    lambda_m: float
    lambda_b: float
    mat: object
    mat_j: object
    shade: object


def forward(scene, batch: PixelBatch, lambda_m: float = LAMBDA_METALLIC,
            lambda_b: float = LAMBDA_ALBEDO) -> LossContext:
    """Evaluate the full loss for ``scene`` (a NeuralScene) and keep what backward needs."""
    xn = scene.normalize(batch.x)
    s, mctx = scene.material_normalized(xn, return_context=True)
    s_j, mctx_j = scene.material_normalized(np.clip(xn + batch.jitter, 0.0, 1.0), return_context=True)
    light = scene.light
    hdr, ldr, sctx = shade_points(batch.x, batch.n, batch.omega, batch.x_cam, batch.v_light, s, light,
                                  scene.factor4, return_context=True)
    bd = compute_loss(ldr, batch.gt, s.m, (s.b, s_j.b), lambda_m, lambda_b)
    return LossContext(scene, batch, bd, lambda_m, lambda_b, mctx, mctx_j, sctx)


def backward(ctx: LossContext | None, scale: float = 1.0) -> None:
    """Accumulate ``scale * d total / d params`` into the scene's gradient slots."""
    if ctx is None:
        raise EndoRenderError("backward called without a recorded forward pass")
    scene, sctx = ctx.scene, ctx.shade
    grads = scene.store.grads
    N = len(ctx.batch)
    d_ldr = scale * np.sign(sctx.ldr - ctx.batch.gt) / (3 * N)
    d_mat = shade_backward(sctx, d_ldr, scene.light, grads)

    # regularizers: mean |m| and mean ||b(x) - b(x + eps)||_1
    d_mat[:, 4] += scale * ctx.lambda_m * np.sign(sctx.s.m) / N
    d_pair = scale * ctx.lambda_b * np.sign(sctx.s.b - ctx.mat_j.out[:, :3]) / N
    d_mat[:, :3] += d_pair
    d_mat_j = np.zeros_like(d_mat)
    d_mat_j[:, :3] = -d_pair

    # sum both MLP passes locally and add once, so repeated calls add identical totals
    local = {k: np.zeros_like(grads[k]) for k in brdf.MLP_KEYS}
    d_feat = brdf.predict_material_backward(ctx.mat, d_mat, scene.mlp, local, scene.cfg, scatter=False)
    d_feat_j = brdf.predict_material_backward(ctx.mat_j, d_mat_j, scene.mlp, local, scene.cfg, scatter=False)
    for k in brdf.MLP_KEYS:
        grads[k] += local[k]
    hashgrid.encode_backward([ctx.mat.enc, ctx.mat_j.enc], [d_feat, d_feat_j], grads["hash.tables"], scene.cfg)
