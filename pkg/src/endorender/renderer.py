"""Single-bounce shading with a co-located spotlight, image rendering and depth splatting.

Per pixel the predicted radiance is ``2*pi * f * L_i * max(n . omega_o, 0)``
followed by the learned gamma. The light direction equals the view direction,
so the specular half vector collapses onto ``omega_o``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brdf import BrdfSample, specular_terms
from .errors import ConfigError, EmptySceneError
from .geometry import Intrinsics, Pose, normals_from_depth, project_points, unproject_depth, view_direction
from .lighting import LightContext, SpotlightParams, incident_light, incident_light_backward

TWO_PI = 2.0 * np.pi
CHUNK = 65536


@dataclass
class PixelShadingInput:
    x: np.ndarray       # world point
    n: np.ndarray       # unit normal
    omega: np.ndarray   # unit direction toward the camera
    x_cam: np.ndarray   # camera / light center
    v_light: np.ndarray  # light forward axis

    def __post_init__(self):
        for name in ("n", "omega", "v_light"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError(f"{name} must be a unit vector, got |{name}|={np.linalg.norm(v)}")


@dataclass
class ShadeContext:
    s: BrdfSample
    c: np.ndarray
    f: np.ndarray
    dfs_dr: np.ndarray
    dfs_dm: np.ndarray
    light: LightContext
    hdr: np.ndarray
    ldr: np.ndarray


def shade_points(x, n, omega, x_cam, v_light, s: BrdfSample, light: SpotlightParams,
                 factor4: bool = False, return_context: bool = False):
    """Vectorized shading of N points. Returns ``(hdr, ldr)`` with ``ldr`` unclamped."""
    c = np.sum(np.asarray(n) * np.asarray(omega), axis=-1)
    fs, dfs_dr, dfs_dm = specular_terms(c, s.r, s.m, factor4)
    f = (1.0 - s.m)[..., None] / np.pi * s.b + fs[..., None]
    Li, lctx = incident_light(x, x_cam, v_light, light, return_context=True)
    hdr = TWO_PI * f * (Li * np.maximum(c, 0.0))[..., None]
    ldr = np.power(hdr, light.gamma)
    if return_context:
        return hdr, ldr, ShadeContext(s, c, f, dfs_dr, dfs_dm, lctx, hdr, ldr)
    return hdr, ldr


def shade_backward(ctx: ShadeContext, d_ldr: np.ndarray, light: SpotlightParams,
                   grads: dict[str, np.ndarray]) -> np.ndarray:
    """Push ``d loss / d ldr`` (N, 3) into the light slots of ``grads``.

    Returns ``d loss / d (b, r, m)`` stacked as (N, 5) for the material field.
    """
    g = light.gamma
    pos = ctx.hdr > 0
    safe = np.where(pos, ctx.hdr, 1.0)
    d_hdr = np.where(pos, d_ldr * g * ctx.ldr / safe, 0.0)
    grads["light.log_gamma"] += g * np.sum(np.where(pos, d_ldr * ctx.ldr * np.log(safe), 0.0))

    cpos = np.maximum(ctx.c, 0.0)
    Li = ctx.light.Li
    d_f = d_hdr * (TWO_PI * Li * cpos)[:, None]
    d_Li = np.sum(d_hdr * ctx.f, axis=-1) * TWO_PI * cpos
    incident_light_backward(ctx.light, light, d_Li, grads)

    s = ctx.s
    d_fsum = d_f.sum(axis=-1)
    d_mat = np.empty((len(d_f), 5))
    d_mat[:, :3] = d_f * ((1.0 - s.m) / np.pi)[:, None]
    d_mat[:, 3] = d_fsum * ctx.dfs_dr
    d_mat[:, 4] = d_fsum * ctx.dfs_dm - np.sum(d_f * s.b, axis=-1) / np.pi
    return d_mat


def shade_pixel(inp: PixelShadingInput, scene, clamp: bool = False) -> np.ndarray:
    """LDR color of one pixel for ``scene`` (anything with ``shade_world``)."""
    ldr, _ = scene.shade_world(np.atleast_2d(inp.x), np.atleast_2d(inp.n), np.atleast_2d(inp.omega),
                               np.atleast_2d(inp.x_cam), np.atleast_2d(inp.v_light))
    out = ldr[0]
    return np.clip(out, 0.0, 1.0) if clamp else out


@dataclass
class RenderResult:
    image: np.ndarray   # (H, W, 3) uint8
    ldr: np.ndarray     # (H, W, 3) float, unclamped
    hdr: np.ndarray     # (H, W, 3) float, pre-gamma
    valid: np.ndarray   # (H, W) bool


def pixel_geometry(pose: Pose, depth: np.ndarray, K: Intrinsics, forward_axis: str = "+z"):
    """World points, normals, view directions and the shading mask for one view."""
    if depth.shape != K.shape:
        raise ConfigError(f"depth shape {depth.shape} does not match intrinsics {K.shape}")
    x = unproject_depth(depth, K, pose)
    n, valid = normals_from_depth(depth, K, pose)
    rel = pose.center - x
    dist = np.linalg.norm(rel, axis=-1)
    valid &= dist > 1e-9
    omega = np.zeros_like(x)
    omega[valid] = view_direction(x[valid], pose.center)
    return x, n, omega, valid


def render_image(pose: Pose, depth: np.ndarray, K: Intrinsics, scene, chunk: int = CHUNK,
                 **overrides) -> RenderResult:
    """Shade every valid-depth pixel; invalid pixels stay black."""
    x, n, omega, valid = pixel_geometry(pose, depth, K, scene.forward_axis)
    H, W = K.shape
    hdr = np.zeros((H, W, 3))
    ldr = np.zeros((H, W, 3))
    idx = np.flatnonzero(valid.ravel())
    xf, nf, of = x.reshape(-1, 3), n.reshape(-1, 3), omega.reshape(-1, 3)
    v_light = pose.forward(scene.forward_axis)
    for start in range(0, len(idx), chunk):
        sel = idx[start:start + chunk]
        l, h = scene.shade_world(xf[sel], nf[sel], of[sel], pose.center, v_light, **overrides)
        ldr.reshape(-1, 3)[sel] = l
        hdr.reshape(-1, 3)[sel] = h
    return RenderResult(to_uint8(ldr), ldr, hdr, valid)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def splat_depth(target_pose: Pose, frames, K: Intrinsics) -> np.ndarray:
    """Forward-splat the valid pixels of ``frames`` into a depth map for ``target_pose``.

    Nearest depth wins per pixel; one 3x3 median pass then fills empty pixels
    that have at least one filled neighbor.
    """
    clouds = []
    for fr in frames:
        mask = fr.depth > 0
        if mask.any():
            clouds.append(unproject_depth(fr.depth, K, fr.pose)[mask])
    if not clouds:
        raise EmptySceneError("no valid depth in the source frames")
    pts = np.concatenate(clouds)
    i, j, z = project_points(pts, K, target_pose)
    H, W = K.shape
    with np.errstate(invalid="ignore"):
        col = np.round(i)
        row = np.round(j)
        keep = (z > 0) & (col >= 0) & (col <= W - 1) & (row >= 0) & (row <= H - 1)
    flat = row[keep].astype(np.int64) * W + col[keep].astype(np.int64)
    zk = z[keep]
    zbuf = np.full(H * W, np.inf)
    np.minimum.at(zbuf, flat, zk)
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(H, W)
    return median_fill(depth)


def median_fill(depth: np.ndarray) -> np.ndarray:
    H, W = depth.shape
    padded = np.pad(np.where(depth > 0, depth, np.nan), 1, constant_values=np.nan)
    stack = np.stack([padded[dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)
                      if not (dy == 1 and dx == 1)])
    holes = (depth <= 0) & np.any(np.isfinite(stack), axis=0)
    out = depth.copy()
    if holes.any():
        out[holes] = np.nanmedian(stack[:, holes], axis=0)
    return out
