"""Pinhole camera model, unprojection, depth normals and scene normalization.

Conventions: pixel centers sit at integer coordinates, ``i`` is the column and
``j`` the row, depth is the camera-space ``z`` coordinate in meters and a depth
of 0 means "no measurement". Poses are camera-to-world.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DegenerateGeometryError, EmptySceneError, InvalidDepthError

BOUNDS_MARGIN = 0.01
MIN_EXTENT = 1e-6
DEGENERATE_EXTENT = 1e-3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform ``x_w = R @ x_c + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {T.shape}")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def orthonormality_error(self) -> float:
        ortho = np.abs(self.R.T @ self.R - np.eye(3)).max()
        return float(max(ortho, abs(np.linalg.det(self.R) - 1.0)))

    def is_valid(self, tol: float = 1e-6) -> bool:
        return self.orthonormality_error() <= tol

    @property
    def center(self) -> np.ndarray:
        return self.t

    def forward(self, forward_axis: str = "+z") -> np.ndarray:
        """World-space optical axis; ``forward_axis`` is ``"+z"`` or ``"-z"``."""
        sign = 1.0 if forward_axis == "+z" else -1.0
        return sign * self.R[:, 2]

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, rtol=0, atol=atol)
                    and np.allclose(self.t, other.t, rtol=0, atol=atol))


@dataclass(frozen=True, eq=False)
class SceneBounds:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if not np.all(hi > lo):
            raise ValueError(f"max_corner {hi} must exceed min_corner {lo} componentwise")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    def to_dict(self) -> dict:
        return {"min": self.min_corner.tolist(), "max": self.max_corner.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneBounds":
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


def unproject_pixel(i: float, j: float, z: float, K: Intrinsics, P: Pose) -> np.ndarray:
    if not z > 0:
        raise InvalidDepthError(f"depth must be positive, got {z}")
    if not (0 <= i <= K.width - 1 and 0 <= j <= K.height - 1):
        raise ValueError(f"pixel ({i}, {j}) outside {K.width}x{K.height} image")
    x_c = np.array([(i - K.cx) / K.fx * z, (j - K.cy) / K.fy * z, z])
    return P.R @ x_c + P.t


def camera_points(depth: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Camera-space points (H, W, 3) for every pixel; invalid pixels get z=0."""
    H, W = depth.shape
    jj, ii = np.mgrid[0:H, 0:W].astype(np.float64)
    z = np.asarray(depth, dtype=np.float64)
    return np.stack([(ii - K.cx) / K.fx * z, (jj - K.cy) / K.fy * z, z], axis=-1)


def unproject_depth(depth: np.ndarray, K: Intrinsics, P: Pose) -> np.ndarray:
    """World-space points (H, W, 3); meaningful only where ``depth > 0``."""
    return camera_points(depth, K) @ P.R.T + P.t


def project_points(x_w: np.ndarray, K: Intrinsics, P: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of unprojection: returns continuous (i, j) pixel coords and depth z."""
    x_c = (np.asarray(x_w, dtype=np.float64) - P.t) @ P.R
    z = x_c[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        i = K.fx * x_c[..., 0] / z + K.cx
        j = K.fy * x_c[..., 1] / z + K.cy
    return i, j, z


def _axis_diff(P: np.ndarray, axis: int) -> np.ndarray:
    # central differences inside, one-sided at the borders
    d = np.empty_like(P)
    n = P.shape[axis]
    sl = lambda a, b: tuple(slice(a, b) if k == axis else slice(None) for k in range(P.ndim))
    if n == 1:
        d[...] = 0.0
        return d
    d[sl(1, n - 1)] = P[sl(2, n)] - P[sl(0, n - 2)]
    d[sl(0, 1)] = P[sl(1, 2)] - P[sl(0, 1)]
    d[sl(n - 1, n)] = P[sl(n - 1, n)] - P[sl(n - 2, n - 1)]
    return d


def normals_from_depth(depth: np.ndarray, K: Intrinsics, P: Pose) -> tuple[np.ndarray, np.ndarray]:
    """World-space unit normals from a depth map.

    Returns ``(normals, valid)``; ``normals`` is (H, W, 3) and zero where
    ``valid`` is False. A pixel is invalid if its depth or any 4-neighbor's
    depth is missing, or if the cross product degenerates.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != K.shape:
        raise ValueError(f"depth shape {depth.shape} does not match intrinsics {K.shape}")
    has = np.isfinite(depth) & (depth > 0)
    pts = camera_points(np.where(has, depth, 0.0), K)

    du = _axis_diff(pts, axis=1)
    dv = _axis_diff(pts, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)

    valid = has.copy()
    valid[:, 1:] &= has[:, :-1]
    valid[:, :-1] &= has[:, 1:]
    valid[1:, :] &= has[:-1, :]
    valid[:-1, :] &= has[1:, :]
    valid &= norm > 1e-12

    with np.errstate(divide="ignore", invalid="ignore"):
        n = n / norm[..., None]
    # orient toward the camera at the camera-space origin
    flip = np.einsum("hwc,hwc->hw", n, -pts) < 0
    n[flip] *= -1.0
    n[~valid] = 0.0
    return n @ P.R.T, valid


def view_direction(x: np.ndarray, cam_center: np.ndarray) -> np.ndarray:
    """Unit vectors from surface points toward the camera. Works on (..., 3)."""
    v = np.asarray(cam_center, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateGeometryError("surface point coincides with the camera center")
    return v / norm


def fit_scene_bounds(frames: Iterable, K: Intrinsics | None = None) -> SceneBounds:
    """Axis-aligned box around every valid unprojected pixel, plus a 1% margin.

    ``frames`` holds objects with ``depth`` and ``pose`` attributes; intrinsics
    come from ``K`` or each frame's ``intrinsics`` attribute.
    """
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for fr in frames:
        k = K if K is not None else fr.intrinsics
        mask = fr.depth > 0
        if not mask.any():
            continue
        pts = unproject_depth(fr.depth, k, fr.pose)[mask]
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise EmptySceneError("no valid depth pixels in any frame")
    return bounds_from_points(np.stack([lo, hi]))


def bounds_from_points(points: np.ndarray) -> SceneBounds:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptySceneError("no points to bound")
    lo, hi = points.min(axis=0), points.max(axis=0)
    margin = BOUNDS_MARGIN * (hi - lo)
    lo, hi = lo - margin, hi + margin
    thin = (hi - lo) < MIN_EXTENT
    mid = 0.5 * (lo + hi)
    lo = np.where(thin, mid - 0.5 * DEGENERATE_EXTENT, lo)
    hi = np.where(thin, mid + 0.5 * DEGENERATE_EXTENT, hi)
    return SceneBounds(lo, hi)


def normalize_point(x: np.ndarray, b: SceneBounds) -> np.ndarray:
    """Map world points into the unit cube, clamping anything outside."""
    u = (np.asarray(x, dtype=np.float64) - b.min_corner) / b.extent
    return np.clip(u, 0.0, 1.0)


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose with +z pointing from ``eye`` toward ``target``.

    Image rows grow along camera +y, which is aligned against ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)
