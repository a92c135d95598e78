"""Dataset layout, loading, splitting, analytic fixtures and augmented export.

On-disk layout::

    manifest.json          intrinsics, depth_scale, forward_axis, frames[], optional bounds/truth
    images/NNNN.png        8-bit RGB
    depth/NNNN.png         16-bit grayscale, meters = raw * depth_scale, 0 = no measurement
    poses/NNNN.txt         4x4 row-major camera-to-world matrix
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError
from .geometry import Intrinsics, Pose, SceneBounds, look_at
from .lighting import SpotlightParams
from .model import ConstantScene, MaterialOverride
from .renderer import render_image, splat_depth

log = logging.getLogger(__name__)

DEPTH_MAX_RAW = 65535
POSE_TOL = 1e-4


@dataclass(eq=False)
class FrameRecord:
    image: np.ndarray   # (H, W, 3) uint8
    depth: np.ndarray   # (H, W) meters, 0 = invalid
    pose: Pose
    frame_id: int
    split: str = "train"

    @property
    def mask(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class Dataset:
    frames: list[FrameRecord]
    intrinsics: Intrinsics
    depth_scale: float = 1e-4
    forward_axis: str = "+z"
    bounds: SceneBounds | None = None
    truth: dict | None = None
    root: Path | None = None

    def split(self, name: str) -> list[FrameRecord]:
        return [f for f in self.frames if f.split == name]


# ---------------------------------------------------------------------------
# reading and writing

def read_pose(path: Path) -> Pose:
    T = np.loadtxt(path, dtype=np.float64)
    if T.shape == (16,):
        T = T.reshape(4, 4)
    return Pose.from_matrix(T)


def write_pose(path: Path, pose: Pose) -> None:
    np.savetxt(path, pose.matrix(), fmt="%.17g")


def read_depth_png(path: Path, depth_scale: float) -> np.ndarray:
    raw = np.asarray(Image.open(path)).astype(np.float64)
    return raw * depth_scale


def write_depth_png(path: Path, depth: np.ndarray, depth_scale: float) -> None:
    raw = np.round(np.asarray(depth, dtype=np.float64) / depth_scale)
    if raw.max(initial=0) > DEPTH_MAX_RAW:
        raise DatasetError(f"depth {depth.max():.4f} m exceeds 16-bit range at scale {depth_scale}")
    Image.fromarray(raw.astype(np.uint16)).save(path)


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load ``manifest.json`` (or a directory containing it) into a :class:`Dataset`."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})") from e
    root = path.parent
    K = Intrinsics.from_dict(meta["intrinsics"])
    scale = float(meta.get("depth_scale", 1e-4))
    if not scale > 0:
        raise DatasetError(f"{path}: depth_scale must be positive")
    entries = meta.get("frames", [])
    if not entries:
        raise DatasetError(f"{path}: dataset has no frames")

    frames = []
    for e in sorted(entries, key=lambda e: int(e["id"])):
        fid = int(e["id"])
        files = {k: root / e[k] for k in ("image", "depth", "pose")}
        for kind, f in files.items():
            if not f.exists():
                raise DatasetError(f"frame {fid}: missing {kind} file {f}")
        image = np.asarray(Image.open(files["image"]).convert("RGB"))
        depth = read_depth_png(files["depth"], scale)
        if image.shape[:2] != K.shape or depth.shape != K.shape:
            raise DatasetError(f"frame {fid}: image {image.shape[:2]} / depth {depth.shape} "
                               f"do not match intrinsics {K.shape}")
        pose = read_pose(files["pose"])
        if not pose.is_valid(POSE_TOL):
            raise DatasetError(f"frame {fid}: rotation not orthonormal "
                               f"(error {pose.orthonormality_error():.2e})")
        frames.append(FrameRecord(image, depth, pose, fid, e.get("split", "train")))

    bounds = SceneBounds.from_dict(meta["bounds"]) if meta.get("bounds") else None
    ds = Dataset(frames, K, scale, meta.get("forward_axis", "+z"), bounds, meta.get("truth"), root)
    if not any("split" in e for e in entries):
        split_frames(ds.frames)
    return ds


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    for sub in ("images", "depth", "poses"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for fr in ds.frames:
        stem = f"{fr.frame_id:04d}"
        Image.fromarray(fr.image).save(out / "images" / f"{stem}.png")
        write_depth_png(out / "depth" / f"{stem}.png", fr.depth, ds.depth_scale)
        write_pose(out / "poses" / f"{stem}.txt", fr.pose)
        entries.append({"id": fr.frame_id, "image": f"images/{stem}.png", "depth": f"depth/{stem}.png",
                        "pose": f"poses/{stem}.txt", "split": fr.split})
    meta = {"intrinsics": ds.intrinsics.to_dict(), "depth_scale": ds.depth_scale,
            "forward_axis": ds.forward_axis, "frames": entries}
    if ds.bounds is not None:
        meta["bounds"] = ds.bounds.to_dict()
    if ds.truth is not None:
        meta["truth"] = ds.truth
    (out / "manifest.json").write_text(json.dumps(meta, indent=2))
    return out / "manifest.json"


def split_frames(frames: list[FrameRecord], period: int = 9) -> list[FrameRecord]:
    """Tag every ``period``-th frame (index = period-1 mod period) as test, in frame-id order."""
    frames.sort(key=lambda f: f.frame_id)
    if len(frames) < period:
        log.warning("only %d frames; need %d for a non-empty test split, using all for training",
                    len(frames), period)
    for k, fr in enumerate(frames):
        fr.split = "test" if k % period == period - 1 else "train"
    return frames


# ---------------------------------------------------------------------------
# analytic fixtures

def _sphere_depth(pose: Pose, K: Intrinsics, center: np.ndarray, radius: float) -> np.ndarray:
    H, W = K.shape
    jj, ii = np.mgrid[0:H, 0:W].astype(np.float64)
    rays_c = np.stack([(ii - K.cx) / K.fx, (jj - K.cy) / K.fy, np.ones_like(ii)], axis=-1)
    rays_w = rays_c @ pose.R.T                      # world direction per unit camera z
    oc = pose.center - center
    a = np.sum(rays_w * rays_w, axis=-1)
    b = 2.0 * rays_w @ oc
    c = oc @ oc - radius ** 2
    disc = b * b - 4 * a * c
    hit = disc >= 0
    s = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2 * a), 0.0)
    return np.where(hit & (s > 0), s, 0.0)


def _plane_depth(pose: Pose, K: Intrinsics, point: np.ndarray, normal: np.ndarray) -> np.ndarray:
    H, W = K.shape
    jj, ii = np.mgrid[0:H, 0:W].astype(np.float64)
    rays_w = np.stack([(ii - K.cx) / K.fx, (jj - K.cy) / K.fy, np.ones_like(ii)], axis=-1) @ pose.R.T
    denom = rays_w @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((point - pose.center) @ normal) / denom
    return np.where(np.isfinite(s) & (s > 0), s, 0.0)


@dataclass
class AnalyticSceneSpec:
    kind: str = "sphere"
    n_views: int = 20
    base_color: tuple = (0.7, 0.3, 0.2)
    roughness: float = 0.5
    metallic: float = 0.0
    light: SpotlightParams = field(default_factory=lambda: SpotlightParams(5.0, 2.0, 2.0, 2.2))
    width: int = 128
    height: int = 128
    focal: float = 500.0
    radius: float = 1.0
    distance: float = 4.7
    depth_scale: float = 1e-4


def generate_analytic_scene(spec: AnalyticSceneSpec, out_dir: str | Path | None = None) -> Dataset:
    """Ray-trace an analytic sphere (camera orbit) or plane (dolly) and shade it with known constants."""
    if spec.n_views < 1:
        raise ValueError("n_views must be >= 1")
    K = Intrinsics(spec.focal, spec.focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0,
                   spec.width, spec.height)
    truth = ConstantScene(tuple(spec.base_color), spec.roughness, spec.metallic, spec.light)
    frames = []
    for k in range(spec.n_views):
        if spec.kind == "sphere":
            az = 2.0 * math.pi * k / spec.n_views
            el = 0.35 * math.sin(3.0 * az)
            eye = spec.distance * np.array([math.sin(az) * math.cos(el), math.sin(el),
                                            -math.cos(az) * math.cos(el)])
            pose = look_at(eye, np.zeros(3))
            depth = _sphere_depth(pose, K, np.zeros(3), spec.radius)
        elif spec.kind == "plane":
            eye = np.array([0.02 * math.sin(k), 0.02 * math.cos(k), -spec.distance * (1.0 - 0.3 * k / spec.n_views)])
            pose = Pose(np.eye(3), eye)
            depth = _plane_depth(pose, K, np.zeros(3), np.array([0.0, 0.0, 1.0]))
        else:
            raise ValueError(f"unknown analytic scene kind {spec.kind!r}")
        # quantize to the storage grid so the saved dataset reproduces the shaded geometry
        depth = np.round(depth / spec.depth_scale) * spec.depth_scale
        image = render_image(pose, depth, K, truth).image
        frames.append(FrameRecord(image, depth, pose, k))
    split_frames(frames)
    spec_dict = asdict(spec)
    spec_dict["light"] = asdict(spec.light)
    ds = Dataset(frames, K, spec.depth_scale, "+z", truth={"scene": spec_dict})
    if out_dir is not None:
        save_dataset(ds, out_dir)
        ds.root = Path(out_dir)
    return ds


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentationSpec:
    rotation_deg_std: float = 5.0
    translation_std: float = 0.002
    samples_per_frame: int = 24
    albedo_scale: tuple = (0.8, 1.2)
    roughness_offset: tuple = (0.0, 0.0)
    L0_scale: tuple = (0.7, 1.3)
    n_exp: float | None = None
    q_exp: float | None = None
    gamma: float | None = None
    exclude_training_poses: bool = True
    splat_neighbors: int = 2
    min_valid_fraction: float = 0.5
    save_radiance: bool = False

    def __post_init__(self):
        for name in ("albedo_scale", "roughness_offset", "L0_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got ({lo}, {hi})")
        if self.samples_per_frame < 0 or self.splat_neighbors < 0:
            raise ValueError("sample and neighbor counts must be non-negative")
        if self.rotation_deg_std < 0 or self.translation_std < 0:
            raise ValueError("jitter magnitudes must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "AugmentationSpec":
        d = json.loads(Path(path).read_text())
        for k in ("albedo_scale", "roughness_offset", "L0_scale"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ExportReport:
    written: int = 0
    skipped_sparse: int = 0
    skipped_excluded: int = 0
    out_dir: Path | None = None


def _rotation(axis_angle: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(axis_angle)
    if angle < 1e-15:
        return np.eye(3)
    k = axis_angle / angle
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def perturb_pose(pose: Pose, spec: AugmentationSpec, rng: np.random.Generator) -> Pose:
    rot = rng.normal(scale=math.radians(spec.rotation_deg_std), size=3)
    trans = rng.normal(scale=spec.translation_std, size=3)
    if spec.rotation_deg_std == 0 and spec.translation_std == 0:
        return pose
    return Pose(pose.R @ _rotation(rot), pose.t + trans)


def _uniform(rng, bounds):
    # always one draw, so fixing a range does not shift later samples
    lo, hi = bounds
    u = float(rng.random())
    return lo if lo == hi else lo + (hi - lo) * u


def export_augmented(scene, base: Dataset, spec: AugmentationSpec, out_dir: str | Path,
                     rng: np.random.Generator, training_poses: list[Pose] | None = None) -> ExportReport:
    """Render perturbed views of ``base`` with ``scene`` and write them as a dataset.

    Depth for perturbed poses is splatted from the base frame and its
    ``splat_neighbors`` neighbors on each side; an unperturbed pose reuses the
    base depth. Samples whose pose matches an excluded training pose, or whose
    splatted depth covers less than ``min_valid_fraction`` of the image, are
    skipped and counted.
    """
    out = Path(out_dir)
    for sub in ("images", "depth", "poses") + (("radiance",) if spec.save_radiance else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    K = base.intrinsics
    excluded = training_poses if training_poses is not None else [f.pose for f in base.split("train")]
    frames = sorted(base.frames, key=lambda f: f.frame_id)
    light0 = scene.light
    report = ExportReport(out_dir=out)
    entries = []

    for pos, fr in enumerate(frames):
        sources = frames[max(0, pos - spec.splat_neighbors): pos + spec.splat_neighbors + 1]
        for _ in range(spec.samples_per_frame):
            pose = perturb_pose(fr.pose, spec, rng)
            material = MaterialOverride(_uniform(rng, spec.albedo_scale), _uniform(rng, spec.roughness_offset))
            light = SpotlightParams(light0.L0 * _uniform(rng, spec.L0_scale),
                                    spec.n_exp or light0.n_exp, spec.q_exp or light0.q_exp,
                                    spec.gamma or light0.gamma)
            if spec.exclude_training_poses and any(pose.allclose(p, 1e-9) for p in excluded):
                report.skipped_excluded += 1
                continue
            depth = fr.depth if pose is fr.pose else splat_depth(pose, sources, K)
            if np.mean(depth > 0) < spec.min_valid_fraction:
                report.skipped_sparse += 1
                continue
            res = render_image(pose, depth, K, scene, material=material, light=light)
            idx = report.written
            stem = f"{idx:06d}"
            Image.fromarray(res.image).save(out / "images" / f"{stem}.png")
            write_depth_png(out / "depth" / f"{stem}.png", depth, base.depth_scale)
            write_pose(out / "poses" / f"{stem}.txt", pose)
            if spec.save_radiance:
                np.save(out / "radiance" / f"{stem}.npy", res.hdr)
            entries.append({"id": idx, "image": f"images/{stem}.png", "depth": f"depth/{stem}.png",
                            "pose": f"poses/{stem}.txt", "source_frame": fr.frame_id,
                            "albedo_scale": material.albedo_scale,
                            "roughness_offset": material.roughness_offset, "light": asdict(light)})
            report.written += 1

    meta = {"intrinsics": K.to_dict(), "depth_scale": base.depth_scale, "forward_axis": base.forward_axis,
            "frames": entries,
            "skipped": {"sparse": report.skipped_sparse, "excluded": report.skipped_excluded}}
    (out / "manifest.json").write_text(json.dumps(meta, indent=2))
    return report
