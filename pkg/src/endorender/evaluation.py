from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import unproject_depth
from .metrics import EvalReport, psnr, ssim
from .renderer import render_image


def evaluate(scene, frames, K) -> EvalReport:
    """Render each frame at its pose with its own depth and score it on valid pixels."""
    report = EvalReport()
    for fr in frames:
        res = render_image(fr.pose, fr.depth, K, scene)
        report.add(fr.frame_id, psnr(res.image, fr.image, res.valid), ssim(res.image, fr.image, res.valid))
    return report


def surface_probes(frames, K, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random world points on the observed surface, drawn from valid depth pixels."""
    pts = np.concatenate([unproject_depth(f.depth, K, f.pose)[f.depth > 0] for f in frames])
    return pts[rng.choice(len(pts), size=n, replace=len(pts) < n)]


def albedo_rmse(scene, points: np.ndarray, true_albedo) -> float:
    b = scene.material(points).b
    return float(np.sqrt(np.mean((b - np.asarray(true_albedo, dtype=np.float64)) ** 2)))


@dataclass
class RecoveryResult:
    test: EvalReport
    albedo_rmse: float
    seconds: float
    epochs: int
    light: object
    scene: object


def analytic_recovery(config, spec=None, n_probes: int = 1000, progress=None) -> RecoveryResult:
    """Train on the 20-view analytic sphere and score held-out views and albedo."""
    from .data_io import AnalyticSceneSpec, generate_analytic_scene
    from .train import train

    spec = spec or AnalyticSceneSpec()
    ds = generate_analytic_scene(spec)
    probes = surface_probes(ds.split("train"), ds.intrinsics, n_probes, np.random.default_rng(config.seed + 1))
    start = time.perf_counter()
    scene = train(ds, config, progress=progress)
    seconds = time.perf_counter() - start
    return RecoveryResult(evaluate(scene, ds.split("test"), ds.intrinsics),
                          albedo_rmse(scene, probes, spec.base_color), seconds, config.epochs, scene.light, scene)
