"""Training loop: frame/pixel sampling, light calibration, Adam updates and logging."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import loss as loss_mod
from .errors import EmptySceneError
from .geometry import fit_scene_bounds
from .hashgrid import HashGridConfig
from .lighting import SpotlightParams
from .loss import LossBreakdown, PixelBatch
from .model import ModelConfig, NeuralScene
from .optim import AdamState, adam_step
from .renderer import pixel_geometry

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "iter", "l1", "metallic", "smoothness", "total", "L0", "n_exp", "q_exp", "gamma")


@dataclass
class TrainConfig:
    epochs: int = 1500
    frames_per_iter: int = 5
    pixels_per_iter: int = 30000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_m: float = loss_mod.LAMBDA_METALLIC
    lambda_b: float = loss_mod.LAMBDA_ALBEDO
    seed: int = 0
    checkpoint_every: int = 0
    calibration_pixels: int = 1000
    hashgrid: HashGridConfig = field(default_factory=HashGridConfig)
    init_light: SpotlightParams = field(default_factory=lambda: SpotlightParams(1.0, 1.0, 2.0, 2.2))
    factor4: bool = False
    group_lr_scale: dict = field(default_factory=dict)
    # (albedo, roughness, metallic) the untrained field starts at, via the output biases
    init_material: tuple = (0.5, 0.5, 0.5)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hashgrid"] = self.hashgrid.to_dict()
        d["init_light"] = asdict(self.init_light)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hashgrid" in d:
            d["hashgrid"] = HashGridConfig(**d["hashgrid"])
        if "init_light" in d:
            d["init_light"] = SpotlightParams(**d["init_light"])
        return cls(**d)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent counter-based (Philox) generators for each consumer."""
    names = ("init", "sample")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.Philox(s)) for n, s in zip(names, seqs)}


class PixelPool:
    """Per-frame shading inputs for every usable pixel, computed lazily."""

    def __init__(self, frames, K, forward_axis: str = "+z"):
        self.frames = list(frames)
        self.K = K
        self.forward_axis = forward_axis
        self._get = lru_cache(maxsize=64)(self._compute)

    def _compute(self, k: int) -> dict[str, np.ndarray]:
        fr = self.frames[k]
        x, n, omega, valid = pixel_geometry(fr.pose, fr.depth, self.K, self.forward_axis)
        v_light = fr.pose.forward(self.forward_axis)
        rel = x - fr.pose.center
        usable = valid & (np.einsum("hwc,hwc->hw", n, omega) > 0) & (rel @ v_light > 0)
        return {
            "x": x[usable], "n": n[usable], "omega": omega[usable],
            "gt": fr.image[usable].astype(np.float64) / 255.0,
            "x_cam": fr.pose.center, "v_light": v_light,
        }

    def __getitem__(self, k: int) -> dict[str, np.ndarray]:
        return self._get(k)

    def __len__(self):
        return len(self.frames)

    def count(self, k: int) -> int:
        return len(self[k]["x"])

    def sample(self, frame_ids, per_frame: int, rng: np.random.Generator, jitter_radius: float) -> PixelBatch:
        parts = {k: [] for k in ("x", "n", "omega", "x_cam", "v_light", "gt")}
        for k in frame_ids:
            data = self[int(k)]
            count = len(data["x"])
            if count == 0:
                continue
            sel = rng.choice(count, size=per_frame, replace=per_frame > count)
            for key in ("x", "n", "omega", "gt"):
                parts[key].append(data[key][sel])
            parts["x_cam"].append(np.broadcast_to(data["x_cam"], (per_frame, 3)))
            parts["v_light"].append(np.broadcast_to(data["v_light"], (per_frame, 3)))
        if not parts["x"]:
            raise EmptySceneError("selected frames have no usable pixels")
        arrays = {k: np.concatenate(v) for k, v in parts.items()}
        jitter = loss_mod.sample_jitter(rng, len(arrays["x"]), jitter_radius)
        return PixelBatch(arrays["x"], arrays["n"], arrays["omega"], arrays["x_cam"],
                          arrays["v_light"], arrays["gt"], jitter)


def calibrate_light(scene: NeuralScene, pool: PixelPool, n_pixels: int, rng: np.random.Generator) -> None:
    """Rescale L0 so the median predicted intensity matches the median ground truth."""
    if n_pixels <= 0:
        return
    per = max(1, math.ceil(n_pixels / len(pool)))
    batch = pool.sample(range(len(pool)), per, rng, 0.0)
    ldr, _ = scene.shade_world(batch.x, batch.n, batch.omega, batch.x_cam, batch.v_light)
    pred = np.median(ldr.mean(axis=1))
    target = np.median(batch.gt.mean(axis=1))
    if pred > 0 and target > 0:
        p = scene.light
        p.L0 *= (target / pred) ** (1.0 / p.gamma)
        scene.set_light(p)


def set_output_bias(scene: NeuralScene, material) -> None:
    b, r, m = (float(v) for v in material)
    if not all(0 < v < 1 for v in (b, r, m)):
        raise ValueError("init_material values must lie strictly inside (0, 1)")
    target = np.array([b, b, b, r, m])
    scene.store["mlp.b2"][...] = np.log(target / (1 - target))


def initialize(dataset, config: TrainConfig) -> tuple[NeuralScene, PixelPool, dict]:
    train_frames = dataset.split("train")
    if not train_frames:
        raise EmptySceneError("training split is empty")
    pool = PixelPool(train_frames, dataset.intrinsics, dataset.forward_axis)
    if sum(pool.count(k) for k in range(len(pool))) == 0:
        raise EmptySceneError("training frames contain no usable pixels")
    bounds = dataset.bounds or fit_scene_bounds(train_frames, dataset.intrinsics)
    rngs = rng_streams(config.seed)
    model_cfg = ModelConfig(config.hashgrid, forward_axis=dataset.forward_axis, factor4=config.factor4)
    scene = NeuralScene.initialize(model_cfg, bounds, rngs["init"], config.init_light)
    set_output_bias(scene, config.init_material)
    calibrate_light(scene, pool, config.calibration_pixels, rngs["init"])
    return scene, pool, rngs


def train_step(scene: NeuralScene, batch: PixelBatch, config: TrainConfig, adam: AdamState) -> LossBreakdown:
    ctx = loss_mod.forward(scene, batch, config.lambda_m, config.lambda_b)
    loss_mod.backward(ctx)
    adam_step(scene.store, adam)
    return ctx.breakdown


def train(dataset, config: TrainConfig, out_dir: str | Path | None = None, progress=None) -> NeuralScene:
    """Optimize a neural scene on the training split.

    Each iteration draws ``frames_per_iter`` training frames and
    ``pixels_per_iter`` pixels split evenly between them. One epoch is
    ``ceil(#train / frames_per_iter)`` iterations. With ``out_dir`` the loss
    curve goes to ``train_log.csv`` and checkpoints to ``checkpoint*.bin``.
    """
    scene, pool, rngs = initialize(dataset, config)
    rng = rngs["sample"]
    adam = AdamState(config.lr, config.beta1, config.beta2, config.eps,
                     group_lr_scale=dict(config.group_lr_scale))
    n_train = len(pool)
    iters_per_epoch = math.ceil(n_train / config.frames_per_iter)
    per_frame = math.ceil(config.pixels_per_iter / config.frames_per_iter)
    jitter = loss_mod.JITTER_RADIUS

    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    extra = {"train": config.to_dict()}
    try:
        for epoch in range(1, config.epochs + 1):
            for it in range(iters_per_epoch):
                ids = rng.choice(n_train, size=config.frames_per_iter, replace=n_train < config.frames_per_iter)
                batch = pool.sample(ids, per_frame, rng, jitter)
                bd = train_step(scene, batch, config, adam)
                if writer is not None:
                    p = scene.light
                    writer.writerow([epoch, it, repr(bd.l1), repr(bd.metallic_penalty),
                                     repr(bd.albedo_smoothness), repr(bd.total),
                                     repr(p.L0), repr(p.n_exp), repr(p.q_exp), repr(p.gamma)])
            if progress is not None:
                progress(epoch, bd)
            if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                scene.save(out / f"checkpoint_{epoch:05d}.bin", extra)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        scene.save(out / "checkpoint.bin", extra)
    return scene
