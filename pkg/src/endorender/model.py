"""Scene models: the learnable neural scene and a constant-material reference scene."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import brdf
from .brdf import BrdfSample
from .geometry import SceneBounds, normalize_point
from .hashgrid import HashGridConfig, init_tables
from .lighting import LIGHT_KEYS, SpotlightParams
from .renderer import shade_points
from .store import ParamStore, load_checkpoint, save_checkpoint


@dataclass
class MaterialOverride:
    """Global edits applied on top of predicted materials (re-clamped to [0, 1])."""

    albedo_scale: float = 1.0
    roughness_offset: float = 0.0
    metallic: float | None = None

    def apply(self, s: BrdfSample) -> BrdfSample:
        m = s.m if self.metallic is None else np.full_like(s.m, self.metallic)
        return BrdfSample(b=np.clip(s.b * self.albedo_scale, 0.0, 1.0),
                          r=np.clip(s.r + self.roughness_offset, 0.0, 1.0), m=m)


class Scene:
    forward_axis: str = "+z"
    factor4: bool = False

    @property
    def light(self) -> SpotlightParams:
        raise NotImplementedError

    def material(self, x_world: np.ndarray) -> BrdfSample:
        raise NotImplementedError

    def shade_world(self, x, n, omega, x_cam, v_light, material: MaterialOverride | None = None,
                    light: SpotlightParams | None = None):
        """Return ``(ldr, hdr)`` for world-space shading inputs; ``ldr`` is unclamped."""
        s = self.material(x)
        if material is not None:
            s = material.apply(s)
        hdr, ldr = shade_points(x, n, omega, x_cam, v_light, s, light or self.light, self.factor4)
        return ldr, hdr


@dataclass
class ConstantScene(Scene):
    base_color: tuple = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    metallic: float = 0.0
    spotlight: SpotlightParams = field(default_factory=SpotlightParams)
    forward_axis: str = "+z"
    factor4: bool = False

    @property
    def light(self) -> SpotlightParams:
        return self.spotlight

    def material(self, x_world):
        N = len(x_world)
        return BrdfSample(b=np.tile(np.asarray(self.base_color, dtype=np.float64), (N, 1)),
                          r=np.full(N, float(self.roughness)), m=np.full(N, float(self.metallic)))


@dataclass
class ModelConfig:
    hashgrid: HashGridConfig = field(default_factory=HashGridConfig)
    hidden: int = brdf.HIDDEN
    forward_axis: str = "+z"
    factor4: bool = False

    def to_dict(self) -> dict:
        return {"hashgrid": self.hashgrid.to_dict(), "hidden": self.hidden,
                "forward_axis": self.forward_axis, "factor4": self.factor4}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(hashgrid=HashGridConfig(**d.get("hashgrid", {})), hidden=int(d.get("hidden", brdf.HIDDEN)),
                   forward_axis=d.get("forward_axis", "+z"), factor4=bool(d.get("factor4", False)))


class NeuralScene(Scene):
    """Hash-grid + MLP material field with a learnable spotlight and gamma."""

    def __init__(self, store: ParamStore, config: ModelConfig, bounds: SceneBounds):
        self.store = store
        self.config = config
        self.bounds = bounds
        self.forward_axis = config.forward_axis
        self.factor4 = config.factor4

    @classmethod
    def initialize(cls, config: ModelConfig, bounds: SceneBounds, rng: np.random.Generator,
                   light: SpotlightParams | None = None) -> "NeuralScene":
        store = ParamStore()
        store.add("hash.tables", init_tables(config.hashgrid, rng))
        for k, v in brdf.init_mlp(config.hashgrid.output_dim, rng, config.hidden).items():
            store.add(k, v)
        for k, v in (light or SpotlightParams()).to_raw().items():
            store.add(k, v)
        return cls(store, config, bounds)

    @property
    def cfg(self) -> HashGridConfig:
        return self.config.hashgrid

    @property
    def light(self) -> SpotlightParams:
        return SpotlightParams.from_raw({k: self.store[k] for k in LIGHT_KEYS})

    def set_light(self, p: SpotlightParams) -> None:
        for k, v in p.to_raw().items():
            self.store[k][...] = v

    @property
    def mlp(self) -> dict[str, np.ndarray]:
        return {k: self.store[k] for k in brdf.MLP_KEYS}

    def normalize(self, x_world: np.ndarray) -> np.ndarray:
        return normalize_point(x_world, self.bounds)

    def material_normalized(self, x_norm: np.ndarray, return_context: bool = False):
        return brdf.predict_material(x_norm, self.mlp, self.store["hash.tables"], self.cfg,
                                     return_context=return_context)

    def material(self, x_world):
        return self.material_normalized(self.normalize(x_world))

    def checkpoint_config(self) -> dict:
        return {"model": self.config.to_dict(), "bounds": self.bounds.to_dict()}

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        cfg = self.checkpoint_config()
        if extra:
            cfg.update(extra)
        save_checkpoint(path, self.store, cfg)

    @classmethod
    def load(cls, path: str | Path) -> "NeuralScene":
        store, cfg = load_checkpoint(path)
        return cls(store, ModelConfig.from_dict(cfg["model"]), SceneBounds.from_dict(cfg["bounds"]))

    def with_light(self, p: SpotlightParams) -> "NeuralScene":
        other = NeuralScene(self.store.copy(), replace(self.config), self.bounds)
        other.set_light(p)
        return other
