import numpy as np
import pytest

from endorender.data_io import AnalyticSceneSpec, generate_analytic_scene
from endorender.geometry import fit_scene_bounds
from endorender.hashgrid import HashGridConfig
from endorender.model import ModelConfig, NeuralScene
from endorender.train import TrainConfig

SMALL_GRID = HashGridConfig(levels=4, table_size=2 ** 12, base_resolution=4, finest_resolution=64)


def small_spec(**kw):
    base = dict(width=32, height=32, focal=125.0, n_views=10)
    base.update(kw)
    return AnalyticSceneSpec(**base)


def small_train_config(**kw):
    base = dict(epochs=2, pixels_per_iter=1000, lr=1e-2, hashgrid=SMALL_GRID, seed=7)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return generate_analytic_scene(small_spec(), root)


@pytest.fixture()
def neural_scene(tiny_dataset):
    rng = np.random.default_rng(11)
    bounds = fit_scene_bounds(tiny_dataset.split("train"), tiny_dataset.intrinsics)
    scene = NeuralScene.initialize(ModelConfig(SMALL_GRID), bounds, rng)
    # move away from the near-constant init so every gradient path is exercised
    t = scene.store["hash.tables"]
    t[...] = rng.normal(scale=0.5, size=t.shape)
    return scene
