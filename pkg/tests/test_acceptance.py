"""Acceptance suite: one PASS/FAIL line per criterion, printed even under captured output."""

import math
import os
import time

import numpy as np
import pytest

from endorender.data_io import (AnalyticSceneSpec, AugmentationSpec, export_augmented, generate_analytic_scene,
                                load_dataset)
from endorender.evaluation import analytic_recovery, evaluate
from endorender.gradcheck import grad_check
from endorender.hashgrid import HashGridConfig
from endorender.lighting import SpotlightParams, incident_light
from endorender.loss import compute_loss
from endorender.metrics import psnr, ssim
from endorender.model import ConstantScene, NeuralScene
from endorender.renderer import shade_points
from endorender.train import TrainConfig, initialize, train

from conftest import small_spec, small_train_config
from oracles import shade
from test_renderer import random_configs

# fixture run settings, shared with scripts/run_analytic_recovery.py defaults
RECOVERY_CONFIG = dict(epochs=300, lr=1e-2, seed=0, init_material=(0.5, 0.5, 0.001))


@pytest.fixture()
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def test_gradient_correctness(verdict, tiny_dataset):
    cfg = small_train_config(hashgrid=HashGridConfig())
    scene, _, rngs = initialize(tiny_dataset, cfg)
    t = scene.store["hash.tables"]
    t[...] = rngs["init"].normal(scale=0.5, size=t.shape)
    start = time.perf_counter()
    rep = grad_check(scene, 100, np.random.default_rng(0))
    secs = time.perf_counter() - start
    groups = {"hash", "mlp", "L0", "n_exp", "q_exp", "gamma"}
    worst = max(rep.max_rel_error.values())
    ok = rep.n_samples >= 100 and set(rep.max_rel_error) >= groups and worst < 1e-4 and secs < 60
    detail = ", ".join(f"{g} {e:.1e}" for g, e in sorted(rep.max_rel_error.items()))
    verdict("gradient correctness", ok, f"{rep.n_samples} samples, {detail}, {secs:.1f}s")


def test_rendering_equation_oracle(verdict):
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(10):
        x, nrm, omega, cam, v, s, L = random_configs(rng, 1000)
        _, ldr = shade_points(x, nrm, omega, cam, v, s, L)
        for k in range(len(x)):
            _, want = shade(x[k], nrm[k], omega[k], cam[k], v[k], s.b[k], s.r[k], s.m[k],
                            L.L0, L.n_exp, L.q_exp, L.gamma)
            worst = max(worst, np.abs(np.clip(ldr[k], 0, 1) - np.clip(want, 0, 1)).max())
    verdict("rendering-equation oracle", worst <= 1e-6, f"10000 configs, max channel error {worst:.2e}")


def test_spotlight_hand_values(verdict):
    axis = np.array([0.0, 0.0, 1.0])
    a = float(incident_light(axis, np.zeros(3), axis, SpotlightParams(3.7, 1.3, 2.0, 2.2)))
    b = float(incident_light(np.array([math.sqrt(3.0), 0, 1]), np.zeros(3), axis, SpotlightParams(2.0, 1.0, 2.0)))
    # one ulp of slack: sqrt(3) is itself rounded
    ok = a == 3.7 and abs(b - 0.25) <= 2 * np.spacing(0.25)
    verdict("spotlight closed form", ok, f"theta=0,d=1 -> {a!r}; 60deg,d=2 -> {b!r}")


@pytest.mark.slow
def test_analytic_scene_recovery(verdict):
    cfg = TrainConfig(**RECOVERY_CONFIG)
    res = analytic_recovery(cfg)
    p, s = res.test.mean_psnr, res.test.mean_ssim
    ok = cfg.epochs <= 300 and p >= 35 and s >= 0.95 and res.albedo_rmse <= 0.05 and res.seconds <= 1800
    verdict("analytic-scene recovery", ok,
            f"PSNR {p:.2f} dB, SSIM {s:.3f}, albedo RMSE {res.albedo_rmse:.3f}, "
            f"{cfg.epochs} epochs in {res.seconds:.0f}s, light {res.light}")


@pytest.mark.skipif(not os.environ.get("ENDORENDER_C3VD_DATA"),
                    reason="set ENDORENDER_C3VD_DATA and ENDORENDER_C3VD_CHECKPOINT to a converted sequence")
def test_c3vd_reproduction(verdict):
    ds = load_dataset(os.environ["ENDORENDER_C3VD_DATA"])
    scene = NeuralScene.load(os.environ["ENDORENDER_C3VD_CHECKPOINT"])
    rep = evaluate(scene, ds.split("test"), ds.intrinsics)
    ok = abs(rep.mean_psnr - 30.39) <= 2 and abs(rep.mean_ssim - 0.86) <= 0.05
    verdict("C3VD reproduction", ok, f"PSNR {rep.mean_psnr:.2f} dB, SSIM {rep.mean_ssim:.3f}")


def test_determinism(verdict, tiny_dataset, tmp_path):
    for name in ("a", "b"):
        train(tiny_dataset, small_train_config(seed=7), tmp_path / name)
    a = (tmp_path / "a" / "train_log.csv").read_bytes()
    b = (tmp_path / "b" / "train_log.csv").read_bytes()
    verdict("determinism", a == b and len(a) > 0, f"seed 7 loss CSVs identical ({len(a)} bytes)")


def test_metallic_regularizer_weight(verdict):
    n = 64
    gt = np.random.default_rng(0).uniform(size=(n, 3))
    b = np.full((n, 3), 0.3)
    bd = compute_loss(gt, gt, np.ones(n), (b, b))
    verdict("loss additivity and lambda_m", bd.total == 1e-4, f"total {bd.total!r}")


def test_metric_sanity(verdict):
    gt = np.random.default_rng(4).uniform(0.2, 0.8, size=(32, 32, 3))
    p20, p40, s = psnr(gt + 0.1, gt), psnr(gt + 0.01, gt), ssim(gt, gt)
    ok = p20 == pytest.approx(20, abs=1e-9) and p40 == pytest.approx(40, abs=1e-9) and s == 1.0
    verdict("metric sanity", ok, f"PSNR {p20:.12f} / {p40:.12f}, SSIM(x,x) {s!r}")


def test_augmentation_linearity(verdict, tiny_dataset, tmp_path):
    t = tiny_dataset.truth["scene"]
    scene = ConstantScene(tuple(t["base_color"]), t["roughness"], t["metallic"], SpotlightParams(**t["light"]))
    kw = dict(rotation_deg_std=3.0, translation_std=0.02, samples_per_frame=2, save_radiance=True,
              exclude_training_poses=False, min_valid_fraction=0.0)
    export_augmented(scene, tiny_dataset, AugmentationSpec(**kw, L0_scale=(1.0, 1.0)), tmp_path / "a",
                     np.random.default_rng(9))
    export_augmented(scene, tiny_dataset, AugmentationSpec(**kw, L0_scale=(0.5, 0.5)), tmp_path / "b",
                     np.random.default_rng(9))
    files = sorted((tmp_path / "a" / "radiance").glob("*.npy"))
    worst = max(np.abs(np.load(tmp_path / "b" / "radiance" / f.name) - 0.5 * np.load(f)).max() for f in files)
    verdict("augmentation linearity", bool(files) and worst < 1e-9, f"{len(files)} images, max deviation {worst:.1e}")


def test_export_load_round_trip(verdict, tmp_path):
    ds = generate_analytic_scene(small_spec(n_views=6), tmp_path)
    back = load_dataset(tmp_path)
    pose_err = max(np.abs(a.pose.matrix() - b.pose.matrix()).max() for a, b in zip(ds.frames, back.frames))
    depth_err = max(np.abs(a.depth - b.depth).max() for a, b in zip(ds.frames, back.frames))
    ok = pose_err <= 1e-6 and depth_err <= ds.depth_scale and len(back.frames) == 6
    verdict("export/load round trip", ok, f"pose error {pose_err:.1e}, depth error {depth_err:.2e} "
                                          f"(quantum {ds.depth_scale:g})")
