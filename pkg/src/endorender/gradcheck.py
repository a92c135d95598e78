"""Finite-difference verification of the analytic gradients on random single-pixel losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loss as loss_mod
from .loss import PixelBatch
from .model import NeuralScene
from .store import group_of

FD_STEP = 1e-5
REL_FLOOR = 1e-6
ENTRIES_PER_GROUP = 3


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    n_samples: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return all(v < tol for v in self.max_rel_error.values())

    def update(self, group: str, err: float) -> None:
        self.max_rel_error[group] = max(self.max_rel_error.get(group, 0.0), err)
        self.checked[group] = self.checked.get(group, 0) + 1


def random_pixel(scene: NeuralScene, rng: np.random.Generator) -> PixelBatch:
    """One lit, front-facing shading configuration inside the scene bounds."""
    lo, hi = scene.bounds.min_corner, scene.bounds.max_corner
    x = lo + (hi - lo) * rng.uniform(0.1, 0.9, size=3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    cam = x - axis * rng.uniform(0.5, 2.0) * np.linalg.norm(hi - lo)
    # light axis tilted off the point so cos(theta) < 1 and dL/dn is exercised
    v = axis + 0.3 * rng.normal(size=3)
    v /= np.linalg.norm(v)
    if v @ axis < 0.2:
        v = axis
    omega = (cam - x) / np.linalg.norm(cam - x)
    n = omega + 0.5 * rng.normal(size=3)
    n /= np.linalg.norm(n)
    if n @ omega < 0.1:
        n = omega
    gt = rng.uniform(0.0, 1.0, size=3)
    jitter = loss_mod.sample_jitter(rng, 1)
    return PixelBatch(x[None], n[None], omega[None], cam[None], v[None], gt[None], jitter)


def _total(scene, batch, lambda_m, lambda_b) -> float:
    return loss_mod.forward(scene, batch, lambda_m, lambda_b).breakdown.total


def grad_check(scene: NeuralScene, n_samples: int, rng: np.random.Generator,
               lambda_m: float = loss_mod.LAMBDA_METALLIC, lambda_b: float = loss_mod.LAMBDA_ALBEDO,
               h: float = FD_STEP) -> GradCheckReport:
    """Compare analytic gradients with central differences, per parameter group.

    For each sample the check perturbs a few entries per group: hash entries
    touched by the pixel, random MLP weights, and every light scalar. The
    relative error is ``|a - fd| / max(|a|, |fd|, 1e-6)``.
    """
    report = GradCheckReport(n_samples=n_samples)
    if n_samples <= 0:
        return report
    store = scene.store
    for _ in range(n_samples):
        batch = random_pixel(scene, rng)
        store.zero_grad()
        loss_mod.backward(loss_mod.forward(scene, batch, lambda_m, lambda_b))
        for name in store.names():
            flat = store.values[name].reshape(-1)
            grad = store.grads[name].reshape(-1)
            if name == "hash.tables":
                candidates = np.flatnonzero(grad)
                if len(candidates) == 0:
                    continue
                picks = rng.choice(candidates, size=min(ENTRIES_PER_GROUP, len(candidates)), replace=False)
            elif flat.size > 1:
                picks = rng.choice(flat.size, size=min(ENTRIES_PER_GROUP, flat.size), replace=False)
            else:
                picks = [0]
            for k in picks:
                orig = flat[k]
                flat[k] = orig + h
                up = _total(scene, batch, lambda_m, lambda_b)
                flat[k] = orig - h
                down = _total(scene, batch, lambda_m, lambda_b)
                flat[k] = orig
                fd = (up - down) / (2 * h)
                a = grad[k]
                report.update(group_of(name), abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR))
    store.zero_grad()
    return report
