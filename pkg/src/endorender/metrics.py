"""Masked PSNR and SSIM for novel-view evaluation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_float(img) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    return mask


def psnr(pred, gt, mask=None) -> float:
    """PSNR in dB on unit dynamic range over masked pixels; identical images give 100."""
    pred, gt = _as_float(pred), _as_float(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    m = _mask(mask, pred.shape)
    if not m.any():
        raise ValueError("PSNR mask is empty")
    mse = float(np.mean((pred[m] - gt[m]) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # "valid" separable filtering: output (H-s+1, W-s+1)
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_map(x: np.ndarray, y: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """Local SSIM on one channel for every full window position."""
    g = gaussian_window() if g is None else g
    C1, C2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_x, mu_y = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mu_x ** 2
    syy = _filter(y * y, g) - mu_y ** 2
    sxy = _filter(x * y, g) - mu_x * mu_y
    return ((2 * mu_x * mu_y + C1) * (2 * sxy + C2)) / ((mu_x ** 2 + mu_y ** 2 + C1) * (sxx + syy + C2))


def ssim(pred, gt, mask=None) -> float:
    """Mean SSIM over windows lying entirely inside the mask, averaged over channels.

    Images smaller than the window fall back to a single global window.
    """
    pred, gt = _as_float(pred), _as_float(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    m = _mask(mask, pred.shape)
    if not m.any():
        raise ValueError("SSIM mask is empty")
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    g = gaussian_window()
    H, W = m.shape
    if H < len(g) or W < len(g):
        return _global_ssim(pred[m], gt[m])
    # a window counts only when every pixel under it is valid
    k = len(g)
    box = np.ones(k)
    cover = correlate1d(correlate1d(m.astype(np.float64), box, axis=0, mode="constant"),
                        box, axis=1, mode="constant")
    r = k // 2
    full = cover[r:H - r, r:W - r] >= k * k - 0.5
    if not full.any():
        return _global_ssim(pred[m], gt[m])
    vals = [ssim_map(pred[..., c], gt[..., c], g)[full].mean() for c in range(pred.shape[-1])]
    return float(np.mean(vals))


def _global_ssim(x: np.ndarray, y: np.ndarray) -> float:
    C1, C2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    vals = []
    for c in range(x.shape[-1]):
        a, b = x[:, c], y[:, c]
        ma, mb = a.mean(), b.mean()
        cov = np.mean((a - ma) * (b - mb))
        vals.append(((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma ** 2 + mb ** 2 + C1) * (a.var() + b.var() + C2)))
    return float(np.mean(vals))


@dataclass
class EvalReport:
    frame_ids: list[int] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, frame_id: int, p: float, s: float) -> None:
        self.frame_ids.append(int(frame_id))
        self.psnr.append(float(p))
        self.ssim.append(float(s))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_dict(self) -> dict:
        return {"frames": [{"frame_id": f, "psnr": p, "ssim": s}
                           for f, p, s in zip(self.frame_ids, self.psnr, self.ssim)],
                "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim}

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(out / "eval.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_id", "psnr", "ssim"])
            for row in zip(self.frame_ids, self.psnr, self.ssim):
                w.writerow(row)
            w.writerow(["mean", self.mean_psnr, self.mean_ssim])
