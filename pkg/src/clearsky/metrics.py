"""Reference PSNR / SSIM on unit-range images, plus row aggregation.

SSIM follows the standard single-scale formulation: 11x11 Gaussian window
with sigma 1.5, K1=0.01, K2=0.03, dynamic range 1, computed per channel over
valid window positions and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidArgumentError, ShapeMismatchError
from .imaging import Image

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricRow:
    psnr_db: float
    ssim: float
    dataset_id: str = ""
    version_tag: int = 0

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise InvalidArgumentError(f"ssim out of range: {self.ssim}")
        if self.psnr_db > PSNR_CAP_DB:
            raise InvalidArgumentError(f"psnr above cap: {self.psnr_db}")


def _pixels(img) -> np.ndarray:
    arr = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return np.clip(arr, 0.0, 1.0)


def psnr(a, b) -> float:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatchError(f"shape mismatch {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b) -> float:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeMismatchError(f"shape mismatch {pa.shape} vs {pb.shape}")
    if pa.shape[0] < SSIM_WINDOW or pa.shape[1] < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"image {pa.shape[:2]} smaller than SSIM window {SSIM_WINDOW}"
        )
    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    vals = []
    for c in range(pa.shape[2]):
        x, y = pa[..., c], pb[..., c]
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        mu_xx = convolve2d(x * x, win, mode="valid")
        mu_yy = convolve2d(y * y, win, mode="valid")
        mu_xy = convolve2d(x * y, win, mode="valid")
        var_x = mu_xx - mu_x**2
        var_y = mu_yy - mu_y**2
        cov = mu_xy - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        vals.append(float(s.mean()))
    return float(np.mean(vals))


def aggregate(rows) -> dict:
    rows = list(rows)
    if not rows:
        raise InvalidArgumentError("no rows to aggregate")
    return {
        "psnr_db": float(np.mean([r.psnr_db for r in rows])),
        "ssim": float(np.mean([r.ssim for r in rows])),
    }
