"""Evaluation metrics, native where closed-form and pluggable where a
pretrained perception model would be required.

Note the naming split: the evaluation tables score pose agreement with a
plain L2 between heatmaps (here ``heatmap_l2``), which is a different
formula from the Adaptive Wing penalty used to drive refinement. The two
are kept distinct on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .core import Heatmap, Image

TABLE_COLUMNS = ("PSNR", "SSIM", "LPIPS", "FID", "ID", "AW")
UNAVAILABLE = "n/a"

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_SSIM_WINDOW = 11


@dataclass(frozen=True)
class MetricReport:
    psnr: float  # math.inf for identical images
    ssim: float
    heatmap_l2: float
    id_metric: float | None = None
    lpips: float | None = None
    fid: float | None = None

    def row(self) -> list[str]:
        def fmt(v, digits=4):
            if v is None:
                return UNAVAILABLE
            if math.isinf(v):
                return "inf"
            return f"{v:.{digits}f}"
        return [fmt(self.psnr, 3), fmt(self.ssim), fmt(self.lpips), fmt(self.fid),
                fmt(self.id_metric), fmt(self.heatmap_l2, 6)]


def psnr(a: Image, b: Image) -> float:
    """10*log10(1/MSE) for unit-range images; equal inputs give inf."""
    if a.data.shape != b.data.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _to_gray(image: Image) -> np.ndarray:
    if image.channels == 1:
        return image.data[:, :, 0]
    # ITU-R BT.601 luma
    return (0.299 * image.data[:, :, 0] + 0.587 * image.data[:, :, 1]
            + 0.114 * image.data[:, :, 2])


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: Image, b: Image) -> float:
    """Windowed SSIM on the grayscale conversion: 11x11 Gaussian window with
    sigma 1.5, k1=0.01, k2=0.03, averaged over the valid (fully covered)
    window positions."""
    if a.data.shape != b.data.shape:
        raise ValueError("image shapes differ")
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    x = _to_gray(a)
    y = _to_gray(b)
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)

    def filt(img):
        return convolve(img, kernel, mode="constant")

    half = _SSIM_WINDOW // 2
    valid = (slice(half, x.shape[0] - half), slice(half, x.shape[1] - half))
    mu_x = filt(x)[valid]
    mu_y = filt(y)[valid]
    sxx = filt(x * x)[valid] - mu_x ** 2
    syy = filt(y * y)[valid] - mu_y ** 2
    sxy = filt(x * y)[valid] - mu_x * mu_y
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def heatmap_l2(a: Heatmap, b: Heatmap) -> float:
    """Mean squared difference over all joints and pixels (the evaluation
    tables' pose metric; not the Adaptive Wing formula)."""
    if a.data.shape != b.data.shape:
        raise ValueError("heatmap shapes differ")
    return float(np.mean((a.data - b.data) ** 2))


def id_metric(a: Image, b: Image, identity_embedder) -> float:
    """1 minus cosine similarity of identity embeddings; lower is better."""
    ea = identity_embedder(a)
    eb = identity_embedder(b)
    return float(1.0 - ea @ eb)


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Fixed-order text table (PSNR, SSIM, LPIPS, FID, ID, AW) with
    unavailable columns marked."""
    header = ["case"] + list(TABLE_COLUMNS)
    lines = [" | ".join(header), "-" * (len(" | ".join(header)))]
    for name, report in rows:
        lines.append(" | ".join([name] + report.row()))
    return "\n".join(lines)
