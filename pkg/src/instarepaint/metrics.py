"""PSNR / SSIM and the codec round-trip degradation experiment."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionError
from .raster import luminance

DATA_RANGE = 255.0
SSIM_SIGMA = 1.5
SSIM_WIN = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b, region=None):
    a, b = _pair(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != a.shape[:2]:
            raise DimensionError(f"region {region.shape} does not match image {a.shape[:2]}")
        diff = diff[region]
    if diff.size == 0:
        raise ValueError("empty region")
    return float(np.mean(diff ** 2))


def psnr(a, b, region=None):
    """Peak signal-to-noise ratio in dB for 8-bit rasters, over all channels.

    ``region`` restricts the comparison to a boolean ``(H, W)`` selection.
    Identical inputs give ``math.inf``.
    """
    err = mse(a, b, region)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / err)


def format_db(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"


def ssim(a, b):
    """Mean SSIM on luma with an 11x11 Gaussian window (sigma 1.5).

    Uses K1 = 0.01, K2 = 0.03 and dynamic range 255; local statistics are
    population (not sample) moments and the 5 px border where the window
    would leave the image is excluded from the mean.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise DimensionError(f"image {a.shape[:2]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    if np.array_equal(a, b):
        return 1.0
    x = luminance(a)
    y = luminance(b)
    truncate = ((SSIM_WIN - 1) / 2) / SSIM_SIGMA

    def blur(z):
        return ndimage.gaussian_filter(z, SSIM_SIGMA, truncate=truncate, mode="reflect")

    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x * mu_x
    syy = blur(y * y) - mu_y * mu_y
    sxy = blur(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    smap = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2))
    pad = (SSIM_WIN - 1) // 2
    return float(smap[pad:-pad, pad:-pad].mean())


@dataclass
class DegradationCurve:
    steps: list = field(default_factory=list)

    def __post_init__(self):
        idx = [s[0] for s in self.steps]
        if idx and (idx[0] != 1 or any(b <= a for a, b in zip(idx, idx[1:]))):
            raise ValueError("step indices must increase strictly from 1")

    @property
    def psnr(self):
        return [s[1] for s in self.steps]

    @property
    def ssim(self):
        return [s[2] for s in self.steps]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "psnr_db", "ssim"])
        for step, p, s in self.steps:
            writer.writerow([step, format_db(p), f"{s:.6f}"])
        return buf.getvalue()


def roundtrip_degradation(image, codec, n_steps):
    """Repeatedly round-trip ``image`` through ``codec`` and score each step against the original."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    original = np.asarray(image, dtype=np.uint8)
    current = original
    steps = []
    for i in range(1, n_steps + 1):
        current = codec.roundtrip(current)
        steps.append((i, psnr(original, current), ssim(original, current)))
    return DegradationCurve(steps)


def plot_curve(curve, path):
    """Save a two-panel PSNR/SSIM plot; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = [s[0] for s in curve.steps]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
    ax1.plot(x, curve.psnr, marker="o")
    ax1.set_xlabel("round trips")
    ax1.set_ylabel("PSNR [dB]")
    ax2.plot(x, curve.ssim, marker="o", color="tab:orange")
    ax2.set_xlabel("round trips")
    ax2.set_ylabel("SSIM")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
