"""PSNR and SSIM for reconstructed clips."""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 100.0


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_plane(a: np.ndarray, b: np.ndarray, win: np.ndarray, c1: float, c2: float) -> float:
    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Gaussian-windowed SSIM of two frames, ``(H, W)`` or ``(C, H, W)``; channels are averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"frame {a.shape[-2:]} smaller than the {window}x{window} window")
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return float(np.mean([_ssim_plane(x, y, win, c1, c2) for x, y in zip(a, b)]))


def to_unit_range(video) -> np.ndarray:
    """Map [-1, 1] samples to [0, 1]."""
    return (np.asarray(video, dtype=np.float64) + 1.0) / 2.0


@dataclass
class MetricReport:
    psnr_per_frame: list[float]
    ssim_per_frame: list[float]
    utilization: float | None = None
    config: dict = field(default_factory=dict)

    @property
    def psnr(self) -> float:
        return float(np.mean(self.psnr_per_frame))

    @property
    def ssim(self) -> float:
        return float(np.mean(self.ssim_per_frame))

    def to_table(self) -> str:
        lines = [f"{'frame':>5}  {'PSNR (dB)':>10}  {'SSIM':>7}"]
        for i, (p, s) in enumerate(zip(self.psnr_per_frame, self.ssim_per_frame)):
            lines.append(f"{i:>5}  {p:>10.3f}  {s:>7.4f}")
        lines.append(f"{'mean':>5}  {self.psnr:>10.3f}  {self.ssim:>7.4f}")
        if self.utilization is not None:
            lines.append(f"codebook utilization: {100 * self.utilization:.1f}%")
        for k, v in self.config.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines)

    def to_rows(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame", "psnr", "ssim"])
        for i, (p, s) in enumerate(zip(self.psnr_per_frame, self.ssim_per_frame)):
            writer.writerow([i, repr(p), repr(s)])
        writer.writerow(["mean", repr(self.psnr), repr(self.ssim)])
        return buf.getvalue()


def video_report(reference, reconstruction, utilization: float | None = None, config: dict | None = None) -> MetricReport:
    """Per-frame metrics of two ``(T, 3, H, W)`` clips given in [-1, 1]."""
    ref, rec = to_unit_range(reference), to_unit_range(reconstruction)
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    window = min(11, ref.shape[-1], ref.shape[-2])
    p = [psnr(x, y) for x, y in zip(ref, rec)]
    s = [ssim(x, y, window=window) for x, y in zip(ref, rec)]
    return MetricReport(p, s, utilization, dict(config or {}))
