"""Evaluation protocol: channel-wise rescaling against ground truth, then PSNR/SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class EvalResult:
    psnr: float
    ssim: float
    scales: tuple[float, float, float]
    capped: bool = False


def channel_rescale(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares optimal per-channel scale of pred onto gt.

    s_c = <pred_c, gt_c> / <pred_c, pred_c>; an all-zero prediction channel
    keeps s_c = 1. Absorbs the scale ambiguity of OLAT layers before metrics.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    flat_p = pred.reshape(-1, pred.shape[-1])
    flat_g = gt.reshape(-1, gt.shape[-1])
    denom = (flat_p * flat_p).sum(axis=0)
    numer = (flat_p * flat_g).sum(axis=0)
    scales = np.where(denom > 0.0, numer / np.maximum(denom, 1e-300), 1.0)
    return pred * scales, scales


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> tuple[float, bool]:
    """10*log10(peak^2 / MSE); identical images cap at 99 dB with a flag."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB, True
    value = 10.0 * np.log10(peak * peak / mse)
    if value >= PSNR_CAP_DB:
        return PSNR_CAP_DB, True
    return float(value), False


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _local_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable 2D filter, zero padding (matches the loss-side convolution)
    out = ndimage.correlate1d(img, window, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, window, axis=1, mode="constant", cval=0.0)


def luminance(img: np.ndarray) -> np.ndarray:
    """Channel mean; the shared luminance proxy for SSIM here."""
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
         window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM on luminance, 11x11 Gaussian window, zero padding.

    C1 = (0.01*peak)^2, C2 = (0.03*peak)^2. Rejects images smaller than the
    window.
    """
    la = luminance(a)
    lb = luminance(b)
    if la.shape != lb.shape:
        raise ValueError(f"shape mismatch: {la.shape} vs {lb.shape}")
    if min(la.shape) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} SSIM window")
    return float(ssim_map(la, lb, peak, window_size, sigma).mean())


def ssim_map(la: np.ndarray, lb: np.ndarray, peak: float = 1.0,
             window_size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Per-pixel SSIM on single-channel inputs (no size guard)."""
    win = _gaussian_window(window_size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _local_mean(la, win)
    mu_b = _local_mean(lb, win)
    var_a = _local_mean(la * la, win) - mu_a ** 2
    var_b = _local_mean(lb * lb, win) - mu_b ** 2
    cov = _local_mean(la * lb, win) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    )


def evaluate(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> EvalResult:
    """The full protocol: rescale channels, then PSNR and SSIM."""
    rescaled, scales = channel_rescale(pred, gt)
    value, capped = psnr(rescaled, gt, peak=peak)
    s = ssim(rescaled, gt, peak=peak)
    return EvalResult(value, s, tuple(float(v) for v in scales), capped)
