"""HDR / LDR raster types, tone mapping, exposure arithmetic and bracket fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HdrImage",
    "LdrImage",
    "ExposureBracket",
    "ToneCurve",
    "apply_exposure",
    "tonemap_curve",
    "tonemap_agx",
    "simulate_bracket",
    "merge_brackets",
]

# Pixels at or above this display value carry zero weight during fusion.
SATURATION_LEVEL = 0.999


def _as_rgb_array(data, width: int, height: int) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.size != width * height * 3:
        raise ValueError(
            f"data has {arr.size} values, expected {width}x{height}x3 = {width * height * 3}"
        )
    return np.ascontiguousarray(arr.reshape(height, width, 3))


@dataclass(frozen=True)
class HdrImage:
    """Linear-radiance RGB raster. Values are unitless relative radiance, >= 0."""

    width: int
    height: int
    data: np.ndarray  # (height, width, 3) float32, row-major

    def __post_init__(self):
        object.__setattr__(self, "data", _as_rgb_array(self.data, self.width, self.height))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("HDR image contains non-finite values")
        if np.any(self.data < 0):
            raise ValueError("HDR image contains negative radiance")

    @classmethod
    def full(cls, width: int, height: int, value) -> "HdrImage":
        data = np.broadcast_to(np.asarray(value, dtype=np.float32), (height, width, 3))
        return cls(width, height, np.array(data))

    @classmethod
    def zeros(cls, width: int, height: int) -> "HdrImage":
        return cls(width, height, np.zeros((height, width, 3), dtype=np.float32))

    def same_shape(self, other) -> bool:
        return self.width == other.width and self.height == other.height


@dataclass(frozen=True)
class LdrImage:
    """Display-referred RGB raster with values in [0, 1]."""

    width: int
    height: int
    data: np.ndarray  # (height, width, 3) float32

    def __post_init__(self):
        object.__setattr__(self, "data", _as_rgb_array(self.data, self.width, self.height))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("LDR image contains non-finite values")
        if np.any(self.data < 0) or np.any(self.data > 1):
            raise ValueError("LDR image values must lie in [0, 1]")

    def same_shape(self, other) -> bool:
        return self.width == other.width and self.height == other.height


@dataclass(frozen=True)
class ExposureBracket:
    """One tonemapped exposure of an HDR frame, tagged with its EV offset."""

    image: LdrImage
    ev: float

    def __post_init__(self):
        if not math.isfinite(self.ev):
            raise ValueError("bracket ev must be finite")


@dataclass(frozen=True)
class ToneCurve:
    """Invertible display curve T(x) = (x + beta)^(1/gamma), clamped to [0, 1]."""

    gamma: float = 2.2
    beta: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be a positive finite real")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be a nonnegative finite real")


def apply_exposure(img: HdrImage, ev: float) -> HdrImage:
    """Scale radiance by 2**ev (EV-2 quarters the image, EV0 is the identity)."""
    if not math.isfinite(ev):
        raise ValueError("ev must be finite")
    if ev == 0.0:
        return img
    return HdrImage(img.width, img.height, img.data * np.float32(2.0 ** ev))


def tonemap_curve(img: HdrImage, curve: ToneCurve) -> LdrImage:
    """Apply the parametric display curve per channel, clamping into [0, 1]."""
    x = img.data.astype(np.float64)
    x += curve.beta
    np.power(x, 1.0 / curve.gamma, out=x)
    np.clip(x, 0.0, 1.0, out=x)
    return LdrImage(img.width, img.height, x.astype(np.float32))


def invert_curve(ldr: np.ndarray, curve: ToneCurve) -> np.ndarray:
    """Inverse of tonemap_curve on non-clamped values: x = L^gamma - beta."""
    x = np.power(ldr.astype(np.float64), curve.gamma) - curve.beta
    return np.maximum(x, 0.0)


# AgX display transform, minimal published approximation: an inset matrix into
# the AgX working gamut, log2 encoding over [min_ev, max_ev], a 6th-order
# sigmoid fit (which includes the display encode), and the outset matrix.
_AGX_INSET = np.array(
    [
        [0.842479062253094, 0.0784335999999992, 0.0792237451477643],
        [0.0423282422610123, 0.878468636469772, 0.0791661274605434],
        [0.0423756549057051, 0.0784336, 0.879142973793104],
    ],
    dtype=np.float64,
)
_AGX_OUTSET = np.array(
    [
        [1.19687900512017, -0.0980208811401368, -0.0990297440797205],
        [-0.0528968517574562, 1.15190312990417, -0.0989611768448433],
        [-0.0529716355144438, -0.0980434501171241, 1.15107367264116],
    ],
    dtype=np.float64,
)
_AGX_MIN_EV = -12.47393
_AGX_MAX_EV = 4.026069


def _agx_sigmoid(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    x4 = x2 * x2
    return (
        15.5 * x4 * x2
        - 40.14 * x4 * x
        + 31.96 * x4
        - 6.868 * x2 * x
        + 0.4298 * x2
        + 0.1191 * x
        - 0.00232
    )


def tonemap_agx(img: HdrImage) -> LdrImage:
    """AgX display transform (deterministic; black maps to black)."""
    rgb = img.data.astype(np.float64)
    v = rgb @ _AGX_INSET.T
    v = np.clip(np.log2(np.maximum(v, 1e-10)), _AGX_MIN_EV, _AGX_MAX_EV)
    v = (v - _AGX_MIN_EV) / (_AGX_MAX_EV - _AGX_MIN_EV)
    v = _agx_sigmoid(v)
    v = v @ _AGX_OUTSET.T
    return LdrImage(img.width, img.height, np.clip(v, 0.0, 1.0).astype(np.float32))


def simulate_bracket(img: HdrImage, ev: float, curve: ToneCurve) -> ExposureBracket:
    """Forward model of one exposure bracket: expose, tonemap, tag with ev."""
    return ExposureBracket(tonemap_curve(apply_exposure(img, ev), curve), ev)


def merge_brackets(brackets: list[ExposureBracket], curve: ToneCurve) -> HdrImage:
    """Fuse exposure brackets back into linear radiance.

    The generator's response curve is known, so each bracket is inverted
    exactly (x = L^gamma - beta, divided by 2^ev) and the per-pixel estimates
    are combined with the hat weight w(L) = 1 - |2L - 1|. Saturated pixels
    (L >= 0.999) get zero weight; pixels with no usable bracket fall back to
    the lowest-ev (darkest) estimate.
    """
    if not brackets:
        raise ValueError("need at least one bracket")
    w0, h0 = brackets[0].image.width, brackets[0].image.height
    for b in brackets:
        if b.image.width != w0 or b.image.height != h0:
            raise ValueError("brackets must share dimensions")

    estimates = np.empty((len(brackets), h0, w0, 3), dtype=np.float64)
    weights = np.empty_like(estimates)
    for k, b in enumerate(brackets):
        ldr = b.image.data.astype(np.float64)
        estimates[k] = invert_curve(ldr, curve) / (2.0 ** b.ev)
        w = 1.0 - np.abs(2.0 * ldr - 1.0)
        w[ldr >= SATURATION_LEVEL] = 0.0
        weights[k] = w

    wsum = weights.sum(axis=0)
    merged = (weights * estimates).sum(axis=0) / np.maximum(wsum, 1e-30)
    lowest = int(np.argmin([b.ev for b in brackets]))
    merged = np.where(wsum > 0.0, merged, estimates[lowest])
    return HdrImage(w0, h0, merged.astype(np.float32))
