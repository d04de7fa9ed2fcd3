"""Multiscale structural similarity, color conversion, and bpp accounting.

Two MS-SSIM paths share one config: a float64 numpy evaluator for scoring,
and an autodiff variant used as the training loss. Contrast/structure terms
enter at every scale, luminance only at the coarsest; scales are linked by
2x2 mean pooling. Gaussian windows apply in valid mode (no padding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import autodiff as ad
from .autodiff import Tensor

# Canonical five-scale exponent weights of the reference construction.
CANONICAL_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

RGB_WEIGHTS = (1.0, 1.0, 1.0)
YCBCR_WEIGHTS = (6.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0)

_CS_FLOOR = 1e-12


@dataclass
class MsSsimConfig:
    scales: int = 5
    weights: tuple = CANONICAL_WEIGHTS
    win_size: int = 11
    sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2
    color_weights: tuple = RGB_WEIGHTS

    def __post_init__(self):
        if len(self.weights) != self.scales:
            raise ValueError("need one exponent weight per scale")
        if any(w < 0 for w in self.color_weights) or sum(self.color_weights) <= 0:
            raise ValueError("color weights must be non-negative and sum positive")

    @property
    def normalized_weights(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()

    @property
    def min_dim(self) -> int:
        return self.win_size * 2 ** (self.scales - 1)

    @classmethod
    def eval_default(cls, color_weights=RGB_WEIGHTS) -> "MsSsimConfig":
        return cls(color_weights=color_weights)

    @classmethod
    def train_default(cls, scales: int = 3) -> "MsSsimConfig":
        return cls(scales=scales, weights=CANONICAL_WEIGHTS[:scales])


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _check_pair(x: np.ndarray, y: np.ndarray, config: MsSsimConfig) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < config.min_dim:
        raise ValueError(
            f"min dimension {min(x.shape[-2:])} below required "
            f"{config.min_dim} for {config.scales} scales"
        )


def _blur_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode Gaussian correlation of a 2-D array."""
    m = kernel.size // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[m:-m, m:-m]


def _ssim_maps(a: np.ndarray, b: np.ndarray, kernel: np.ndarray, c1: float, c2: float):
    mu1 = _blur_valid(a, kernel)
    mu2 = _blur_valid(b, kernel)
    s11 = _blur_valid(a * a, kernel) - mu1 * mu1
    s22 = _blur_valid(b * b, kernel) - mu2 * mu2
    s12 = _blur_valid(a * b, kernel) - mu1 * mu2
    cs = (2.0 * s12 + c2) / (s11 + s22 + c2)
    lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    return lum, cs


def _downsample2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    a = a[: h - h % 2, : w - w % 2]
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def ms_ssim(x: np.ndarray, x_hat: np.ndarray, config: MsSsimConfig | None = None) -> float:
    """MS-SSIM of two (C,H,W) images with values in [0,1]."""
    if config is None:
        config = MsSsimConfig.eval_default()
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        x_hat = x_hat[None]
    _check_pair(x, x_hat, config)

    kernel = gaussian_window(config.win_size, config.sigma)
    weights = config.normalized_weights
    cw = np.asarray(config.color_weights, dtype=np.float64)
    if cw.size != x.shape[0]:
        raise ValueError(f"{cw.size} color weights for {x.shape[0]} channels")

    per_channel = np.empty(x.shape[0], dtype=np.float64)
    for c in range(x.shape[0]):
        a, b = x[c], x_hat[c]
        value = 1.0
        for s in range(config.scales):
            lum, cs = _ssim_maps(a, b, kernel, config.c1, config.c2)
            if s < config.scales - 1:
                value *= np.maximum(cs.mean(), _CS_FLOOR) ** weights[s]
                a, b = _downsample2(a), _downsample2(b)
            else:
                value *= np.maximum((lum * cs).mean(), _CS_FLOOR) ** weights[s]
        per_channel[c] = value
    return float(np.dot(cw, per_channel) / cw.sum())


def ms_ssim_diff(x: Tensor, x_hat: Tensor, config: MsSsimConfig | None = None) -> Tensor:
    """Differentiable MS-SSIM; accepts (C,H,W) or (N,C,H,W), returns a scalar."""
    if config is None:
        config = MsSsimConfig.train_default()
    _check_pair(x.data, x_hat.data, config)
    if x.ndim == 3:
        x = ad.reshape(x, (1,) + x.shape)
        x_hat = ad.reshape(x_hat, (1,) + x_hat.shape)

    k1 = gaussian_window(config.win_size, config.sigma)
    col = k1.reshape(-1, 1)
    row = k1.reshape(1, -1)
    weights = config.normalized_weights
    cw = np.asarray(config.color_weights, dtype=np.float64)
    if cw.size != x.shape[1]:
        raise ValueError(f"{cw.size} color weights for {x.shape[1]} channels")

    def blur(t: Tensor) -> Tensor:
        return ad.correlate2d_fixed(ad.correlate2d_fixed(t, col), row)

    a, b = x, x_hat
    factors: list[Tensor] = []
    for s in range(config.scales):
        mu1 = blur(a)
        mu2 = blur(b)
        s11 = blur(a * a) - mu1 * mu1
        s22 = blur(b * b) - mu2 * mu2
        s12 = blur(a * b) - mu1 * mu2
        cs = (2.0 * s12 + config.c2) / (s11 + s22 + config.c2)
        if s < config.scales - 1:
            cs_mean = ad.tmean(cs, axis=(2, 3))  # (N, C)
            factors.append(ad.pow_const(ad.clamp_min(cs_mean, _CS_FLOOR), weights[s]))
            if a.shape[2] % 2 or a.shape[3] % 2:
                raise ValueError(
                    "odd intermediate scale; pad input to a multiple of 2**(scales-1)"
                )
            a, b = ad.avg_pool2x2(a), ad.avg_pool2x2(b)
        else:
            lum = (2.0 * mu1 * mu2 + config.c1) / (mu1 * mu1 + mu2 * mu2 + config.c1)
            ssim_mean = ad.tmean(lum * cs, axis=(2, 3))
            factors.append(ad.pow_const(ad.clamp_min(ssim_mean, _CS_FLOOR), weights[s]))

    combined = factors[0]
    for f in factors[1:]:
        combined = combined * f  # (N, C)
    cw_norm = cw / cw.sum()
    weighted = ad.tsum(combined * Tensor(cw_norm.reshape(1, -1)), axis=1)
    return ad.tmean(weighted)


def rgb_to_ycbcr(image: np.ndarray) -> np.ndarray:
    """Full-range BT.601: RGB in [0,1] to (Y, Cb, Cr) with chroma centered at 0.5."""
    r, g, b = np.asarray(image, dtype=np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 0.5 + (b - y) / 1.772
    cr = 0.5 + (r - y) / 1.402
    return np.stack([y, cb, cr])


def ycbcr_to_rgb(image: np.ndarray) -> np.ndarray:
    y, cb, cr = np.asarray(image, dtype=np.float64)
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b])


def bpp(total_bits: float, width: int, height: int) -> float:
    """Bits per pixel of a compressed representation."""
    if width <= 0 or height <= 0:
        raise ValueError("image dims must be positive")
    return total_bits / float(width * height)
