"""Synthetic image generation and patch sources for desk-scale training."""

from __future__ import annotations

import numpy as np


def _bilinear_upsample(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = np.linspace(0.0, a.shape[0] - 1.0, h)
    xs = np.linspace(0.0, a.shape[1] - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, a.shape[0] - 1)
    x1 = np.minimum(x0 + 1, a.shape[1] - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def synthetic_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Piecewise-smooth 3-channel image in [0,1]: fields, gratings, blocks."""
    base = _bilinear_upsample(
        rng.random((int(rng.integers(3, 8)), int(rng.integers(3, 8)))), height, width
    )
    yy, xx = np.mgrid[0:height, 0:width]
    channels = []
    for _ in range(3):
        field = _bilinear_upsample(
            rng.random((int(rng.integers(4, 12)), int(rng.integers(4, 12)))),
            height,
            width,
        )
        grating = 0.5 + 0.5 * np.sin(
            2 * np.pi * (xx * rng.uniform(0.005, 0.05) + yy * rng.uniform(0.0, 0.03))
            + rng.uniform(0, 2 * np.pi)
        )
        img = 0.5 * base + 0.35 * field + 0.15 * grating
        for _ in range(int(rng.integers(1, 4))):
            y0 = int(rng.integers(0, max(1, height - 8)))
            x0 = int(rng.integers(0, max(1, width - 8)))
            hh = int(rng.integers(4, max(5, height // 2)))
            ww = int(rng.integers(4, max(5, width // 2)))
            img[y0 : y0 + hh, x0 : x0 + ww] += rng.uniform(-0.25, 0.25)
        channels.append(img)
    img = np.stack(channels) + rng.normal(0.0, 0.01, (3, height, width))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


class SyntheticPatchSource:
    """Pool of generated images sampled as random (3, P, P) training patches."""

    def __init__(self, pool_size: int = 32, image_size: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.images = [
            synthetic_image(rng, image_size, image_size) for _ in range(pool_size)
        ]
        self.image_size = image_size

    def sample(self, rng: np.random.Generator, count: int, patch: int) -> np.ndarray:
        if patch > self.image_size:
            raise ValueError(f"patch {patch} exceeds pool image size {self.image_size}")
        out = np.empty((count, 3, patch, patch), dtype=np.float32)
        span = self.image_size - patch
        for i in range(count):
            img = self.images[int(rng.integers(0, len(self.images)))]
            y0 = int(rng.integers(0, span + 1))
            x0 = int(rng.integers(0, span + 1))
            out[i] = img[:, y0 : y0 + patch, x0 : x0 + patch]
        return out


class ArrayPatchSource:
    """Patch source over a fixed stack of (3, H, W) arrays (e.g. loaded files)."""

    def __init__(self, images: list[np.ndarray]):
        if not images:
            raise ValueError("need at least one image")
        self.images = [np.asarray(im, dtype=np.float32) for im in images]

    def sample(self, rng: np.random.Generator, count: int, patch: int) -> np.ndarray:
        out = np.empty((count, 3, patch, patch), dtype=np.float32)
        for i in range(count):
            img = self.images[int(rng.integers(0, len(self.images)))]
            h, w = img.shape[-2:]
            if h < patch or w < patch:
                raise ValueError(f"image {img.shape} smaller than patch {patch}")
            y0 = int(rng.integers(0, h - patch + 1))
            x0 = int(rng.integers(0, w - patch + 1))
            out[i] = img[:, y0 : y0 + patch, x0 : x0 + patch]
        return out
