"""Deterministic synthetic image pairs for metric oracle tests.

Everything here is hand-rolled numpy so the pairs are bit-stable across
library versions; the frozen reference values in tests/data depend on it.
"""

import numpy as np

PAIR_COUNT = 20
PAIR_SHAPE = (192, 256)  # divisible by 16 so no pooling padding at 5 scales


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


def _box_blur(img: np.ndarray, passes: int = 1) -> np.ndarray:
    out = img.copy()
    for _ in range(passes):
        p = np.pad(out, 1, mode="edge")
        out = (
            p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
            + p[1:-1, :-2] + p[1:-1, 1:-1] + p[1:-1, 2:]
            + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
        ) / 9.0
    return out


def synthetic_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Piecewise-smooth 3-channel image in [0,1], shape (3, h, w)."""
    channels = []
    base = _bilinear_upsample(rng.random((rng.integers(3, 8), rng.integers(3, 8))), h, w)
    for _ in range(3):
        field = _bilinear_upsample(
            rng.random((rng.integers(4, 12), rng.integers(4, 12))), h, w
        )
        yy, xx = np.mgrid[0:h, 0:w]
        grating = 0.5 + 0.5 * np.sin(
            2 * np.pi * (xx * rng.uniform(0.005, 0.05) + yy * rng.uniform(0.0, 0.03))
            + rng.uniform(0, 2 * np.pi)
        )
        img = 0.5 * base + 0.35 * field + 0.15 * grating
        for _ in range(rng.integers(1, 4)):
            y0, x0 = rng.integers(0, h - 16), rng.integers(0, w - 16)
            hh, ww = rng.integers(8, h // 2), rng.integers(8, w // 2)
            img[y0 : y0 + hh, x0 : x0 + ww] += rng.uniform(-0.25, 0.25)
        channels.append(img)
    img = np.stack(channels)
    img += rng.normal(0.0, 0.01, img.shape)
    return np.clip(img, 0.0, 1.0)


def _distort(rng: np.random.Generator, img: np.ndarray, kind: int) -> np.ndarray:
    out = img.copy()
    if kind == 0:
        out += rng.normal(0.0, rng.uniform(0.01, 0.08), img.shape)
    elif kind == 1:
        out = np.stack([_box_blur(c, passes=int(rng.integers(1, 4))) for c in out])
    elif kind == 2:
        levels = int(rng.integers(8, 33))
        out = np.round(out * (levels - 1)) / (levels - 1)
    elif kind == 3:
        out = 0.5 + (out - 0.5) * rng.uniform(0.6, 0.95)
        out += rng.normal(0.0, 0.02, img.shape)
    else:
        out = np.stack([_box_blur(c, passes=1) for c in out])
        out += rng.normal(0.0, rng.uniform(0.02, 0.05), img.shape)
        levels = int(rng.integers(16, 64))
        out = np.round(out * (levels - 1)) / (levels - 1)
    return np.clip(out, 0.0, 1.0)


def oracle_pairs(count: int = PAIR_COUNT):
    """Yield (index, original, distorted) with images shaped (3, H, W)."""
    h, w = PAIR_SHAPE
    for i in range(count):
        rng = np.random.default_rng(1000 + i)
        x = synthetic_image(rng, h, w)
        y = _distort(rng, x, kind=i % 5)
        yield i, x, y
