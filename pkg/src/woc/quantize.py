"""Uniform feature quantization and lossless offset-binary bitplane expansion.

Features are clamped to (-1, 1] and snapped to ceil(s*y)/s with s = 2**(B-1),
giving exactly 2**B admissible levels in [-s+1, s]. Levels map to unsigned
codes u = k + s - 1 whose B-bit big-endian expansion fills the bitplanes,
most significant plane first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_BITS = 6


class LevelRangeError(ValueError):
    """Raised when quantized levels fall outside the admissible range."""


@dataclass
class QuantizedTensor:
    """Quantized feature tensor: integer levels plus bit depth.

    `real` is the dequantized value view k / 2**(B-1); when the quantizer ran
    on a tracked Tensor it carries the straight-through gradient path.
    """

    levels: np.ndarray
    bits: int
    real: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.levels.shape

    def values(self) -> np.ndarray:
        return self.real.data

    def validate(self) -> None:
        s = 1 << (self.bits - 1)
        if self.levels.min(initial=0) < -s + 1 or self.levels.max(initial=0) > s:
            raise LevelRangeError(
                f"levels outside [{-s + 1}, {s}] for B={self.bits}"
            )


@dataclass
class BitplaneTensor:
    """Binary expansion of a quantized tensor, shape (B, C, H, W).

    Plane 0 holds the most significant bit of every element's offset code.
    """

    planes: np.ndarray
    bits: int

    def __post_init__(self):
        if self.planes.shape[0] != self.bits:
            raise ValueError(
                f"plane count {self.planes.shape[0]} != bits {self.bits}"
            )

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.planes.shape  # (B, C, H, W)

    @property
    def bit_count(self) -> int:
        return int(np.prod(self.planes.shape))


def quantize(y, bits: int = DEFAULT_BITS) -> QuantizedTensor:
    """Quantize into 2**B equal bins over (-1, 1].

    The value view is k / 2**(B-1) with k = ceil(2**(B-1) * y), levels
    clamped to the admissible range. When `y` is a tracked Tensor, the
    backward pass treats quantization as identity inside the clamp range and
    zero outside (straight-through).
    """
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must lie in [1, 8], got {bits}")
    tensor_in = isinstance(y, Tensor)
    data = y.data if tensor_in else np.asarray(y)
    s = 1 << (bits - 1)
    levels = np.ceil(np.asarray(data, dtype=np.float64) * s).astype(np.int64)
    np.clip(levels, -s + 1, s, out=levels)
    levels = levels.astype(np.int32)
    values = (levels.astype(np.float64) / s).astype(ad.DTYPE)

    tracked = tensor_in and y.requires_grad and ad._ACTIVE_TAPE is not None
    real = Tensor._wrap(values, tracked)
    if tracked:
        inside = (data > -1.0) & (data <= 1.0)

        def backward():
            g = real.grad
            if g is None:
                return
            y.accumulate_grad(g * inside)

        ad._record(real, backward)
    return QuantizedTensor(levels=levels, bits=bits, real=real)


def bitplane_decompose(q: QuantizedTensor) -> BitplaneTensor:
    """Expand levels into B bitplanes via the offset code u = k + 2**(B-1) - 1."""
    q.validate()
    b = q.bits
    s = 1 << (b - 1)
    u = (q.levels.astype(np.int64) + s - 1).astype(np.uint32)
    planes = np.empty((b,) + q.levels.shape, dtype=np.uint8)
    for p in range(b):
        planes[p] = (u >> (b - 1 - p)) & 1
    return BitplaneTensor(planes=planes, bits=b)


def bitplane_compose(b: BitplaneTensor) -> QuantizedTensor:
    """Exact inverse of bitplane_decompose."""
    planes = b.planes
    if planes.min(initial=0) < 0 or planes.max(initial=0) > 1:
        raise ValueError("bitplane entries must be 0 or 1")
    bits = b.bits
    s = 1 << (bits - 1)
    u = np.zeros(planes.shape[1:], dtype=np.int64)
    for p in range(bits):
        u = (u << 1) | planes[p].astype(np.int64)
    levels = (u - s + 1).astype(np.int32)
    values = (levels.astype(np.float64) / s).astype(ad.DTYPE)
    return QuantizedTensor(levels=levels, bits=bits, real=Tensor._wrap(values, False))
