"""Adaptive codelength regularization and its feedback coefficient.

The penalty charges each quantized feature element for its magnitude and for
deviations from its four causal spatial neighbors, shaping exactly the
structure the adaptive arithmetic coder exploits. A multiplicative feedback
rule steers the coefficient so the measured mean codelength tracks a target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Neighbor offsets (x, y); the partner of element (h, w) is (h - y, w - x).
S_OFFSETS = ((0, 1), (1, 0), (1, 1), (-1, 1))

# Valid-correlation kernels computing value - neighbor for each offset,
# covering exactly the in-bounds pairs (boundary terms are skipped).
_DIFF_KERNELS = {
    (0, 1): np.array([[-1.0], [1.0]]),          # above:      y[h,w] - y[h-1,w]
    (1, 0): np.array([[-1.0, 1.0]]),            # left:       y[h,w] - y[h,w-1]
    (1, 1): np.array([[-1.0, 0.0], [0.0, 1.0]]),  # above-left
    (-1, 1): np.array([[0.0, -1.0], [1.0, 0.0]]),  # above-right
}


@dataclass
class AcrConfig:
    target_bits: float
    update_rate: float = 0.01   # multiplicative step size for alpha
    momentum: float = 0.9       # running mean of measured codelength
    eps_log: float = 2.0**-6    # tied to the quantizer step 2**-B

    def __post_init__(self):
        if self.target_bits <= 0:
            raise ValueError("target_bits must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.update_rate <= 0:
            raise ValueError("update_rate must be positive")
        if self.eps_log <= 0:
            raise ValueError("eps_log must be positive")

    @classmethod
    def for_feature_dims(
        cls, bits: int, channels: int, height: int, width: int,
        ratio: float = 4.0, **kwargs,
    ) -> "AcrConfig":
        target = target_from_ratio(bits, channels, height, width, ratio)
        kwargs.setdefault("eps_log", 2.0**-bits)
        return cls(target_bits=target, **kwargs)

    def total_to_target_ratio(self, bits: int, channels: int, height: int, width: int) -> float:
        return bits * channels * height * width / self.target_bits


@dataclass
class AcrState:
    alpha: float = 1.0          # paper initialization
    mean_bits: float | None = None
    iteration: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must stay positive")


def target_from_ratio(bits: int, channels: int, height: int, width: int, ratio: float) -> float:
    """Target codelength so that raw capacity B*C*H*W over target equals `ratio`."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    return bits * channels * height * width / ratio


def acr_penalty(y_hat: Tensor, alpha: float, config: AcrConfig) -> Tensor:
    """Mean magnitude/neighbor-difference log penalty, scaled by alpha.

    Accepts (C,H,W) or (N,C,H,W); the sum is averaged over all elements so the
    batched value is the mean of per-image penalties.
    """
    eps = config.eps_log
    n_elem = 1
    for d in y_hat.shape:
        n_elem *= d
    h, w = y_hat.shape[-2], y_hat.shape[-1]

    total = ad.tsum(ad.tlog2(ad.tabs(y_hat) + eps))
    for offset in S_OFFSETS:
        kernel = _DIFF_KERNELS[offset]
        kh, kw = kernel.shape
        if h < kh or w < kw:
            continue  # no in-bounds neighbor pairs for this offset
        diff = ad.correlate2d_fixed(y_hat, kernel)
        total = total + ad.tsum(ad.tlog2(ad.tabs(diff) + eps))
    return total * (alpha / n_elem)


def update_alpha(state: AcrState, measured_bits: float, config: AcrConfig) -> AcrState:
    """Fold one codelength measurement into the running mean and restep alpha.

    alpha moves multiplicatively: up when the mean exceeds the target, down
    when it falls short, unchanged at the fixed point.
    """
    if measured_bits <= 0:
        raise ValueError("measured_bits must be positive")
    if state.mean_bits is None:
        mean = float(measured_bits)  # seed the running mean on first contact
    else:
        mean = config.momentum * state.mean_bits + (1.0 - config.momentum) * measured_bits
    alpha = state.alpha * math.exp(config.update_rate * (mean / config.target_bits - 1.0))
    return AcrState(alpha=alpha, mean_bits=mean, iteration=state.iteration + 1)
