"""Pyramidal feature extraction, interscale alignment, and mirrored synthesis.

The encoder analyzes the input recursively: each scale extracts coefficient
maps with a stack of 3x3 convolutions (leaky ReLU 0.2) and hands a 4x4
stride-2 downsampled copy to the next scale. Aligners resample every scale's
coefficients to one target shape with chains of 4x4 stride-2 convolutions,
the results are summed, and a joint stack of 3x3 convolutions produces the
feature tensor. The decoder mirrors each stage with transposed convolutions
and independent parameters.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor


@dataclass
class PyramidConfig:
    num_scales: int = 3
    coeff_channels: tuple = (16, 16, 16)  # C_m per scale
    hidden_channels: int = 16             # width inside per-scale extractors
    out_channels: int = 8                 # feature tensor channels C
    reduction: int = 8                    # spatial factor of y vs input
    aligner_channels: int = 16            # width inside aligner chains
    extract_layers: int = 2               # 3x3 convs per scale extractor
    joint_layers: int = 2                 # 3x3 convs in the joint transform
    in_channels: int = 3
    leak: float = 0.2

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("need at least one scale")
        if len(self.coeff_channels) != self.num_scales:
            raise ValueError("coeff_channels must list one width per scale")
        if any(c < 1 for c in self.coeff_channels):
            raise ValueError("channel counts must be positive")
        r = self.reduction
        if r < 1 or (r & (r - 1)):
            raise ValueError("reduction must be a power of two")
        if r < 2 ** (self.num_scales - 1):
            raise ValueError(
                "reduction smaller than the downsampling chain 2**(M-1)"
            )

    @property
    def chain_factor(self) -> int:
        """Total reduction of the scale-input chain, 2**(M-1)."""
        return 2 ** (self.num_scales - 1)

    def aligner_steps(self, scale: int) -> int:
        """Stride-2 stages mapping scale `scale` (0-based) to the target grid."""
        return self.reduction.bit_length() - 1 - scale


def desk_config() -> PyramidConfig:
    return PyramidConfig()


@dataclass
class CodecModel:
    """Encoder + decoder parameters with their structural config."""

    config: PyramidConfig
    bits: int
    params: ParameterSet = field(repr=False)

    def model_id(self) -> bytes:
        h = hashlib.sha256()
        h.update(_config_bytes(self.config))
        h.update(struct.pack("<B", self.bits))
        for name, t in self.params.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return h.digest()[:8]


def _kernel(rng, c_out, c_in, k, leak, gain=1.0):
    fan_in = c_in * k * k
    std = gain * np.sqrt(2.0 / ((1.0 + leak * leak) * fan_in))
    return rng.normal(0.0, std, (c_out, c_in, k, k)).astype(np.float32)


def _add_conv(params, rng, name, c_out, c_in, k, leak, gain=1.0, transposed=False):
    # transposed kernels keep conv layout (C_fwd_out, C_fwd_in, k, k): the
    # first axis is the input-channel axis of the transposed map.
    shape_out, shape_in = (c_in, c_out) if transposed else (c_out, c_in)
    params.add(f"{name}/w", _kernel(rng, shape_out, shape_in, k, leak, gain))
    params.add(f"{name}/b", np.zeros((c_out, 1, 1), dtype=np.float32))


def build_codec_model(
    config: PyramidConfig | None = None, bits: int = 6, seed: int = 0
) -> CodecModel:
    if config is None:
        config = desk_config()
    rng = np.random.default_rng(seed)
    p = ParameterSet()
    cfg = config
    cin = cfg.in_channels

    for m in range(cfg.num_scales):
        cm = cfg.coeff_channels[m]
        widths = [cin] + [cfg.hidden_channels] * (cfg.extract_layers - 1) + [cm]
        for i in range(cfg.extract_layers):
            _add_conv(p, rng, f"enc/f{m}/c{i}", widths[i + 1], widths[i], 3, cfg.leak)
        if m < cfg.num_scales - 1:
            _add_conv(p, rng, f"enc/d{m}", cin, cin, 4, cfg.leak)

    for m in range(cfg.num_scales):
        cm = cfg.coeff_channels[m]
        steps = cfg.aligner_steps(m)
        if steps == 0:
            _add_conv(p, rng, f"enc/g{m}/c0", cfg.out_channels, cm, 1, cfg.leak)
        else:
            widths = [cm] + [cfg.aligner_channels] * (steps - 1) + [cfg.out_channels]
            for i in range(steps):
                _add_conv(p, rng, f"enc/g{m}/c{i}", widths[i + 1], widths[i], 4, cfg.leak)

    for i in range(cfg.joint_layers):
        gain = 0.3 if i == cfg.joint_layers - 1 else 1.0
        _add_conv(p, rng, f"enc/g/c{i}", cfg.out_channels, cfg.out_channels, 3, cfg.leak, gain)

    # decoder mirror, independent parameters
    for i in range(cfg.joint_layers):
        _add_conv(p, rng, f"dec/g/c{i}", cfg.out_channels, cfg.out_channels, 3, cfg.leak)
    for m in range(cfg.num_scales):
        cm = cfg.coeff_channels[m]
        steps = cfg.aligner_steps(m)
        if steps == 0:
            _add_conv(p, rng, f"dec/g{m}/c0", cm, cfg.out_channels, 1, cfg.leak)
        else:
            widths = [cfg.out_channels] + [cfg.aligner_channels] * (steps - 1) + [cm]
            for i in range(steps):
                _add_conv(
                    p, rng, f"dec/g{m}/c{i}", widths[i + 1], widths[i], 4, cfg.leak,
                    transposed=True,
                )
        widths = [cm] + [cfg.hidden_channels] * (cfg.extract_layers - 1) + [cin]
        for i in range(cfg.extract_layers):
            _add_conv(p, rng, f"dec/f{m}/c{i}", widths[i + 1], widths[i], 3, cfg.leak)
        if m < cfg.num_scales - 1:
            _add_conv(p, rng, f"dec/u{m}", cin, cin, 4, cfg.leak, transposed=True)

    # center initial reconstructions at mid-gray so the output clamp does not
    # zero half the gradients before training starts
    p[f"dec/f0/c{cfg.extract_layers - 1}/b"].data[:] = 0.5

    return CodecModel(config=cfg, bits=bits, params=p)


def _conv(params: ParameterSet, name: str, x: Tensor, stride: int, pad: int) -> Tensor:
    return ad.conv2d(x, params[f"{name}/w"], stride, pad) + params[f"{name}/b"]


def _tconv(params: ParameterSet, name: str, x: Tensor, stride: int, pad: int) -> Tensor:
    return ad.transposed_conv2d(x, params[f"{name}/w"], stride, pad) + params[f"{name}/b"]


def _spatial(x: Tensor) -> tuple[int, int]:
    return x.shape[-2], x.shape[-1]


def pyramid_decompose(x: Tensor, model: CodecModel) -> list[Tensor]:
    """Coefficient maps c_m for every scale; input dims must split 2**(M-1) ways."""
    cfg = model.config
    h, w = _spatial(x)
    f = cfg.chain_factor
    if h % f or w % f:
        raise ValueError(
            f"input {h}x{w} not divisible by the scale chain factor {f}; pad first"
        )
    coeffs = []
    xm = x
    for m in range(cfg.num_scales):
        t = xm
        for i in range(cfg.extract_layers):
            t = ad.leaky_relu(_conv(model.params, f"enc/f{m}/c{i}", t, 1, 1), cfg.leak)
        coeffs.append(t)
        if m < cfg.num_scales - 1:
            xm = ad.leaky_relu(_conv(model.params, f"enc/d{m}", xm, 2, 1), cfg.leak)
    return coeffs


def aligned_terms(coeffs: list[Tensor], model: CodecModel) -> list[Tensor]:
    """g_m(c_m) for each scale, all resampled to the target feature shape."""
    cfg = model.config
    if len(coeffs) != cfg.num_scales:
        raise ValueError(f"expected {cfg.num_scales} coefficient maps, got {len(coeffs)}")
    terms = []
    for m, cm in enumerate(coeffs):
        steps = cfg.aligner_steps(m)
        t = cm
        if steps == 0:
            t = _conv(model.params, f"enc/g{m}/c0", t, 1, 0)
        else:
            for i in range(steps):
                t = _conv(model.params, f"enc/g{m}/c{i}", t, 2, 1)
                if i < steps - 1:
                    t = ad.leaky_relu(t, cfg.leak)
        terms.append(t)
    return terms


def interscale_align(coeffs: list[Tensor], model: CodecModel) -> Tensor:
    """Sum the aligned per-scale maps and apply the joint transform."""
    cfg = model.config
    terms = aligned_terms(coeffs, model)
    y = terms[0]
    for t in terms[1:]:
        if t.shape != y.shape:
            raise ValueError(f"aligned map shapes differ: {t.shape} vs {y.shape}")
        y = y + t
    for i in range(cfg.joint_layers):
        y = _conv(model.params, f"enc/g/c{i}", y, 1, 1)
        if i < cfg.joint_layers - 1:
            y = ad.leaky_relu(y, cfg.leak)
    return y


def encode_features(x: Tensor, model: CodecModel) -> Tensor:
    """Full analysis path: decompose then align. Dims must split `reduction` ways."""
    cfg = model.config
    h, w = _spatial(x)
    if h % cfg.reduction or w % cfg.reduction:
        raise ValueError(
            f"input {h}x{w} not divisible by reduction {cfg.reduction}; pad first"
        )
    return interscale_align(pyramid_decompose(x, model), model)


def synthesize(y_hat: Tensor, model: CodecModel) -> Tensor:
    """Mirror synthesis from the (quantized) feature tensor; output in [0,1]."""
    cfg = model.config
    if y_hat.shape[-3] != cfg.out_channels:
        raise ValueError(
            f"feature tensor has {y_hat.shape[-3]} channels, model expects {cfg.out_channels}"
        )
    t = y_hat
    for i in range(cfg.joint_layers):
        t = _conv(model.params, f"dec/g/c{i}", t, 1, 1)
        if i < cfg.joint_layers - 1:
            t = ad.leaky_relu(t, cfg.leak)
    joint = t

    recon = None
    for m in reversed(range(cfg.num_scales)):
        steps = cfg.aligner_steps(m)
        t = joint
        if steps == 0:
            t = _tconv(model.params, f"dec/g{m}/c0", t, 1, 0)
        else:
            for i in range(steps):
                t = _tconv(model.params, f"dec/g{m}/c{i}", t, 2, 1)
                if i < steps - 1:
                    t = ad.leaky_relu(t, cfg.leak)
        for i in range(cfg.extract_layers):
            t = _conv(model.params, f"dec/f{m}/c{i}", t, 1, 1)
            if i < cfg.extract_layers - 1:
                t = ad.leaky_relu(t, cfg.leak)
        if recon is None:
            recon = t
        else:
            recon = t + _tconv(model.params, f"dec/u{m}", recon, 2, 1)
    return ad.clamp(recon, 0.0, 1.0)


def pad_to_valid(image, model: CodecModel):
    """Reflect-pad right/bottom to a multiple of the model's reduction factor.

    Returns (padded, (orig_h, orig_w)). Accepts and returns Tensor or ndarray.
    """
    is_tensor = isinstance(image, Tensor)
    data = image.data if is_tensor else np.asarray(image)
    h, w = data.shape[-2], data.shape[-1]
    r = model.config.reduction
    pad_h = (-h) % r
    pad_w = (-w) % r
    if pad_h or pad_w:
        spec = [(0, 0)] * (data.ndim - 2) + [(0, pad_h), (0, pad_w)]
        # reflect needs pad < dim; fall back to edge replication for tiny images
        mode = "reflect" if pad_h < h and pad_w < w else "edge"
        data = np.pad(data, spec, mode=mode)
    out = Tensor(data) if is_tensor else data
    return out, (h, w)


def crop_to(image, dims: tuple[int, int]):
    h, w = dims
    if isinstance(image, Tensor):
        return Tensor._wrap(image.data[..., :h, :w], False)
    return np.asarray(image)[..., :h, :w]


# ---------------------------------------------------------------------------
# Model file format: config preamble + parameter checkpoint + integrity id
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"WOCM"
MODEL_VERSION = 1


def _config_bytes(cfg: PyramidConfig) -> bytes:
    head = struct.pack(
        "<BHHHBBBd",
        cfg.num_scales,
        cfg.hidden_channels,
        cfg.out_channels,
        cfg.reduction,
        cfg.extract_layers,
        cfg.joint_layers,
        cfg.in_channels,
        cfg.leak,
    )
    head += struct.pack("<H", cfg.aligner_channels)
    head += struct.pack("<B", len(cfg.coeff_channels))
    for c in cfg.coeff_channels:
        head += struct.pack("<H", c)
    return head


def save_model(model: CodecModel, fh: BinaryIO) -> None:
    fh.write(MODEL_MAGIC)
    fh.write(struct.pack("<B", MODEL_VERSION))
    fh.write(struct.pack("<B", model.bits))
    fh.write(_config_bytes(model.config))
    fh.write(model.model_id())
    ad.save_checkpoint(model.params.state_dict(), fh)


def load_model(fh: BinaryIO) -> CodecModel:
    magic = fh.read(4)
    if magic != MODEL_MAGIC:
        raise ad.CheckpointError(f"bad model magic {magic!r}")
    (version,) = struct.unpack("<B", fh.read(1))
    if version != MODEL_VERSION:
        raise ad.CheckpointError(f"unsupported model version {version}")
    (bits,) = struct.unpack("<B", fh.read(1))
    num_scales, hidden, out_ch, reduction, extract, joint, in_ch, leak = struct.unpack(
        "<BHHHBBBd", fh.read(18)
    )
    (aligner,) = struct.unpack("<H", fh.read(2))
    (n_coeff,) = struct.unpack("<B", fh.read(1))
    coeff = struct.unpack(f"<{n_coeff}H", fh.read(2 * n_coeff))
    stored_id = fh.read(8)
    cfg = PyramidConfig(
        num_scales=num_scales,
        coeff_channels=tuple(coeff),
        hidden_channels=hidden,
        out_channels=out_ch,
        reduction=reduction,
        aligner_channels=aligner,
        extract_layers=extract,
        joint_layers=joint,
        in_channels=in_ch,
        leak=float(leak),
    )
    model = build_codec_model(cfg, bits=bits, seed=0)
    model.params.load_state(ad.load_checkpoint(fh))
    if model.model_id() != stored_id:
        raise ad.CheckpointError("model id mismatch: file corrupted or format drift")
    return model
