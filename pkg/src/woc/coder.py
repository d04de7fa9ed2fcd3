"""Context-adaptive binary arithmetic coding of bitplane tensors.

Each bit's context packs its plane index, the four causal spatial neighbors
(left, above, above-left, above-right; out of bounds encodes as sentinel 2)
within the same plane and channel, and the bits already coded at the same
position in more significant planes. Per-context counters give
p(1) = (n1 + 1/2) / (n0 + n1 + 1), quantized to 16-bit fixed point for the
integer range coder, so encoder and decoder evolve identically with no side
information. Counters reset between calls: every payload decodes on its own.

The range coder is byte-oriented: 32-bit low/range registers, renormalization
when range drops below 2**24, carry propagation into already-emitted bytes,
and a 4-byte flush.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

OOB = 2  # sentinel for out-of-bounds neighbor
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_LN2 = float(np.log(2.0))
_LGAMMA_HALF = float(gammaln(0.5))

# Constant gap between the ideal adaptive-model codelength and the emitted
# payload: 4 flush bytes plus mean sub-byte rounding.
FLUSH_OVERHEAD_BITS = 36.0


class DecodeError(ValueError):
    """Raised when a payload cannot be decoded; carries the failure position."""

    def __init__(self, message: str, bit_index: int | None = None):
        super().__init__(message)
        self.bit_index = bit_index


class CausalityError(RuntimeError):
    """A context referenced a bit that has not been decoded yet."""


@dataclass
class CodedBitstream:
    """Arithmetic-coded payload plus the dims needed to decode it."""

    payload: bytes
    length_bits: int
    dims: tuple[int, int, int, int]  # (B, C, H, W)


class ContextModel:
    """Adaptive per-context bit counters shared by encoder and decoder."""

    def __init__(self):
        self.counts: dict[int, list[int]] = {}

    def prob_one(self, ctx: int) -> float:
        n0, n1 = self.counts.get(ctx, (0, 0))
        return (n1 + 0.5) / (n0 + n1 + 1.0)

    def prob_one_q16(self, ctx: int) -> int:
        n0, n1 = self.counts.get(ctx, (0, 0))
        p1 = ((2 * n1 + 1) << 16) // (2 * (n0 + n1) + 2)
        if p1 < 1:
            return 1
        if p1 > 65535:
            return 65535
        return p1

    def update(self, ctx: int, bit: int) -> None:
        counts = self.counts.get(ctx)
        if counts is None:
            self.counts[ctx] = counts = [0, 0]
        counts[bit] += 1


def pack_context(plane: int, neighbors: tuple[int, int, int, int], ancestors: int) -> int:
    """Deterministic identifier for (plane, neighbor values, ancestor bits)."""
    left, above, above_left, above_right = neighbors
    nbr = ((left * 3 + above) * 3 + above_left) * 3 + above_right
    return (plane << 16) | (ancestors << 8) | nbr


def context_of(bitplanes, position, decoded_mask=None) -> int:
    """Context identifier of one bit; validates causality against the mask."""
    p, c, h, w = position
    planes = bitplanes.planes
    _, _, height, width = planes.shape

    def bit(pp, hh, ww):
        if hh < 0 or ww < 0 or hh >= height or ww >= width:
            return OOB
        if decoded_mask is not None and not decoded_mask[pp, c, hh, ww]:
            raise CausalityError(
                f"context at {(p, c, h, w)} referenced undecoded bit {(pp, c, hh, ww)}"
            )
        return int(planes[pp, c, hh, ww])

    neighbors = (bit(p, h, w - 1), bit(p, h - 1, w), bit(p, h - 1, w - 1), bit(p, h - 1, w + 1))
    ancestors = 0
    for q in range(p):
        ancestors = (ancestors << 1) | bit(q, h, w)
    return pack_context(p, neighbors, ancestors)


def _context_ids(planes: np.ndarray) -> np.ndarray:
    """All context identifiers, computed from the full tensor (encoder side)."""
    nplanes = planes.shape[0]
    ids = np.empty(planes.shape, dtype=np.int64)
    ancestors = np.zeros(planes.shape[1:], dtype=np.int64)
    for p in range(nplanes):
        pl = planes[p].astype(np.int64)
        left = np.full_like(pl, OOB)
        left[:, :, 1:] = pl[:, :, :-1]
        above = np.full_like(pl, OOB)
        above[:, 1:, :] = pl[:, :-1, :]
        above_left = np.full_like(pl, OOB)
        above_left[:, 1:, 1:] = pl[:, :-1, :-1]
        above_right = np.full_like(pl, OOB)
        above_right[:, 1:, :-1] = pl[:, :-1, 1:]
        nbr = ((left * 3 + above) * 3 + above_left) * 3 + above_right
        ids[p] = (p << 16) | (ancestors << 8) | nbr
        ancestors = (ancestors << 1) | pl
    return ids


def aac_encode(b) -> CodedBitstream:
    """Arithmetic-code a bitplane tensor in plane/channel/raster scan order."""
    planes = b.planes
    ids = _context_ids(planes).ravel().tolist()
    bits = planes.ravel().tolist()

    counts: dict[int, list[int]] = {}
    out = bytearray()
    low = 0
    rng = _MASK32
    for ctx, bit in zip(ids, bits):
        entry = counts.get(ctx)
        if entry is None:
            counts[ctx] = entry = [0, 0]
        n0, n1 = entry
        p1 = ((2 * n1 + 1) << 16) // (2 * (n0 + n1) + 2)
        if p1 < 1:
            p1 = 1
        elif p1 > 65535:
            p1 = 65535
        r0 = (rng * (65536 - p1)) >> 16
        if bit:
            low += r0
            rng -= r0
            entry[1] = n1 + 1
            if low > _MASK32:
                i = len(out) - 1
                while out[i] == 0xFF:
                    out[i] = 0
                    i -= 1
                out[i] += 1
                low &= _MASK32
        else:
            rng = r0
            entry[0] = n0 + 1
        while rng < _TOP:
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
            rng = (rng << 8) & _MASK32

    for _ in range(4):
        out.append((low >> 24) & 0xFF)
        low = (low << 8) & _MASK32

    payload = bytes(out)
    return CodedBitstream(
        payload=payload, length_bits=8 * len(payload), dims=planes.shape
    )


def aac_decode(s: CodedBitstream, dims=None):
    """Reconstruct the bitplane tensor; the model evolves exactly as in encode."""
    from .quantize import BitplaneTensor

    if dims is None:
        dims = s.dims
    nplanes, channels, height, width = dims
    payload = s.payload
    if len(payload) < 4:
        raise DecodeError("payload shorter than coder flush", bit_index=0)

    code = int.from_bytes(payload[:4], "big")
    pos = 4
    rng = _MASK32
    nbytes = len(payload)
    counts: dict[int, list[int]] = {}
    planes = np.zeros(dims, dtype=np.uint8)
    ancestors = np.zeros((channels, height * width), dtype=np.int64)
    bit_index = 0

    for p in range(nplanes):
        plane_base = p << 16
        for c in range(channels):
            anc = ancestors[c].tolist()
            cur = [0] * (height * width)
            i = 0
            for h in range(height):
                for w in range(width):
                    if w:
                        left = cur[i - 1]
                    else:
                        left = OOB
                    if h:
                        j = i - width
                        above = cur[j]
                        above_left = cur[j - 1] if w else OOB
                        above_right = cur[j + 1] if w < width - 1 else OOB
                    else:
                        above = above_left = above_right = OOB
                    ctx = plane_base | (anc[i] << 8) | (
                        ((left * 3 + above) * 3 + above_left) * 3 + above_right
                    )
                    entry = counts.get(ctx)
                    if entry is None:
                        counts[ctx] = entry = [0, 0]
                    n0, n1 = entry
                    p1 = ((2 * n1 + 1) << 16) // (2 * (n0 + n1) + 2)
                    if p1 < 1:
                        p1 = 1
                    elif p1 > 65535:
                        p1 = 65535
                    r0 = (rng * (65536 - p1)) >> 16
                    if code < r0:
                        bit = 0
                        rng = r0
                        entry[0] = n0 + 1
                    else:
                        bit = 1
                        code -= r0
                        rng -= r0
                        entry[1] = n1 + 1
                        cur[i] = 1
                    while rng < _TOP:
                        if pos >= nbytes:
                            raise DecodeError(
                                f"payload exhausted at byte {pos}", bit_index=bit_index
                            )
                        code = ((code << 8) | payload[pos]) & _MASK32
                        pos += 1
                        rng = (rng << 8) & _MASK32
                    i += 1
                    bit_index += 1
            planes[p, c] = np.array(cur, dtype=np.uint8).reshape(height, width)
            ancestors[c] = (ancestors[c] << 1) | np.array(cur, dtype=np.int64)

    return BitplaneTensor(planes=planes, bits=nplanes)


def estimate_codelength(b) -> float:
    """Expected emitted bits for `b` without producing a payload.

    The adaptive-counter model is exchangeable within each context, so the
    sequential sum of -log2 p(bit) collapses to a closed form over the final
    per-context counts; the flush/rounding overhead of the real coder is a
    near-constant added on top.
    """
    planes = b.planes
    ids = _context_ids(planes).ravel()
    bits = planes.ravel().astype(np.int64)
    keys = ids * 2 + bits
    uniq, counts = np.unique(keys, return_counts=True)
    ctx = uniq >> 1
    uctx, inverse = np.unique(ctx, return_inverse=True)
    n0 = np.zeros(len(uctx), dtype=np.float64)
    n1 = np.zeros(len(uctx), dtype=np.float64)
    ones = (uniq & 1).astype(bool)
    np.add.at(n0, inverse[~ones], counts[~ones])
    np.add.at(n1, inverse[ones], counts[ones])
    n = n0 + n1
    nats = np.sum(
        2.0 * _LGAMMA_HALF + gammaln(n + 1.0) - gammaln(n0 + 0.5) - gammaln(n1 + 0.5)
    )
    return float(nats / _LN2) + FLUSH_OVERHEAD_BITS
