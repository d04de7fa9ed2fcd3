"""Dense tensors with reverse-mode automatic differentiation.

Arrays are stored as 32-bit floats; convolution and reduction arithmetic
runs through 64-bit intermediates so gradients survive finite-difference
scrutiny. Operations executed inside a `Tape` context record backward
closures; `backward` replays them in reverse execution order.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import BinaryIO, Callable, Iterable

import numpy as np

DTYPE = np.float32
ACC = np.float64


@contextmanager
def precision(dtype):
    """Temporarily switch tensor storage dtype.

    Production paths run float32; finite-difference verification runs the
    same operations under float64 so the h=1e-4 central-difference oracle is
    not drowned by storage rounding.
    """
    global DTYPE
    previous = DTYPE
    DTYPE = dtype
    try:
        yield
    finally:
        DTYPE = previous

CONV_KERNEL_SIZES = (1, 2, 3, 4)
CONV_STRIDES = (1, 2)

CHECKPOINT_MAGIC = b"WOCP"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class CheckpointError(ValueError):
    """Raised when a parameter checkpoint is malformed."""


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of executed operations for one backward pass.

    Entries are appended in execution order; replaying them reversed visits
    every recorded operation exactly once, which is a valid reverse
    topological order of the computation graph.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[], None]]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False

    def record(self, out: "Tensor", fn: Callable[[], None]) -> None:
        self._entries.append((out, fn))

    def __len__(self) -> int:
        return len(self._entries)


class Tensor:
    """N-dimensional array of reals, optionally tracked for gradients.

    `data` is float32 for arrays; reduction outputs keep float64 backing so
    scalar losses retain accumulation precision. `grad` is allocated lazily
    for intermediates and eagerly (zeros) for parameters.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = array
        t.grad = None
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=DTYPE)
        self.grad += g.astype(DTYPE, copy=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value))


def _tracking(*inputs: Tensor) -> bool:
    return _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs)


def _record(out: Tensor, fn: Callable[[], None]) -> None:
    if out.requires_grad and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, fwd, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._wrap(fwd(a.data, b.data), _tracking(a, b))

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(da(g, a.data, b.data), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(db(g, a.data, b.data), b.shape))

    _record(out, backward)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def _unary(a: Tensor, fwd, dfn) -> Tensor:
    out = Tensor._wrap(fwd(a.data), _tracking(a))

    def backward():
        g = out.grad
        if g is None:
            return
        a.accumulate_grad(dfn(g, a.data, out.data))

    _record(out, backward)
    return out


def neg(a: Tensor) -> Tensor:
    return _unary(a, lambda x: -x, lambda g, x, y: -g)


def tabs(a: Tensor) -> Tensor:
    return _unary(a, np.abs, lambda g, x, y: g * np.sign(x))


def tlog(a: Tensor) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x)


def tlog2(a: Tensor) -> Tensor:
    inv_ln2 = 1.0 / np.log(2.0)
    return _unary(a, np.log2, lambda g, x, y: g * inv_ln2 / x)


def pow_const(a: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    return _unary(a, lambda x: x**e, lambda g, x, y: g * e * x ** (e - 1.0))


def sigmoid(a: Tensor) -> Tensor:
    def fwd(x):
        return 1.0 / (1.0 + np.exp(-x.astype(ACC)))

    return _unary(a, lambda x: fwd(x).astype(x.dtype), lambda g, x, y: g * y * (1.0 - y))


def softplus(a: Tensor) -> Tensor:
    return _unary(
        a,
        lambda x: np.logaddexp(0.0, x.astype(ACC)).astype(x.dtype),
        lambda g, x, y: g / (1.0 + np.exp(-x.astype(ACC))),
    )


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leak slope must lie in [0, 1), got {slope}")
    return _unary(
        a,
        lambda x: np.where(x > 0, x, slope * x),
        lambda g, x, y: g * np.where(x > 0, 1.0, slope),
    )


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is in range."""
    return _unary(
        a,
        lambda x: np.clip(x, lo, hi),
        lambda g, x, y: g * ((x >= lo) & (x <= hi)),
    )


def clamp_min(a: Tensor, lo: float) -> Tensor:
    return _unary(
        a,
        lambda x: np.maximum(x, lo),
        lambda g, x, y: g * (x >= lo),
    )


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims, dtype=ACC)
    out = Tensor._wrap(np.asarray(out_data), _tracking(a))

    def backward():
        g = out.grad
        if g is None:
            return
        if axis is None:
            expanded = np.broadcast_to(g, a.shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            gshape = list(a.shape)
            for ax in axes:
                gshape[ax] = 1
            expanded = np.broadcast_to(g.reshape(gshape), a.shape)
        a.accumulate_grad(expanded)

    _record(out, backward)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor._wrap(a.data.reshape(shape), _tracking(a))

    def backward():
        g = out.grad
        if g is None:
            return
        a.accumulate_grad(g.reshape(a.shape))

    _record(out, backward)
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor._wrap(
        np.concatenate([t.data for t in tensors], axis=axis), _tracking(*tensors)
    )
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward():
        g = out.grad
        if g is None:
            return
        index: list = [slice(None)] * g.ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(index)])

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# Convolution core. Public conv2d/transposed_conv2d accept a single image
# (C,H,W) or a batch (N,C,H,W); kernels are (C_out, C_in, kh, kw) for both,
# so conv2d(x, K) and transposed_conv2d(y, K) are adjoint maps.
# ---------------------------------------------------------------------------


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).astype(ACC, order="C")  # fused copy+cast
    return cols.reshape(n * oh * ow, c * kh * kw), oh, ow


def _dilate(x: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return x
    n, c, h, w = x.shape
    buf = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.dtype)
    buf[:, :, ::stride, ::stride] = x
    return buf


def _signed_pad2d(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Pad positive amounts with zeros, crop negative amounts."""
    h, w = x.shape[2], x.shape[3]
    x = x[:, :, max(-top, 0) : h - max(-bottom, 0), max(-left, 0) : w - max(-right, 0)]
    pt, pb, pl, pr = max(top, 0), max(bottom, 0), max(left, 0), max(right, 0)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    return x


def _conv_forward(x, kernels, stride, pad):
    n, cin, h, w = x.shape
    cout, ckin, kh, kw = kernels.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    kmat = kernels.reshape(cout, ckin * kh * kw).T.astype(ACC)
    out = cols @ kmat
    return out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2).astype(DTYPE), oh, ow


def _conv_backward_x(gy, kernels, xshape, stride, pad):
    """Gradient w.r.t. conv input; also serves as the transposed-conv forward.

    Stride 1 gathers: correlate the rim-padded output gradient with the
    channel-swapped, spatially flipped kernels. Larger strides scatter the
    per-window contributions back instead, which avoids correlating mostly
    zero-dilated arrays.
    """
    cout, cin, kh, kw = kernels.shape
    n, _, h, w = xshape
    _, _, oh, ow = gy.shape
    if stride == 1:
        spread = _signed_pad2d(
            np.asarray(gy, dtype=DTYPE),
            kh - 1 - pad,
            h + pad - (oh - 1) - 1,
            kw - 1 - pad,
            w + pad - (ow - 1) - 1,
        )
        flipped = kernels.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        out, _, _ = _conv_forward(spread, flipped, 1, 0)
        return out

    gmat = gy.transpose(0, 2, 3, 1).astype(ACC, order="C").reshape(n * oh * ow, cout)
    kmat = kernels.reshape(cout, cin * kh * kw).astype(ACC)
    dcols = (gmat @ kmat).astype(DTYPE)
    blocks = dcols.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    buf = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                blocks[:, :, i, j]
            )
    if pad:
        buf = buf[:, :, pad : pad + h, pad : pad + w]
    return buf


def _conv_backward_k(x, gy, kshape, stride, pad):
    cout, cin, kh, kw = kshape
    n, _, oh, ow = gy.shape
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    gmat = gy.transpose(0, 2, 3, 1).astype(ACC, order="C").reshape(n * oh * ow, cout)
    dk = cols.T @ gmat
    return np.ascontiguousarray(dk.T).reshape(cout, cin, kh, kw)


def _check_conv_args(x: Tensor, kernels: Tensor, stride: int, padding: int):
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv input must be (C,H,W) or (N,C,H,W), got {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be (C_out,C_in,kh,kw), got {kernels.shape}")
    kh, kw = kernels.shape[2], kernels.shape[3]
    if kh not in CONV_KERNEL_SIZES or kw not in CONV_KERNEL_SIZES:
        raise ValueError(f"kernel size {kh}x{kw} outside supported menu {CONV_KERNEL_SIZES}")
    if stride not in CONV_STRIDES:
        raise ValueError(f"stride must be one of {CONV_STRIDES}, got {stride}")
    if padding < 0:
        raise ValueError("padding must be non-negative")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate `x` (C_in,H,W or N,C_in,H,W) with kernels (C_out,C_in,k,k)."""
    _check_conv_args(x, kernels, stride, padding)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input has {xd.shape[1]} channels but kernels expect {kernels.shape[1]}"
        )
    kh = kernels.shape[2]
    if xd.shape[2] + 2 * padding < kh or xd.shape[3] + 2 * padding < kernels.shape[3]:
        raise ShapeError("spatial dims (plus padding) smaller than kernel")

    out_data, _, _ = _conv_forward(xd, kernels.data, stride, padding)
    out = Tensor._wrap(out_data[0] if single else out_data, _tracking(x, kernels))

    def backward():
        g = out.grad
        if g is None:
            return
        gy = g[None] if single else g
        if x.requires_grad:
            dx = _conv_backward_x(gy, kernels.data, xd.shape, stride, padding)
            x.accumulate_grad(dx[0] if single else dx)
        if kernels.requires_grad:
            dk = _conv_backward_k(xd, gy, kernels.shape, stride, padding)
            kernels.accumulate_grad(dk)

    _record(out, backward)
    return out


def transposed_conv2d(
    x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of conv2d: maps (C_out,H,W) back through kernels (C_out,C_in,k,k).

    Output spatial size is (H-1)*stride - 2*padding + k.
    """
    _check_conv_args(x, kernels, stride, padding)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    cout, cin, kh, kw = kernels.shape
    if xd.shape[1] != cout:
        raise ShapeError(
            f"input has {xd.shape[1]} channels but kernels expect {cout}"
        )
    n, _, h, w = xd.shape
    out_h = (h - 1) * stride - 2 * padding + kh
    out_w = (w - 1) * stride - 2 * padding + kw
    if out_h < 1 or out_w < 1:
        raise ShapeError("transposed conv output would be empty")

    out_shape = (n, cin, out_h, out_w)
    out_data = np.asarray(
        _conv_backward_x(xd, kernels.data, out_shape, stride, padding), dtype=DTYPE
    )
    out = Tensor._wrap(out_data[0] if single else out_data, _tracking(x, kernels))

    def backward():
        g = out.grad
        if g is None:
            return
        gy = (g[None] if single else g).astype(DTYPE, copy=False)
        if x.requires_grad:
            dx, _, _ = _conv_forward(gy, kernels.data, stride, padding)
            x.accumulate_grad(dx[0] if single else dx)
        if kernels.requires_grad:
            dk = _conv_backward_k(gy, xd, kernels.shape, stride, padding)
            kernels.accumulate_grad(dk)

    _record(out, backward)
    return out


def correlate2d_fixed(x: Tensor, kernel: np.ndarray, pad: int = 0) -> Tensor:
    """Valid cross-correlation of every channel with one fixed 2-D kernel.

    The kernel is a plain array (no gradient); used for metric windows, which
    fall outside the learned-layer kernel-size menu.
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    kh, kw = kernel.shape
    kern4 = kernel.reshape(1, 1, kh, kw).astype(DTYPE)
    flat = xd.reshape(n * c, 1, h, w)
    out_data, oh, ow = _conv_forward(flat, kern4, 1, pad)
    out_data = out_data.reshape(n, c, oh, ow)
    out = Tensor._wrap(out_data[0] if single else out_data, _tracking(x))

    def backward():
        g = out.grad
        if g is None:
            return
        gy = (g[None] if single else g).reshape(n * c, 1, oh, ow)
        dx = _conv_backward_x(gy, kern4, flat.shape, 1, pad)
        dx = dx.reshape(n, c, h, w)
        x.accumulate_grad(dx[0] if single else dx)

    _record(out, backward)
    return out


def avg_pool2x2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; spatial dims must be even."""
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2 needs even spatial dims, got {h}x{w}")
    pooled = (
        xd.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5), dtype=ACC) * 0.25
    ).astype(DTYPE)
    out = Tensor._wrap(pooled[0] if single else pooled, _tracking(x))

    def backward():
        g = out.grad
        if g is None:
            return
        gy = g[None] if single else g
        dx = np.repeat(np.repeat(gy * 0.25, 2, axis=2), 2, axis=3)
        x.accumulate_grad(dx[0] if single else dx)

    _record(out, backward)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(param) into .grad of every reachable tensor.

    Gradients accumulate additively; parameters not reachable from the loss
    keep their existing (zero) gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for out, _ in tape._entries:
        out.grad = None
    loss.grad = np.ones(loss.data.shape, dtype=DTYPE)
    for out, fn in reversed(tape._entries):
        fn()


# ---------------------------------------------------------------------------
# Parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------


class ParameterSet:
    """Named map of trainable tensors plus their Adam moment state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter identifier {name!r}")
        t = Tensor(array, requires_grad=True)
        t.grad = np.zeros(t.shape, dtype=DTYPE)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros(t.shape, dtype=DTYPE)

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad.astype(ACC) ** 2))
        return float(np.sqrt(total))

    def grads(self) -> dict[str, np.ndarray]:
        return {k: np.array(t.grad, copy=True) for k, t in self._params.items()}

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            t.grad = grads[k].astype(DTYPE, copy=True)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: np.array(t.data, copy=True) for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            if k not in state:
                raise CheckpointError(f"missing parameter {k!r}")
            if state[k].shape != t.shape:
                raise CheckpointError(
                    f"shape mismatch for {k!r}: {state[k].shape} vs {t.shape}"
                )
            t.data = state[k].astype(DTYPE, copy=True)


def adam_step(
    params: ParameterSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterSet:
    """One bias-corrected Adam update; moment state lives on `params`.

    Gradients are consumed and reset to zero.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad.astype(ACC)
        m = params._m.get(name)
        v = params._v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=ACC)
            v = np.zeros(p.shape, dtype=ACC)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        params._m[name] = m
        params._v[name] = v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data.astype(ACC) - update).astype(DTYPE)
        p.grad = np.zeros(p.shape, dtype=DTYPE)
    return params


def save_checkpoint(entries: dict[str, np.ndarray], fh: BinaryIO) -> None:
    """Write parameter arrays: magic, version, count, then per-entry records."""
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<B", CHECKPOINT_VERSION))
    fh.write(struct.pack("<I", len(entries)))
    for name, array in entries.items():
        ident = name.encode("utf-8")
        fh.write(struct.pack("<H", len(ident)))
        fh.write(ident)
        arr = np.ascontiguousarray(array, dtype="<f4")
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(arr.tobytes())


def load_checkpoint(fh: BinaryIO) -> dict[str, np.ndarray]:
    magic = fh.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    (version,) = struct.unpack("<B", fh.read(1))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", fh.read(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ident_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(ident_len).decode("utf-8")
        (rank,) = struct.unpack("<B", fh.read(1))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
        n_values = int(np.prod(dims)) if dims else 1
        payload = fh.read(4 * n_values)
        if len(payload) != 4 * n_values:
            raise CheckpointError(f"truncated payload for {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(DTYPE)
        if name in entries:
            raise CheckpointError(f"duplicate identifier {name!r}")
        entries[name] = arr
    return entries
