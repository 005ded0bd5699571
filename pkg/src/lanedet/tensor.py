"""Minimal dense tensor library with tape-based reverse-mode autodiff.

Everything is float64. Ops record backward rules onto a module-level tape;
``backward()`` replays the tape in reverse. The op set is exactly what the
two lane-detection networks need: 2D/1D convolution (grouped, dilated,
strided), pixel shuffle, pointwise nonlinearities, poolings, an LSTM cell,
and the elementwise/matmul plumbing to compose losses.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "no_grad",
    "set_finite_checks",
    "tensor",
    "zeros",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_scalar",
    "matmul",
    "reshape",
    "transpose2",
    "tile_points",
    "concat",
    "narrow",
    "take_rows",
    "tsum",
    "tmean",
    "tabs",
    "log",
    "square",
    "clamp",
    "relu",
    "sigmoid",
    "tanh",
    "conv2d",
    "same_padding",
    "conv1d",
    "pixel_shuffle",
    "space_to_depth",
    "max_pool2d",
    "max_over_points",
    "avg_over_points",
    "min_last",
    "lstm_cell",
    "backward",
    "SGD",
    "uniform_init",
    "save_checkpoint",
    "load_checkpoint",
]

_grad_enabled = True
_check_finite = False


def set_finite_checks(on: bool) -> None:
    """Enable per-op NaN/Inf assertions (slow; meant for tests)."""
    global _check_finite
    _check_finite = on


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense row-major float64 array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_traced")

    def __init__(self, data, requires_grad: bool = False):
        # note: asarray keeps 0-d scalars 0-d where ascontiguousarray would not
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad = None
        self._traced = requires_grad and _grad_enabled

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of ops; reverse replay drives backpropagation."""

    def __init__(self):
        self._entries = []

    def record(self, out: Tensor, inputs, backward_rule) -> None:
        self._entries.append((out, inputs, backward_rule))

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self):
        return len(self._entries)


tape = Tape()


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class DimensionError(ValueError):
    """Shape mismatch, naming the offending axis where possible."""


class ContractError(RuntimeError):
    """An op precondition was violated."""


class EmptyInputError(ValueError):
    """A reduction was asked to run over an empty axis."""


def _make(data, inputs, backward_rule) -> Tensor:
    out = Tensor(data)
    if _check_finite and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value produced by forward op")
    if _grad_enabled and any(t._traced for t in inputs):
        out._traced = True
        tape.record(out, inputs, backward_rule)
    return out


def _acc(t: Tensor, g) -> None:
    if not t._traced:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, -g)

    return _make(-a.data, (a,), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        _acc(a, g * s)

    return _make(a.data * s, (a,), bwd)


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        _acc(a, g)

    return _make(a.data + s, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner axes differ: {a.data.shape[1]} vs {b.data.shape[0]}"
        )
    out_data = a.data @ b.data

    def bwd(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        _acc(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, p in zip(tensors, pieces):
            _acc(t, p)

    return _make(out_data, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _acc(a, full)

    return _make(a.data[idx], (a,), bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        _acc(a, full)

    return _make(a.data[indices], (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, np.full(a.data.shape, float(g)))

    return _make(a.data.sum(), (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise EmptyInputError("mean of empty tensor")

    def bwd(g):
        _acc(a, np.full(a.data.shape, float(g) / n))

    return _make(a.data.mean(), (a,), bwd)


def tabs(a: Tensor) -> Tensor:
    s = np.sign(a.data)

    def bwd(g):
        _acc(a, g * s)

    return _make(np.abs(a.data), (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _acc(a, g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0

    def bwd(g):
        _acc(a, g * mask)

    return _make(a.data * mask, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _acc(a, g * y * (1.0 - y))

    return _make(y, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(g):
        _acc(a, g * (1.0 - y * y))

    return _make(y, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that keeps spatial size unchanged at stride 1."""
    return dilation * (kernel - 1) // 2


def conv2d(
    x: Tensor,
    w: Tensor,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
    padding: int = 0,
) -> Tensor:
    """Grouped, dilated 2-D cross-correlation (NCHW)."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D, got {x.data.ndim}-D")
    if w.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-D, got {w.data.ndim}-D")
    n, c_in, h, width = x.data.shape
    c_out, c_in_g, kh, kw = w.data.shape
    if dilation < 1:
        raise ContractError("dilation must be >= 1")
    if c_in % groups != 0 or c_out % groups != 0:
        raise DimensionError("channel axis not divisible by groups")
    if c_in_g != c_in // groups:
        raise DimensionError(
            f"kernel input-channel axis is {c_in_g}, expected {c_in // groups}"
        )
    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (width + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError("conv2d output spatial size would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    co_g = c_out // groups
    wg = w.data.reshape(groups, co_g, c_in_g, kh, kw)
    out = np.zeros((n, groups, co_g, h_out, w_out))
    taps = []
    for u in range(kh):
        for v in range(kw):
            r0, c0 = u * dilation, v * dilation
            xs = xp[
                :,
                :,
                r0 : r0 + stride * (h_out - 1) + 1 : stride,
                c0 : c0 + stride * (w_out - 1) + 1 : stride,
            ].reshape(n, groups, c_in_g, h_out, w_out)
            out += np.einsum("gki,ngihw->ngkhw", wg[:, :, :, u, v], xs, optimize=True)
            taps.append((u, v, xs))
    out = out.reshape(n, c_out, h_out, w_out)

    def bwd(g):
        gg = g.reshape(n, groups, co_g, h_out, w_out)
        if w._traced:
            dw = np.empty_like(wg)
            for u, v, xs in taps:
                dw[:, :, :, u, v] = np.einsum(
                    "ngkhw,ngihw->gki", gg, xs, optimize=True
                )
            _acc(w, dw.reshape(w.data.shape))
        if x._traced:
            dxp = np.zeros_like(xp).reshape(
                n, groups, c_in_g, xp.shape[2], xp.shape[3]
            )
            for u, v, _ in taps:
                r0, c0 = u * dilation, v * dilation
                dxp[
                    :,
                    :,
                    :,
                    r0 : r0 + stride * (h_out - 1) + 1 : stride,
                    c0 : c0 + stride * (w_out - 1) + 1 : stride,
                ] += np.einsum("gki,ngkhw->ngihw", wg[:, :, :, u, v], gg, optimize=True)
            dxp = dxp.reshape(xp.shape)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _acc(x, dxp)

    return _make(out, (x, w), bwd)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Width-1 1-D convolution: the same linear map applied to every point."""
    if x.data.ndim != 3:
        raise DimensionError(f"conv1d input must be 3-D, got {x.data.ndim}-D")
    if w.data.ndim != 3 or w.data.shape[2] != 1:
        raise DimensionError("conv1d kernel must have shape (C_out, C_in, 1)")
    if w.data.shape[1] != x.data.shape[1]:
        raise DimensionError(
            f"conv1d channel axes differ: kernel {w.data.shape[1]} vs input {x.data.shape[1]}"
        )
    wm = w.data[:, :, 0]
    out = np.einsum("oi,nip->nop", wm, x.data, optimize=True)

    def bwd(g):
        if w._traced:
            _acc(w, np.einsum("nop,nip->oi", g, x.data, optimize=True)[:, :, None])
        if x._traced:
            _acc(x, np.einsum("oi,nop->nip", wm, g, optimize=True))

    return _make(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# rearrangement


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("pixel_shuffle input must be 4-D")
    n, c, h, w = x.data.shape
    if c % (r * r) != 0:
        raise DimensionError(f"channel count {c} not divisible by r^2={r * r}")
    c_out = c // (r * r)
    out = (
        x.data.reshape(n, c_out, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c_out, h * r, w * r)
    )

    def bwd(g):
        _acc(
            x,
            g.reshape(n, c_out, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w),
        )

    return _make(out, (x,), bwd)


def space_to_depth(x: Tensor, r: int) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("space_to_depth input must be 4-D")
    n, c, h, w = x.data.shape
    if h % r != 0 or w % r != 0:
        raise DimensionError(f"spatial size ({h},{w}) not divisible by r={r}")
    out = (
        x.data.reshape(n, c, h // r, r, w // r, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, h // r, w // r)
    )

    def bwd(g):
        _acc(
            x,
            g.reshape(n, c, r, r, h // r, w // r)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, h, w),
        )

    return _make(out, (x,), bwd)


def transpose2(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose2 expects a 2-D tensor")

    def bwd(g):
        _acc(a, g.T)

    return _make(a.data.T.copy(), (a,), bwd)


def tile_points(a: Tensor, p: int) -> Tensor:
    """Broadcast (N, C) to (N, C, P); backward sums over the point axis."""
    if a.data.ndim != 2:
        raise DimensionError("tile_points expects a 2-D tensor")
    out = np.repeat(a.data[:, :, None], p, axis=2)

    def bwd(g):
        _acc(a, g.sum(axis=2))

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# pooling


def max_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("max_pool2d input must be 4-D")
    stride = k if stride is None else stride
    n, c, h, w = x.data.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise EmptyInputError("pooling window larger than input")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, h_out, w_out, k, k)
    flat = win.reshape(n, c, h_out, w_out, k * k)
    arg = flat.argmax(axis=-1)  # first max wins ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        dx = np.zeros_like(x.data)
        hh, ww = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
        rows = hh[None, None] * stride + arg // k
        cols = ww[None, None] * stride + arg % k
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dx, (ni, ci, rows, cols), g)
        _acc(x, dx)

    return _make(out, (x,), bwd)


def max_over_points(x: Tensor) -> Tensor:
    """Max over the last (point) axis of (N, C, P); ties go to lowest index."""
    if x.data.ndim != 3:
        raise DimensionError("max_over_points input must be 3-D")
    if x.data.shape[2] == 0:
        raise EmptyInputError("max over empty point axis")
    arg = x.data.argmax(axis=2)
    out = np.take_along_axis(x.data, arg[:, :, None], axis=2)[:, :, 0]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, arg[:, :, None], g[:, :, None], axis=2)
        _acc(x, dx)

    return _make(out, (x,), bwd)


def avg_over_points(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise DimensionError("avg_over_points input must be 3-D")
    p = x.data.shape[2]
    if p == 0:
        raise EmptyInputError("mean over empty point axis")
    out = x.data.mean(axis=2)

    def bwd(g):
        _acc(x, np.repeat(g[:, :, None], p, axis=2) / p)

    return _make(out, (x,), bwd)


def min_last(x: Tensor) -> Tensor:
    """Min over the last axis; gradient routed to the first argmin."""
    if x.data.shape[-1] == 0:
        raise EmptyInputError("min over empty axis")
    arg = x.data.argmin(axis=-1)
    out = np.take_along_axis(x.data, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, arg[..., None], g[..., None], axis=-1)
        _acc(x, dx)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# recurrence


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """One LSTM step. Gate order in the packed weights is (i, f, g, o).

    wx: (D_in, 4*D_h), wh: (D_h, 4*D_h), b: (4*D_h,).
    """
    d_h = h.data.shape[1]
    if wx.data.shape != (x.data.shape[1], 4 * d_h):
        raise DimensionError(
            f"wx shape {wx.data.shape} inconsistent with D_in={x.data.shape[1]}, D_h={d_h}"
        )
    if wh.data.shape != (d_h, 4 * d_h):
        raise DimensionError(f"wh shape {wh.data.shape} inconsistent with D_h={d_h}")
    z = add(add(matmul(x, wx), matmul(h, wh)), b)
    i = sigmoid(narrow(z, 1, 0, d_h))
    f = sigmoid(narrow(z, 1, d_h, d_h))
    g = tanh(narrow(z, 1, 2 * d_h, d_h))
    o = sigmoid(narrow(z, 1, 3 * d_h, d_h))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------------------
# backward pass / optimizer


def backward(loss: Tensor) -> None:
    """Populate gradients of every traced tensor feeding the scalar loss."""
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones(())
    for out, _inputs, rule in reversed(tape._entries):
        if out.grad is None:
            continue
        rule(out.grad)


class SGD:
    """Plain SGD with momentum: v <- m*v - lr*g; p <- p + v.

    Clears the tape after each step, per the single-step tape contract.
    """

    def __init__(self, params, lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v
        self.zero_grad()
        tape.clear()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


# ---------------------------------------------------------------------------
# checkpoint file (magic "LNCK")

_CKPT_MAGIC = b"LNCK"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict, path) -> None:
    """Write named parameters: name(u16+bytes), rank(u8), extents(u32), f64 LE payload."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        for name in params:
            arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<I", ext))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path, expected_shapes: dict | None = None) -> dict:
    """Read a checkpoint back into {name: Tensor(requires_grad=True)}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {_CKPT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 8
    params = {}
    try:
        while off < len(blob):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if off + 8 * count > len(blob):
                raise CheckpointError(f"truncated payload for {name!r} at byte {off}")
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
            params[name] = Tensor(data.reshape(shape).copy(), requires_grad=True)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {off}") from exc
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in params:
                raise CheckpointError(f"missing parameter {name!r}")
            if params[name].data.shape != tuple(shape):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: "
                    f"{params[name].data.shape} vs {tuple(shape)}"
                )
    return params
