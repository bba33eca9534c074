"""Dense N-d tensors with reverse-mode automatic differentiation.

Ops record onto an explicit ``Tape``; ``Tape.backward`` replays the record in
reverse and accumulates gradients into leaf tensors (``requires_grad=True``
tensors that were not produced by an op on the tape). Tensors created outside
an active tape are plain immutable values.

Everything is numpy-backed. All reductions use numpy's native left-to-right
order, so results are bit-identical across runs for a fixed thread count
(single-threaded BLAS in test mode).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Tape", "backward",
    "add", "sub", "mul", "neg", "reciprocal", "exp", "sqrt",
    "absolute", "square", "relu", "leaky_relu", "elu", "sigmoid", "activation",
    "mean", "total", "sum_axis", "concat_channels", "concat_last",
    "split_batch", "concat_batch", "repeat_axis",
    "crop2d", "reshape", "mul_const", "add_const", "matmul", "transpose_last2",
    "select_columns",
    "conv2d", "maxpool2", "avgpool2", "upsample_nearest",
    "pixel_shuffle", "pixel_unshuffle", "resize_bicubic",
    "unfold", "fold", "batchnorm", "BatchNormState",
]

_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed ops, replayed in reverse by ``backward``."""

    def __init__(self):
        self._records = []          # (out, inputs, backward_fn)
        self._produced = set()      # id() of tensors created by ops on this tape

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))
        self._produced.add(id(out))

    def clear(self):
        """Release all recorded ops and their saved forward context."""
        self._records.clear()
        self._produced.clear()

    def backward(self, root: "Tensor"):
        """Accumulate d(root)/d(leaf) into ``.grad`` of every grad-requiring leaf.

        ``root`` must be scalar. Repeated calls accumulate (no implicit zeroing).
        """
        if root.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        flow = {id(root): np.ones_like(root.data)}
        if id(root) not in self._produced and root.requires_grad:
            root._accumulate(np.ones_like(root.data))
        for out, inputs, backward_fn in reversed(self._records):
            g = flow.pop(id(out), None)
            if g is None:
                continue
            for t, gt in zip(inputs, backward_fn(g)):
                if gt is None or not t.requires_grad:
                    continue
                if id(t) in self._produced:
                    acc = flow.get(id(t))
                    flow[id(t)] = gt if acc is None else acc + gt
                else:
                    t._accumulate(gt)


def _active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """N-d array in canonical N,C,H,W layout for images, plus grad bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None            # lazily allocated, same shape as data

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def sum(self) -> "Tensor":
        return total(self)

    def mean(self) -> "Tensor":
        return mean(self)


def _make(out_data, inputs, backward_fn):
    """Wrap an op result; record on the active tape when gradients are needed."""
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape._record(out, inputs, backward_fn)
    return out


def backward(root: Tensor):
    """Run backward on the innermost active tape."""
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward requires an active Tape context")
    tape.backward(root)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _as_operands(x, y, opname):
    """Coerce to tensors; only scalar operands may broadcast."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    if not isinstance(y, Tensor):
        y = Tensor(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape and x.size != 1 and y.size != 1:
        raise ValueError(f"{opname}: shape mismatch {x.shape} vs {y.shape} "
                         "(only scalar operands broadcast)")
    return x, y


def _reduce_to(g, shape):
    # inverse of scalar broadcast: collapse the gradient back to a scalar operand
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) * np.ones(shape) if np.prod(shape) == 1 else g


def add(x, y):
    x, y = _as_operands(x, y, "add")

    def bwd(g):
        return _reduce_to(g, x.shape), _reduce_to(g, y.shape)

    return _make(x.data + y.data, (x, y), bwd)


def sub(x, y):
    x, y = _as_operands(x, y, "sub")

    def bwd(g):
        return _reduce_to(g, x.shape), _reduce_to(-g, y.shape)

    return _make(x.data - y.data, (x, y), bwd)


def mul(x, y):
    x, y = _as_operands(x, y, "mul")
    xd, yd = x.data, y.data

    def bwd(g):
        return _reduce_to(g * yd, x.shape), _reduce_to(g * xd, y.shape)

    return _make(xd * yd, (x, y), bwd)


def neg(x):
    return _make(-x.data, (x,), lambda g: (-g,))


def reciprocal(x):
    out = 1.0 / x.data
    return _make(out, (x,), lambda g: (-g * out * out,))


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * (0.5 / out),))


def absolute(x):
    # subgradient at 0 is 0 (np.sign(0) == 0)
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,))


def square(x):
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (g * (2.0 * xd),))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def leaky_relu(x, alpha: float = 0.2):
    slope = np.where(x.data > 0, 1.0, alpha)
    return _make(x.data * slope, (x,), lambda g: (g * slope,))


def elu(x):
    # C1-continuous: derivative is 1 for x >= 0 and e^x = out + 1 below
    out = np.where(x.data >= 0, x.data, np.expm1(x.data))
    deriv = np.where(x.data >= 0, 1.0, out + 1.0)
    return _make(out, (x,), lambda g: (g * deriv,))


def sigmoid(x):
    # stable two-sided formulation
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


_ACTIVATIONS = {
    "relu": lambda x, a: relu(x),
    "elu": lambda x, a: elu(x),
    "leaky_relu": lambda x, a: leaky_relu(x, a),
    "sigmoid": lambda x, a: sigmoid(x),
    "linear": lambda x, a: x,
}


def activation(x, kind: str, alpha: float = 0.2):
    """Elementwise activation by name: relu | elu | leaky_relu | sigmoid | linear."""
    try:
        return _ACTIVATIONS[kind](x, alpha)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def total(x):
    """Sum of all elements (scalar tensor)."""
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data).reshape(()), (x,), bwd)


def mean(x):
    n = x.size
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make((np.sum(x.data) / n).reshape(()), (x,), bwd)


def sum_axis(x, axis: int, keepdims: bool = True):
    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bwd)


def concat_channels(tensors):
    """Concatenate along the channel axis; N, H, W must match."""
    tensors = list(tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0],) + t.shape[2:] != (base[0],) + base[2:]:
            raise ValueError(f"concat_channels: shape mismatch {base} vs {t.shape}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=1))

    return _make(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bwd)


def split_batch(x):
    """Split along the leading (batch) axis into single-item tensors."""
    n = x.shape[0]
    parts = []
    for i in range(n):
        def bwd(g, _i=i):
            dx = np.zeros(x.shape, dtype=g.dtype)
            dx[_i:_i + 1] = g
            return (dx,)

        parts.append(_make(np.ascontiguousarray(x.data[i:i + 1]), (x,), bwd))
    return parts


def concat_batch(tensors):
    """Concatenate along the leading (batch) axis."""
    tensors = list(tensors)
    tail = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != tail:
            raise ValueError(f"concat_batch: shape mismatch {tensors[0].shape} vs {t.shape}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=0))

    return _make(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bwd)


def concat_last(tensors):
    """Concatenate along the last axis; all other dims must match."""
    tensors = list(tensors)
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ValueError(f"concat_last: shape mismatch {tensors[0].shape} vs {t.shape}")
    splits = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), bwd)


def reshape(x, shape):
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bwd)


def repeat_axis(x, axis: int, reps: int):
    """np.repeat along one axis; backward sums each group of copies."""
    shape = x.shape

    def bwd(g):
        gshape = shape[:axis] + (shape[axis], reps) + shape[axis + 1:]
        return (g.reshape(gshape).sum(axis=axis + 1),)

    return _make(np.repeat(x.data, reps, axis=axis), (x,), bwd)


def crop2d(x, y0: int, y1: int, x0: int, x1: int):
    """Spatial crop of an N,C,H,W tensor; backward zero-pads back into place."""
    N, C, H, W = x.shape

    def bwd(g):
        dx = np.zeros((N, C, H, W), dtype=g.dtype)
        dx[:, :, y0:y1, x0:x1] = g
        return (dx,)

    return _make(np.ascontiguousarray(x.data[:, :, y0:y1, x0:x1]), (x,), bwd)


def mul_const(x, arr):
    """Multiply by a constant array (no gradient into the constant)."""
    arr = np.asarray(arr)
    out = x.data * arr
    if out.shape != x.shape:
        raise ValueError(f"mul_const: constant {arr.shape} must not expand {x.shape}")
    return _make(out, (x,), lambda g: (g * arr,))


def add_const(x, arr):
    """Add a constant array (no gradient into the constant)."""
    arr = np.asarray(arr)
    out = x.data + arr
    if out.shape != x.shape:
        raise ValueError(f"add_const: constant {arr.shape} must not expand {x.shape}")
    return _make(out, (x,), lambda g: (g,))


def matmul(a, b):
    """2-D or batched 3-D matrix product."""
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim != ad.ndim:
        raise ValueError(f"matmul: expects 2-D or 3-D pairs, got {a.shape} @ {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")

    def bwd(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, (a, b), bwd)


def transpose_last2(x):
    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.ascontiguousarray(np.swapaxes(x.data, -1, -2)), (x,), bwd)


def select_columns(x, idx):
    """Gather columns of an (..., L) tensor; backward scatter-adds (handles repeats)."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        np.add.at(dx, (Ellipsis, idx), g)
        return (dx,)

    return _make(np.ascontiguousarray(x.data[..., idx]), (x,), bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_out_len(n, k, stride, dilation, pad):
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _conv_raw(xp, w, stride, dilation):
    """Correlation of a pre-padded input with w; returns N,Cout,Ho,Wo."""
    kh, kw = w.shape[2], w.shape[3]
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    v = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    v = v[:, :, ::stride, ::stride, ::dilation, ::dilation]
    y = np.tensordot(v, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(np.moveaxis(y, 3, 1))


def _resolve_padding(padding, kh, kw, dilation):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("padding='same' requires odd kernel sizes")
        return dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    p = int(padding)
    if p < 0:
        raise ValueError("padding must be >= 0")
    return p, p


def conv2d(x, weight, bias=None, stride: int = 1, dilation: int = 1, padding="same"):
    """2-D correlation over N,Cin,H,W with an Cout,Cin,kh,kw kernel.

    ``padding`` is "same" (zero padding of dilation*(k-1)/2, odd kernels) or an
    explicit pixel count. Gradients flow to input, weight and bias; the input
    gradient is computed as the transposed convolution, so no atomic scatter
    is involved and results are deterministic.
    """
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expects 4-D input/weight, got {x.shape}, {weight.shape}")
    N, C, H, W = x.shape
    Cout, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"conv2d: input channels {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (Cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    ph, pw = _resolve_padding(padding, kh, kw, dilation)
    if H + 2 * ph < dilation * (kh - 1) + 1 or W + 2 * pw < dilation * (kw - 1) + 1:
        raise ValueError(f"conv2d: kernel {weight.shape} (dilation {dilation}) does not fit "
                         f"padded input {x.shape} with padding ({ph},{pw})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = _conv_raw(xp, weight.data, stride, dilation)
    if bias is not None:
        y += bias.data.reshape(1, Cout, 1, 1)

    wd = weight.data
    Ho, Wo = y.shape[2], y.shape[3]

    def bwd(g):
        # weight gradient: correlate saved padded input with the output grad
        eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
        v = sliding_window_view(xp, (eh, ew), axis=(2, 3))
        v = v[:, :, ::stride, ::stride, ::dilation, ::dilation]
        dw = np.tensordot(g, v, axes=([0, 2, 3], [0, 2, 3]))   # Cout,Cin,kh,kw
        # input gradient: transposed conv = conv of the zero-stuffed grad with
        # the spatially flipped, channel-swapped kernel
        Hp, Wp = xp.shape[2], xp.shape[3]
        if stride > 1:
            u = np.zeros((N, Cout, (Ho - 1) * stride + 1, (Wo - 1) * stride + 1), dtype=g.dtype)
            u[:, :, ::stride, ::stride] = g
        else:
            u = g
        eh_, ew_ = dilation * (kh - 1), dilation * (kw - 1)
        up = np.pad(u, ((0, 0), (0, 0), (eh_, eh_), (ew_, ew_)))
        wflip = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dxp = _conv_raw(up, wflip, 1, dilation)
        # rows/cols the strided forward never reached get zero gradient
        if dxp.shape[2] < Hp or dxp.shape[3] < Wp:
            dxp = np.pad(dxp, ((0, 0), (0, 0),
                               (0, Hp - dxp.shape[2]), (0, Wp - dxp.shape[3])))
        dx = dxp[:, :, ph:ph + H, pw:pw + W]
        db = None if bias is None else g.sum(axis=(0, 2, 3))
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, inputs, bwd)


# ---------------------------------------------------------------------------
# pooling / resampling
# ---------------------------------------------------------------------------

def maxpool2(x):
    """2x2 max pooling; ties route the gradient to the first position in
    row-major window order."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2: spatial dims must be even, got {x.shape}")
    v = x.data.reshape(N, C, H // 2, 2, W // 2, 2)
    stacked = v.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    am = np.argmax(stacked, axis=-1)            # first max wins: row-major order
    y = np.take_along_axis(stacked, am[..., None], axis=-1)[..., 0]

    def bwd(g):
        dz = np.zeros((N, C, H // 2, W // 2, 4), dtype=g.dtype)
        np.put_along_axis(dz, am[..., None], g[..., None], axis=-1)
        dz = dz.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dz.reshape(N, C, H, W),)

    return _make(np.ascontiguousarray(y), (x,), bwd)


def avgpool2(x):
    """2x2 average pooling (plumbing for half-resolution attention)."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avgpool2: spatial dims must be even, got {x.shape}")
    y = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(y, (x,), bwd)


def upsample_nearest(x, factor: int):
    """Replicate each pixel into a factor x factor block; backward sums blocks."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return _make(x.data.copy(), (x,), lambda g: (g,))
    N, C, H, W = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        return (g.reshape(N, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _make(y, (x,), bwd)


def pixel_shuffle(x, s: int):
    """Rearrange N,C*s^2,H,W into N,C,sH,sW:
    out(n,c,s*h+a,s*w+b) = in(n, c*s^2 + a*s + b, h, w)."""
    if s < 1:
        raise ValueError("pixel_shuffle factor must be >= 1")
    N, C2, H, W = x.shape
    if C2 % (s * s):
        raise ValueError(f"pixel_shuffle: channels {C2} not divisible by {s}^2")
    C = C2 // (s * s)
    y = (x.data.reshape(N, C, s, s, H, W)
         .transpose(0, 1, 4, 2, 5, 3)
         .reshape(N, C, s * H, s * W))

    def bwd(g):
        dg = (g.reshape(N, C, H, s, W, s)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(N, C2, H, W))
        return (np.ascontiguousarray(dg),)

    return _make(np.ascontiguousarray(y), (x,), bwd)


def pixel_unshuffle(x, s: int):
    """Exact inverse of pixel_shuffle."""
    if s < 1:
        raise ValueError("pixel_unshuffle factor must be >= 1")
    N, C, Hs, Ws = x.shape
    if Hs % s or Ws % s:
        raise ValueError(f"pixel_unshuffle: spatial dims {x.shape} not divisible by {s}")
    H, W = Hs // s, Ws // s
    y = (x.data.reshape(N, C, H, s, W, s)
         .transpose(0, 1, 3, 5, 2, 4)
         .reshape(N, C * s * s, H, W))

    def bwd(g):
        dg = (g.reshape(N, C, s, s, H, W)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(N, C, Hs, Ws))
        return (np.ascontiguousarray(dg),)

    return _make(np.ascontiguousarray(y), (x,), bwd)


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom, a = -0.5, edge clamp, align_corners=False)
# ---------------------------------------------------------------------------

def _cubic(s):
    a = -0.5
    s = np.abs(s)
    out = np.zeros_like(s)
    near = s <= 1.0
    out[near] = (a + 2.0) * s[near] ** 3 - (a + 3.0) * s[near] ** 2 + 1.0
    far = (s > 1.0) & (s < 2.0)
    out[far] = a * (s[far] ** 3 - 5.0 * s[far] ** 2 + 8.0 * s[far] - 4.0)
    return out


_RESIZE_CACHE: dict = {}


def resize_matrix_1d(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) Catmull-Rom sampling matrix with clamped edges."""
    key = (n_in, n_out)
    m = _RESIZE_CACHE.get(key)
    if m is not None:
        return m
    m = np.zeros((n_out, n_in))
    centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(centers).astype(np.int64)
    for j in range(-1, 3):
        taps = base + j
        w = _cubic(centers - taps)
        np.add.at(m, (np.arange(n_out), np.clip(taps, 0, n_in - 1)), w)
    _RESIZE_CACHE[key] = m
    return m


def resize_bicubic(x, out_h: int, out_w: int):
    """Separable Catmull-Rom resize of an N,C,H,W tensor.

    Linear in the input, so the backward pass is exactly the transpose of the
    forward sampling matrix.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("resize_bicubic: output dims must be >= 1")
    N, C, H, W = x.shape
    mh = resize_matrix_1d(H, out_h).astype(x.dtype)
    mw = resize_matrix_1d(W, out_w).astype(x.dtype)
    y = np.einsum("oh,nchw,pw->ncop", mh, x.data, mw, optimize=True)

    def bwd(g):
        return (np.einsum("oh,ncop,pw->nchw", mh, g, mw, optimize=True),)

    return _make(y, (x,), bwd)


# ---------------------------------------------------------------------------
# patch extraction (plumbing for contextual attention)
# ---------------------------------------------------------------------------

def _unfold_index(C, Hp, Wp, k, stride):
    ho = (Hp - k) // stride + 1
    wo = (Wp - k) // stride + 1
    c, ky, kx = np.meshgrid(np.arange(C), np.arange(k), np.arange(k), indexing="ij")
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    idx = ((c.reshape(-1, 1) * Hp + ky.reshape(-1, 1) + oy.reshape(1, -1) * stride) * Wp
           + kx.reshape(-1, 1) + ox.reshape(1, -1) * stride)
    return idx, ho, wo


def unfold(x, k: int, stride: int = 1, padding: int = 0):
    """im2col: N,C,H,W -> N,C*k*k,L with zero padding, L windows in raster order."""
    N, C, H, W = x.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < k or Wp < k:
        raise ValueError(f"unfold: window {k} exceeds padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    idx, ho, wo = _unfold_index(C, Hp, Wp, k, stride)
    cols = xp.reshape(N, -1)[:, idx]

    def bwd(g):
        dxp = np.zeros((N, C * Hp * Wp), dtype=g.dtype)
        np.add.at(dxp, (np.arange(N)[:, None, None], idx[None]), g)
        dxp = dxp.reshape(N, C, Hp, Wp)
        return (dxp[:, :, padding:padding + H, padding:padding + W],)

    return _make(cols, (x,), bwd)


def fold(cols, out_hw, k: int, stride: int = 1, padding: int = 0):
    """col2im: scatter-add N,C*k*k,L windows back onto an N,C,H,W canvas."""
    H, W = out_hw
    N, CKK, L = cols.shape
    C = CKK // (k * k)
    Hp, Wp = H + 2 * padding, W + 2 * padding
    idx, ho, wo = _unfold_index(C, Hp, Wp, k, stride)
    if ho * wo != L:
        raise ValueError(f"fold: {L} columns incompatible with geometry ({ho}x{wo})")
    yp = np.zeros((N, C * Hp * Wp), dtype=cols.dtype)
    np.add.at(yp, (np.arange(N)[:, None, None], idx[None]), cols.data)
    y = yp.reshape(N, C, Hp, Wp)[:, :, padding:padding + H, padding:padding + W]

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        return (gp.reshape(N, -1)[:, idx],)

    return _make(np.ascontiguousarray(y), (cols,), bwd)


def fold_counts(out_hw, k: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Window-coverage count per output pixel for the matching fold geometry."""
    H, W = out_hw
    Hp, Wp = H + 2 * padding, W + 2 * padding
    idx, ho, wo = _unfold_index(1, Hp, Wp, k, stride)
    cnt = np.zeros(Hp * Wp)
    np.add.at(cnt, idx.reshape(-1), 1.0)
    return cnt.reshape(Hp, Wp)[padding:padding + H, padding:padding + W]


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Per-channel running statistics, updated by EMA in train mode."""

    def __init__(self, channels: int, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def copy(self):
        dup = BatchNormState(len(self.running_mean), self.running_mean.dtype)
        dup.running_mean = self.running_mean.copy()
        dup.running_var = self.running_var.copy()
        return dup


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str = "train",
              eps: float = 1e-3, momentum: float = 0.99, update_stats: bool = True):
    """Channelwise batch normalization over an N,C,H,W tensor.

    Train mode normalizes by batch statistics (differentiable through them)
    and updates ``state`` by exponential moving average; infer mode uses the
    running statistics.
    """
    N, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batchnorm: gamma/beta {gamma.shape}/{beta.shape} != ({C},)")
    if mode not in ("train", "infer"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    axes = (0, 2, 3)
    m = N * H * W
    if mode == "train":
        if m < 2:
            raise ValueError("batchnorm: train mode needs N*H*W >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)            # biased, matches normalization
        if update_stats:
            state.running_mean *= momentum
            state.running_mean += (1.0 - momentum) * mu
            state.running_var *= momentum
            state.running_var += (1.0 - momentum) * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, C, 1, 1)) * inv.reshape(1, C, 1, 1)
    y = gamma.data.reshape(1, C, 1, 1) * xhat + beta.data.reshape(1, C, 1, 1)

    gd = gamma.data

    def bwd(g):
        dgamma = np.sum(g * xhat, axis=axes)
        dbeta = np.sum(g, axis=axes)
        dxhat = g * gd.reshape(1, C, 1, 1)
        if mode == "train":
            mean_dxhat = dxhat.mean(axis=axes).reshape(1, C, 1, 1)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(1, C, 1, 1)
            dx = inv.reshape(1, C, 1, 1) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        else:
            dx = dxhat * inv.reshape(1, C, 1, 1)
        return dx, dgamma, dbeta

    return _make(y, (x, gamma, beta), bwd)
