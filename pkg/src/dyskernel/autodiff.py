"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

The op set is closed: every kind listed in ``OPS`` has a forward rule and an
adjoint rule, and each adjoint is checked against central finite differences
by :mod:`dyskernel.gradcheck`.
"""

import contextlib
import logging
from types import SimpleNamespace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when an op receives operands whose shapes violate its rule."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    __slots__ = ("fn", "ctx", "inputs")

    def __init__(self, fn, ctx, inputs):
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs


class Tensor:
    """Dense float64 array that records the op which produced it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One op kind: ``forward`` on raw arrays, ``backward`` returns input adjoints."""

    kind = "abstract"

    @staticmethod
    def forward(ctx, *arrays, **attrs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **attrs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        ctx = SimpleNamespace()
        out = cls.forward(ctx, *(t.data for t in tensors), **attrs)
        track = _grad_enabled and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=track)
        if track:
            result._node = Node(cls, ctx, tensors)
        return result


def _topo_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad += g
            continue
        in_grads = t._node.fn.backward(t._node.ctx, g)
        for parent, pg in zip(t._node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"{t._node.fn.kind}: adjoint shape {pg.shape} != input shape {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def _check_broadcast(kind, a, b):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim:
        raise ShapeError(f"{kind}: rank mismatch {a.shape} vs {b.shape}")
    bad = [i for i, (m, n) in enumerate(zip(a.shape, b.shape)) if m != n and 1 not in (m, n)]
    if bad:
        raise ShapeError(f"{kind}: incompatible axes {bad} for shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


class Add(Function):
    kind = "add"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("add", a, b)
        ctx.shapes = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.shapes[0]), _unbroadcast(g, ctx.shapes[1])


class Sub(Function):
    kind = "sub"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("sub", a, b)
        ctx.shapes = (a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.shapes[0]), _unbroadcast(-g, ctx.shapes[1])


class Mul(Function):
    kind = "mul"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("mul", a, b)
        ctx.a, ctx.b = a, b
        return a * b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g * ctx.b, ctx.a.shape), _unbroadcast(g * ctx.a, ctx.b.shape)


class Div(Function):
    kind = "div"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast("div", a, b)
        ctx.a, ctx.b = a, b
        return a / b

    @staticmethod
    def backward(ctx, g):
        ga = g / ctx.b
        gb = -g * ctx.a / (ctx.b * ctx.b)
        return _unbroadcast(ga, ctx.a.shape), _unbroadcast(gb, ctx.b.shape)


class Neg(Function):
    kind = "neg"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (-g,)


class Exp(Function):
    kind = "exp"

    @staticmethod
    def forward(ctx, a):
        ctx.out = np.exp(a)
        return ctx.out

    @staticmethod
    def backward(ctx, g):
        return (g * ctx.out,)


class Square(Function):
    kind = "square"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        return a * a

    @staticmethod
    def backward(ctx, g):
        return (2.0 * g * ctx.a,)


class Sqrt(Function):
    kind = "sqrt"

    @staticmethod
    def forward(ctx, a):
        if np.any(a < 0):
            raise ValueError("sqrt: negative input")
        ctx.out = np.sqrt(a)
        return ctx.out

    @staticmethod
    def backward(ctx, g):
        return (0.5 * g / ctx.out,)


class LeakyReLU(Function):
    kind = "leaky-relu"

    @staticmethod
    def forward(ctx, a, slope=0.2):
        ctx.mask = a > 0
        ctx.slope = slope
        return np.where(ctx.mask, a, slope * a)

    @staticmethod
    def backward(ctx, g):
        return (np.where(ctx.mask, g, ctx.slope * g),)


class Clamp(Function):
    """Clip to ``[lo, hi]``; zero adjoint where the bound is active."""

    kind = "clamp"

    @staticmethod
    def forward(ctx, a, lo, hi):
        lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), a.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), a.shape)
        ctx.mask = (a >= lo) & (a <= hi)
        return np.clip(a, lo, hi)

    @staticmethod
    def backward(ctx, g):
        return (np.where(ctx.mask, g, 0.0),)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


class Sum(Function):
    kind = "sum"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.shape = a.shape
        ctx.axis = _norm_axis(axis, a.ndim)
        ctx.keepdims = keepdims
        return np.sum(a, axis=ctx.axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        if not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        return (np.broadcast_to(g, ctx.shape).copy(),)


class Mean(Function):
    kind = "mean"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx.shape = a.shape
        ctx.axis = _norm_axis(axis, a.ndim)
        ctx.keepdims = keepdims
        ctx.count = int(np.prod([a.shape[i] for i in ctx.axis])) if a.ndim else 1
        return np.mean(a, axis=ctx.axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        if not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        return (np.broadcast_to(g / ctx.count, ctx.shape).copy(),)


class Softmax(Function):
    kind = "softmax-over-axis"

    @staticmethod
    def forward(ctx, a, axis=-1):
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        ctx.out = e / e.sum(axis=axis, keepdims=True)
        ctx.axis = axis
        return ctx.out

    @staticmethod
    def backward(ctx, g):
        s = ctx.out
        return (s * (g - (g * s).sum(axis=ctx.axis, keepdims=True)),)


# ---------------------------------------------------------------- structural


class Reshape(Function):
    kind = "reshape-heads"

    @staticmethod
    def forward(ctx, a, shape=()):
        if int(np.prod(shape)) != a.size:
            raise ShapeError(f"reshape-heads: cannot reshape {a.shape} into {tuple(shape)}")
        ctx.shape = a.shape
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx.shape),)


class GetItem(Function):
    kind = "slice"

    @staticmethod
    def forward(ctx, a, index=()):
        ctx.shape = a.shape
        ctx.index = index
        return np.array(a[index], copy=True)

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx.shape)
        np.add.at(out, ctx.index, g)
        return (out,)


class Concat(Function):
    kind = "concat-channels"

    @staticmethod
    def forward(ctx, *arrays, axis=1):
        ref = arrays[0]
        for i, arr in enumerate(arrays[1:], 1):
            if arr.ndim != ref.ndim:
                raise ShapeError(f"concat-channels: rank mismatch at input {i}")
            bad = [k for k in range(ref.ndim) if k != axis % ref.ndim and arr.shape[k] != ref.shape[k]]
            if bad:
                raise ShapeError(f"concat-channels: input {i} differs on axes {bad}")
        ctx.axis = axis
        ctx.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        return tuple(np.split(g, ctx.splits, axis=ctx.axis))


# ---------------------------------------------------------------- linear maps


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


class Conv2d(Function):
    """Cross-correlation with zero padding. x: B×Cin×H×W, w: Cout×Cin×kh×kw, b: Cout."""

    kind = "conv2d"

    @staticmethod
    def forward(ctx, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape}, {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(
                f"conv2d: input channels (axis 1) {x.shape[1]} != weight in-channels {w.shape[1]}"
            )
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({w.shape[0]},)")
        B, C, H, W = x.shape
        O, _, kh, kw = w.shape
        Ho, Wo = _conv_out(H, kh, stride, padding), _conv_out(W, kw, stride, padding)
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
        wm = w.reshape(O, -1)
        out = cols @ wm.T + b
        ctx.cols, ctx.w, ctx.xshape = cols, w, xp.shape
        ctx.geom = (B, C, H, W, O, kh, kw, Ho, Wo, stride, padding)
        return out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    @staticmethod
    def backward(ctx, g):
        B, C, H, W, O, kh, kw, Ho, Wo, stride, padding = ctx.geom
        gr = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gr.T @ ctx.cols).reshape(ctx.w.shape)
        gb = gr.sum(axis=0)
        gcols = (gr @ ctx.w.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros(ctx.xshape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw, gb


class ScaledDot(Function):
    """Per-position dot product of queries with sampled keys.

    q: B×d×h×H×W, k: B×d×h×U×H×W -> B×h×U×H×W, scaled by ``scale``.
    """

    kind = "sqrt-scaled-dot"

    @staticmethod
    def forward(ctx, q, k, scale=1.0):
        if q.ndim != 5 or k.ndim != 6:
            raise ShapeError(f"sqrt-scaled-dot: expected 5-D query and 6-D keys, got {q.shape}, {k.shape}")
        if q.shape[:3] != k.shape[:3] or q.shape[3:] != k.shape[4:]:
            raise ShapeError(f"sqrt-scaled-dot: query {q.shape} not aligned with keys {k.shape}")
        ctx.q, ctx.k, ctx.scale = q, k, scale
        return scale * np.einsum("bdhyx,bdhuyx->bhuyx", q, k)

    @staticmethod
    def backward(ctx, g):
        s = ctx.scale
        gq = s * np.einsum("bhuyx,bdhuyx->bdhyx", g, ctx.k)
        gk = s * g[:, None] * ctx.q[:, :, :, None]
        return gq, gk


class WeightedSum(Function):
    """Per-position weighted sum over taps.

    w: B×h×U×H×W, v: B×d×h×U×H×W -> B×d×h×H×W.
    """

    kind = "matmul-per-position"

    @staticmethod
    def forward(ctx, w, v):
        if w.ndim != 5 or v.ndim != 6 or w.shape[0] != v.shape[0] or w.shape[1:] != v.shape[2:]:
            raise ShapeError(f"matmul-per-position: weights {w.shape} not aligned with values {v.shape}")
        ctx.w, ctx.v = w, v
        return np.einsum("bhuyx,bdhuyx->bdhyx", w, v)

    @staticmethod
    def backward(ctx, g):
        gw = np.einsum("bdhyx,bdhuyx->bhuyx", g, ctx.v)
        gv = g[:, :, :, None] * ctx.w[:, None]
        return gw, gv


class GridSample(Function):
    """Bilinear sampling of ``field`` (B×C×H×W) at pixel coords (B×U×2×Ho×Wo, order x, y).

    Returns B×C×U×Ho×Wo. Coordinates are clipped to the valid box; the
    coordinate adjoint is zero where clipping was active.
    """

    kind = "grid-sample-bilinear"

    @staticmethod
    def forward(ctx, field, coords):
        if field.ndim != 4 or coords.ndim != 5 or coords.shape[2] != 2:
            raise ShapeError(
                f"grid-sample-bilinear: expected field B×C×H×W and coords B×U×2×H×W, "
                f"got {field.shape}, {coords.shape}"
            )
        if field.shape[0] != coords.shape[0]:
            raise ShapeError(f"grid-sample-bilinear: batch axis 0 differs ({field.shape[0]} vs {coords.shape[0]})")
        B, C, H, W = field.shape
        x = coords[:, :, 0]
        y = coords[:, :, 1]
        inside_x = (x >= 0) & (x <= W - 1)
        inside_y = (y >= 0) & (y <= H - 1)
        x = np.clip(x, 0, W - 1)
        y = np.clip(y, 0, H - 1)
        x0 = np.clip(np.floor(x), 0, max(W - 2, 0)).astype(np.int64)
        y0 = np.clip(np.floor(y), 0, max(H - 2, 0)).astype(np.int64)
        x1 = np.minimum(x0 + 1, W - 1)
        y1 = np.minimum(y0 + 1, H - 1)
        wx = x - x0
        wy = y - y0
        flat = field.reshape(B, C, H * W).transpose(0, 2, 1)
        bidx = np.arange(B)[:, None]
        sshape = x.shape

        def gather(yy, xx):
            v = flat[bidx, (yy * W + xx).reshape(B, -1)]
            return np.moveaxis(v, 2, 1).reshape((B, C) + sshape[1:])

        f00, f01, f10, f11 = gather(y0, x0), gather(y0, x1), gather(y1, x0), gather(y1, x1)
        wx_, wy_ = wx[:, None], wy[:, None]
        out = (1 - wx_) * (1 - wy_) * f00 + wx_ * (1 - wy_) * f01 + (1 - wx_) * wy_ * f10 + wx_ * wy_ * f11
        ctx.saved = (f00, f01, f10, f11, wx, wy, x0, x1, y0, y1, inside_x, inside_y)
        ctx.fshape = field.shape
        return out

    @staticmethod
    def backward(ctx, g):
        f00, f01, f10, f11, wx, wy, x0, x1, y0, y1, inside_x, inside_y = ctx.saved
        B, C, H, W = ctx.fshape
        wx_, wy_ = wx[:, None], wy[:, None]
        dx = (1 - wy_) * (f01 - f00) + wy_ * (f11 - f10)
        dy = (1 - wx_) * (f10 - f00) + wx_ * (f11 - f01)
        gcoords = np.stack(
            [(g * dx).sum(axis=1) * inside_x, (g * dy).sum(axis=1) * inside_y], axis=2
        )
        gfield = np.zeros(B * C * H * W)
        base = (np.arange(B)[:, None] * C + np.arange(C)[None, :]) * (H * W)
        for yy, xx, wgt in (
            (y0, x0, (1 - wx_) * (1 - wy_)),
            (y0, x1, wx_ * (1 - wy_)),
            (y1, x0, (1 - wx_) * wy_),
            (y1, x1, wx_ * wy_),
        ):
            idx = (yy * W + xx).reshape(B, 1, -1) + base[:, :, None]
            gfield += np.bincount(idx.ravel(), weights=(g * wgt).reshape(B, C, -1).ravel(), minlength=gfield.size)
        return gfield.reshape(ctx.fshape), gcoords


OPS = {
    f.kind: f
    for f in (
        Add, Sub, Mul, Div, Neg, Exp, Square, Sqrt, LeakyReLU, Clamp, Sum, Mean, Softmax,
        Reshape, GetItem, Concat, Conv2d, ScaledDot, WeightedSum, GridSample,
    )
}


def forward_op(kind: str, inputs: Sequence[ArrayLike], attrs: Optional[dict] = None) -> Tensor:
    """Apply the op named ``kind`` to ``inputs``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(OPS)}") from None
    return fn.apply(*inputs, **(attrs or {}))


# ---------------------------------------------------------------- functional API


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def exp(a):
    return Exp.apply(a)


def square(a):
    return Square.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


def leaky_relu(a, slope=0.2):
    return LeakyReLU.apply(a, slope=slope)


def clamp(a, lo, hi):
    return Clamp.apply(a, lo=lo, hi=hi)


def sum_(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def softmax(a, axis=-1):
    return Softmax.apply(a, axis=axis)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(int(s) for s in shape))


def getitem(a, index):
    return GetItem.apply(a, index=index)


def concat(tensors, axis=1):
    return Concat.apply(*tensors, axis=axis)


def conv2d(x, w, b=None, stride=1, padding=0):
    if b is None:
        b = np.zeros(as_tensor(w).shape[0])
    return Conv2d.apply(x, w, b, stride=stride, padding=padding)


def scaled_dot(q, k, scale=1.0):
    return ScaledDot.apply(q, k, scale=scale)


def weighted_sum(w, v):
    return WeightedSum.apply(w, v)


def grid_sample(field, coords):
    return GridSample.apply(field, coords)


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Union[Tensor, np.ndarray], step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` may be a parameter tensor referenced inside ``f``; its data is
    perturbed in place and restored afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    t = x if isinstance(x, Tensor) else Tensor(np.array(x, dtype=np.float64))
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(as_tensor(f(t)).data.sum())
            flat[i] = orig - step
            fm = float(as_tensor(f(t)).data.sum())
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(t.shape)
