"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` carrying a
:class:`Node` that remembers its inputs and a closure mapping the output
gradient to input gradients.  :func:`backward` linearises the graph into a
:class:`Tape` (topological order) and walks it once in reverse.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import AxisError, BroadcastError, NoGraphError, RankError, ShapeError
from .rng import SeededRng

DTYPE = np.float64

_grad_enabled = True


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


def is_grad_enabled() -> bool:
    return _grad_enabled


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_op(cls, data, op: str, inputs: Sequence["Tensor"], backward_fn) -> "Tensor":
        """Wrap ``data`` as the output of ``op``; records a node if any input needs grad."""
        out = cls(data)
        if _grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._node = Node(op, tuple(inputs), backward_fn)
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, retain_graph: bool = False) -> dict:
        return backward(self, retain_graph=retain_graph)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- creation -------------------------------------------------------------------

def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(_check_shape(shape)), requires_grad)


def constant(shape, value: float, requires_grad=False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(value)), requires_grad)


def uniform(shape, low: float, high: float, seed: int | SeededRng, requires_grad=False) -> Tensor:
    shape = _check_shape(shape)
    if not low < high:
        raise ValueError(f"uniform requires low < high, got [{low}, {high})")
    rng = seed if isinstance(seed, SeededRng) else SeededRng(seed)
    return Tensor(rng.uniform(low, high, shape), requires_grad)


def normal(shape, mean: float, std: float, seed: int | SeededRng, requires_grad=False) -> Tensor:
    shape = _check_shape(shape)
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    rng = seed if isinstance(seed, SeededRng) else SeededRng(seed)
    return Tensor(rng.normal(mean, std, shape), requires_grad)


def tensor_create(shape, init: str = "zeros", **kw) -> Tensor:
    """Dispatch on ``init`` in {zeros, constant, uniform, normal}."""
    if init == "zeros":
        return zeros(shape)
    if init == "constant":
        return constant(shape, kw["value"])
    if init == "uniform":
        return uniform(shape, kw["low"], kw["high"], kw["seed"])
    if init == "normal":
        return normal(shape, kw["mean"], kw["std"], kw["seed"])
    raise ValueError(f"unknown init {init!r}")


# -- backward -------------------------------------------------------------------

class Tape:
    """Recorded nodes in topological order (inputs before consumers)."""

    def __init__(self, tensors: list[Tensor]):
        self.tensors = tensors

    @classmethod
    def from_output(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
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
                for inp in t._node.inputs:
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        return cls(order)

    @property
    def nodes(self) -> list[Node]:
        return [t._node for t in self.tensors if t._node is not None]

    def __len__(self) -> int:
        return len(self.tensors)


def backward(loss: Tensor, retain_graph: bool = False) -> dict:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Returns a mapping leaf tensor -> gradient array.  The graph is released
    afterwards unless ``retain_graph`` is set.
    """
    if loss.data.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise NoGraphError("loss was not produced by recorded operations")
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in reversed(tape.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            leaves[t] = t.grad
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ShapeError(f"{node.op}: gradient shape {ig.shape} != input shape {inp.shape}")
            prev = grads.get(id(inp))
            grads[id(inp)] = ig if prev is None else prev + ig
        if not retain_graph:
            t._node = None
    return leaves


# -- elementwise ----------------------------------------------------------------

def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise BroadcastError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    return Tensor.from_op(a.data + b.data, "add", (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)
    return Tensor.from_op(a.data - b.data, "sub", (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data / b.data, "div", (a, b), bw)


def elementwise(op: str, a, b) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data >= floor
    return Tensor.from_op(np.where(keep, a.data, floor), "clamp_min", (a,),
                          lambda g: (g * keep,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return Tensor.from_op(a.data * pos, "relu", (a,), lambda g: (g * pos,))


_sigmoid = expit


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor.from_op(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def swish(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s
    return Tensor.from_op(out, "swish", (a,), lambda g: (g * (s + out * (1.0 - s)),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, "softmax", (a,), bw)


# -- shape ----------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor.from_op(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor.from_op(out, "concat", tensors, bw)


def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AxisError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise AxisError(f"duplicate axes {axes}")
    return tuple(sorted(out))


def reduce(op: str, a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None)."""
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if op == "sum":
        out = a.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = a.data.sum(axis=axes, keepdims=keepdims) / count
        scale = 1.0 / count
    else:
        raise ValueError(f"unknown reduction {op!r}")
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return Tensor.from_op(out, op, (a,), bw)


# -- linear algebra -----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data @ b.data, "matmul", (a, b), bw)


def _pair(v) -> tuple:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding and channel groups.

    x: (N, C, H, W); w: (O, C/groups, kh, kw).  ``groups == C == O`` is the
    depthwise case.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    N, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if sh < 1 or sw < 1 or ph < 0 or pw < 0 or groups < 1:
        raise ShapeError("stride must be positive and padding non-negative")
    if C % groups or O % groups:
        raise ShapeError(f"channels {C}->{O} not divisible by groups={groups}")
    if Cg != C // groups:
        raise ShapeError(f"weight expects {Cg} channels per group, input provides {C // groups}")
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise ShapeError(f"kernel {kh}x{kw} does not fit padded input {H + 2 * ph}x{W + 2 * pw}")
    Ho, Wo = conv_out_size(H, kh, sh, ph), conv_out_size(W, kw, sw, pw)
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd

    if kh == 1 and kw == 1 and groups == 1:
        xs = xp[:, :, ::sh, ::sw] if (sh > 1 or sw > 1) else xp
        xs = xs[:, :, :Ho, :Wo]
        cols = xs.reshape(N, C, Ho * Wo)
        wm = wd.reshape(O, C)
        out = np.matmul(wm, cols).reshape(N, O, Ho, Wo)

        def bw(g):
            g3 = g.reshape(N, O, Ho * Wo)
            gw = gx = None
            if w.requires_grad:
                gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
            if x.requires_grad:
                gxs = np.matmul(wm.T, g3).reshape(N, C, Ho, Wo)
                gxp = np.zeros_like(xp)
                gxp[:, :, 0:sh * Ho:sh, 0:sw * Wo:sw] = gxs
                gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
            return gx, gw

        return Tensor.from_op(out, "conv2d", (x, w), bw)

    def tap(arr, i, j):
        return arr[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]

    if groups == C and O == C:
        wk = wd[:, 0]
        out = np.zeros((N, C, Ho, Wo))
        for i in range(kh):
            for j in range(kw):
                out += tap(xp, i, j) * wk[None, :, i, j, None, None]

        def bw(g):
            gw = gx = None
            if w.requires_grad:
                gw = np.empty_like(wd)
                for i in range(kh):
                    for j in range(kw):
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, tap(xp, i, j))
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        tap(gxp, i, j)[...] += g * wk[None, :, i, j, None, None]
                gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
            return gx, gw

        return Tensor.from_op(out, "conv2d", (x, w), bw)

    # general grouped im2col: windows (N, C, Ho, Wo, kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    Og = O // groups
    outs = []
    for gi in range(groups):
        cols = win[:, gi * Cg:(gi + 1) * Cg]
        wg = wd[gi * Og:(gi + 1) * Og]
        outs.append(np.tensordot(cols, wg, axes=([1, 4, 5], [1, 2, 3])))  # N,Ho,Wo,Og
    out = np.concatenate(outs, axis=3).transpose(0, 3, 1, 2) if groups > 1 else outs[0].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        gw = gx = None
        if w.requires_grad:
            gw = np.empty_like(wd)
            for gi in range(groups):
                cols = win[:, gi * Cg:(gi + 1) * Cg]
                gg = g[:, gi * Og:(gi + 1) * Og]
                gw[gi * Og:(gi + 1) * Og] = np.tensordot(gg, cols, axes=([0, 2, 3], [0, 2, 3]))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for gi in range(groups):
                gg = g[:, gi * Og:(gi + 1) * Og]
                wg = wd[gi * Og:(gi + 1) * Og]
                dcols = np.tensordot(gg, wg, axes=([1], [0]))  # N,Ho,Wo,Cg,kh,kw
                dst = gxp[:, gi * Cg:(gi + 1) * Cg]
                for i in range(kh):
                    for j in range(kw):
                        tap(dst, i, j)[...] += dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
        return gx, gw

    return Tensor.from_op(out, "conv2d", (x, w), bw)


def max_pool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    ph, pw = _pair(padding)
    N, C, H, W = x.shape
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise ShapeError(f"pool window {kh}x{kw} does not fit padded input")
    Ho, Wo = conv_out_size(H, kh, sh, ph), conv_out_size(W, kw, sw, pw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    flat = win.reshape(N, C, Ho, Wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                sel = arg == i * kw + j
                gxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += g * sel
        return (gxp[:, :, ph:ph + H, pw:pw + W],)

    return Tensor.from_op(out, "max_pool2d", (x,), bw)


def avg_pool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    """Window mean; zero padding counts toward the divisor."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    ph, pw = _pair(padding)
    N, C, H, W = x.shape
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise ShapeError(f"pool window {kh}x{kw} does not fit padded input")
    Ho, Wo = conv_out_size(H, kh, sh, ph), conv_out_size(W, kw, sw, pw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    out = np.zeros((N, C, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]
    out /= kh * kw

    def bw(g):
        gxp = np.zeros(xp.shape)
        gs = g / (kh * kw)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw] += gs
        return (gxp[:, :, ph:ph + H, pw:pw + W],)

    return Tensor.from_op(out, "avg_pool2d", (x,), bw)
