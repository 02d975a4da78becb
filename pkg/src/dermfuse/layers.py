"""Layer vocabulary: activations, dense, batchnorm, dropout, drop-connect, pooling, SE.

Functional forms take the input plus a layer object that owns the parameters
(``LayerParams`` in the docs: named parameter tensors plus named non-trainable
buffers).  The :class:`Module` classes wrap those functions and add symbolic
shape propagation and parameter bookkeeping.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, InvalidProbabilityError, ShapeError
from .rng import SeededRng
from .tensor import Tensor


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class Context:
    """Per-forward settings: mode plus the rng that draws dropout masks.

    Re-creating the rng from the same seed before each forward replays the
    same masks, which is how gradient checks freeze stochastic layers.
    """
    mode: Mode = Mode.EVAL
    rng: SeededRng | None = None

    @property
    def training(self) -> bool:
        return self.mode == Mode.TRAIN

    def require_rng(self) -> SeededRng:
        if self.rng is None:
            raise ConfigError("train-mode forward needs a SeededRng for dropout masks")
        return self.rng


EVAL = Context(Mode.EVAL)


class Parameter(Tensor):
    """Trainable tensor; ``trainable=False`` freezes it (no grad, optimizer skips it)."""

    def __init__(self, data, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        arr = np.array(value, dtype=np.float64)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every stored array by dotted name: parameters first, then buffers."""
        out = {n: p.data for n, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, x, ctx: Context = EVAL):
        return self.forward(x, ctx)

    def forward(self, x, ctx: Context):
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError(type(self).__name__)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            self._modules[str(i)] = layer

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def forward(self, x, ctx):
        for layer in self.layers:
            x = layer(x, ctx)
        return x

    def out_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return in_shape


# -- activations -------------------------------------------------------------------

relu = T.relu
swish = T.swish
sigmoid = T.sigmoid


def softmax(x: Tensor) -> Tensor:
    """Max-shifted softmax over the last axis."""
    return T.softmax(x, axis=-1)


_ACTIVATIONS = {"relu": T.relu, "swish": T.swish, "sigmoid": T.sigmoid, None: None}


class Activation(Module):
    def __init__(self, kind: str):
        super().__init__()
        if kind not in _ACTIVATIONS or kind is None:
            raise ConfigError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x, ctx):
        return _ACTIVATIONS[self.kind](x)

    def out_shape(self, in_shape):
        return in_shape


class Softmax(Module):
    def forward(self, x, ctx):
        return softmax(x)

    def out_shape(self, in_shape):
        return in_shape


# -- dense -------------------------------------------------------------------------

def dense(x: Tensor, params: "Dense") -> Tensor:
    """x @ W + b with W stored as (F_in, F_out)."""
    if x.ndim != 2 or x.shape[1] != params.weight.shape[0]:
        raise ShapeError(f"dense expects (N, {params.weight.shape[0]}), got {x.shape}")
    out = T.matmul(x, params.weight)
    if params.bias is not None:
        out = out + params.bias
    return out


class Dense(Module):
    def __init__(self, f_in: int, f_out: int, bias: bool = True, rng: SeededRng | None = None):
        super().__init__()
        rng = rng or SeededRng(0)
        bound = 1.0 / math.sqrt(f_in)
        self.f_in, self.f_out = f_in, f_out
        self.weight = Parameter(rng.uniform(-bound, bound, (f_in, f_out)))
        if bias:
            self.bias = Parameter(rng.uniform(-bound, bound, (f_out,)))
        else:
            self.bias = None

    def forward(self, x, ctx):
        return dense(x, self)

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.f_in:
            raise ShapeError(f"dense({self.f_in}->{self.f_out}) cannot take {in_shape}")
        return (in_shape[0], self.f_out)


# -- convolution ---------------------------------------------------------------------

class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int | None = None,
                 groups: int = 1, bias: bool = False, rng: SeededRng | None = None):
        super().__init__()
        rng = rng or SeededRng(0)
        if c_in % groups or c_out % groups:
            raise ConfigError(f"channels {c_in}->{c_out} not divisible by groups {groups}")
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_in = (c_in // groups) * kernel * kernel
        self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), (c_out, c_in // groups, kernel, kernel)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x, ctx):
        out = T.conv2d(x, self.weight, self.stride, self.padding, self.groups)
        if self.bias is not None:
            out = out + T.reshape(self.bias, (1, self.c_out, 1, 1))
        return out

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {c}")
        if self.kernel > h + 2 * self.padding or self.kernel > w + 2 * self.padding:
            raise ShapeError(f"kernel {self.kernel} does not fit {h}x{w} with padding {self.padding}")
        return (n, self.c_out, T.conv_out_size(h, self.kernel, self.stride, self.padding),
                T.conv_out_size(w, self.kernel, self.stride, self.padding))


# -- batch normalisation ---------------------------------------------------------------

def batchnorm(x: Tensor, params: "BatchNorm", mode: Mode | Context,
              momentum: float | None = None, epsilon: float | None = None) -> Tensor:
    """Per-channel standardisation over the batch (and spatial) axes, then gamma/beta.

    Train mode normalises with batch statistics and folds them into the running
    estimates as ``running = momentum * running + (1 - momentum) * batch`` (the
    running variance uses the unbiased batch variance).  Eval mode, and train
    mode on a layer whose statistics are frozen, use the running estimates.
    """
    mode = mode.mode if isinstance(mode, Context) else Mode(mode)
    momentum = params.momentum if momentum is None else momentum
    eps = params.epsilon if epsilon is None else epsilon
    if x.ndim not in (2, 4) or x.shape[1] != params.channels:
        raise ShapeError(f"batchnorm over {params.channels} channels got input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, params.channels) if x.ndim == 2 else (1, params.channels, 1, 1)
    gamma = params.gamma.data.reshape(bshape)
    beta = params.beta.data.reshape(bshape)
    xd = x.data

    if mode == Mode.TRAIN and not params.stats_frozen:
        m = xd.size // params.channels
        mean = xd.mean(axis=axes, keepdims=True)
        centered = xd - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
        unbiased = var * (m / (m - 1)) if m > 1 else var
        params.running_mean[...] = momentum * params.running_mean + (1 - momentum) * mean.reshape(-1)
        params.running_var[...] = momentum * params.running_var + (1 - momentum) * unbiased.reshape(-1)

        def bw(g):
            gg = gb = gx = None
            if params.gamma.requires_grad:
                gg = (g * xhat).sum(axis=axes)
            if params.beta.requires_grad:
                gb = g.sum(axis=axes)
            if x.requires_grad:
                dxhat = g * gamma
                gx = inv / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return gx, gg, gb
    else:
        inv = 1.0 / np.sqrt(params.running_var.reshape(bshape) + eps)
        xhat = (xd - params.running_mean.reshape(bshape)) * inv

        def bw(g):
            gg = (g * xhat).sum(axis=axes) if params.gamma.requires_grad else None
            gb = g.sum(axis=axes) if params.beta.requires_grad else None
            gx = g * gamma * inv if x.requires_grad else None
            return gx, gg, gb

    return Tensor.from_op(gamma * xhat + beta, "batchnorm", (x, params.gamma, params.beta), bw)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, epsilon: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.stats_frozen = False
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x, ctx):
        return batchnorm(x, self, ctx.mode)

    def out_shape(self, in_shape):
        if in_shape[1] != self.channels:
            raise ShapeError(f"batchnorm over {self.channels} channels got {in_shape}")
        return in_shape


# -- stochastic regularisers ---------------------------------------------------------------

def dropout(x: Tensor, p: float, mode: Mode | Context, rng: SeededRng | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbabilityError(f"dropout probability must be in [0, 1), got {p}")
    if isinstance(mode, Context):
        rng = rng or mode.rng
        mode = mode.mode
    if Mode(mode) == Mode.EVAL or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a SeededRng")
    mask = rng.bernoulli(1.0 - p, x.shape) / (1.0 - p)
    return x * mask


def drop_connect(x: Tensor, survival_p: float, mode: Mode | Context, rng: SeededRng | None = None) -> Tensor:
    """Per-sample stochastic depth on a residual branch: keep with survival_p, rescale."""
    if not 0.0 < survival_p <= 1.0:
        raise InvalidProbabilityError(f"survival probability must be in (0, 1], got {survival_p}")
    if isinstance(mode, Context):
        rng = rng or mode.rng
        mode = mode.mode
    if Mode(mode) == Mode.EVAL or survival_p == 1.0:
        return x
    if rng is None:
        raise ConfigError("train-mode drop-connect needs a SeededRng")
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    mask = rng.bernoulli(survival_p, shape) / survival_p
    return x * mask


class Dropout(Module):
    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise InvalidProbabilityError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, ctx):
        return dropout(x, self.p, ctx.mode, ctx.rng)

    def out_shape(self, in_shape):
        return in_shape


# -- pooling ---------------------------------------------------------------------------

def pool(x: Tensor, kind: str, kernel=2, stride=None, padding=0) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"pool expects (N, C, H, W), got {x.shape}")
    if kind == "max":
        return T.max_pool2d(x, kernel, stride, padding)
    if kind == "avg":
        return T.avg_pool2d(x, kernel, stride, padding)
    if kind == "global_avg":
        return T.reduce("mean", x, (2, 3), keepdims=True)
    raise ConfigError(f"unknown pool kind {kind!r}")


class MaxPool(Module):
    def __init__(self, kernel: int, stride: int, padding: int = 0):
        super().__init__()
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x, ctx):
        return pool(x, "max", self.kernel, self.stride, self.padding)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if self.kernel > h + 2 * self.padding or self.kernel > w + 2 * self.padding:
            raise ShapeError(f"pool window {self.kernel} does not fit {h}x{w}")
        return (n, c, T.conv_out_size(h, self.kernel, self.stride, self.padding),
                T.conv_out_size(w, self.kernel, self.stride, self.padding))


class GlobalAvgPool(Module):
    """Global average pool flattened to (N, C)."""

    def forward(self, x, ctx):
        return T.reshape(T.reduce("mean", x, (2, 3)), (x.shape[0], x.shape[1]))

    def out_shape(self, in_shape):
        return (in_shape[0], in_shape[1])


# -- squeeze and excitation -----------------------------------------------------------------

def se_block(x: Tensor, params: "SqueezeExcite") -> Tensor:
    """Channel gate: pool -> dense -> swish -> dense -> sigmoid -> rescale x."""
    n, c = x.shape[0], x.shape[1]
    if c != params.channels:
        raise ShapeError(f"SE block over {params.channels} channels got {x.shape}")
    s = T.reshape(T.reduce("mean", x, (2, 3)), (n, c))
    s = T.swish(dense(s, params.reduce))
    gate = T.sigmoid(dense(s, params.expand))
    return x * T.reshape(gate, (n, c, 1, 1))


class SqueezeExcite(Module):
    def __init__(self, channels: int, squeeze_channels: int, rng: SeededRng | None = None):
        super().__init__()
        if squeeze_channels < 1:
            raise ConfigError("squeeze_channels must be >= 1")
        rng = rng or SeededRng(0)
        self.channels = channels
        self.squeeze_channels = squeeze_channels
        self.reduce = Dense(channels, squeeze_channels, rng=rng)
        self.expand = Dense(squeeze_channels, channels, rng=rng)

    def forward(self, x, ctx):
        return se_block(x, self)

    def out_shape(self, in_shape):
        if in_shape[1] != self.channels:
            raise ShapeError(f"SE block over {self.channels} channels got {in_shape}")
        return in_shape


class ConvBNAct(Module):
    """Conv (no bias) followed by batchnorm and an optional activation."""

    def __init__(self, c_in, c_out, kernel, stride=1, groups=1, act: str | None = "relu",
                 rng: SeededRng | None = None, padding: int | None = None):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, kernel, stride, padding, groups, rng=rng)
        self.bn = BatchNorm(c_out)
        self.act = act

    def forward(self, x, ctx):
        x = self.bn(self.conv(x, ctx), ctx)
        return _ACTIVATIONS[self.act](x) if self.act else x

    def out_shape(self, in_shape):
        return self.bn.out_shape(self.conv.out_shape(in_shape))
