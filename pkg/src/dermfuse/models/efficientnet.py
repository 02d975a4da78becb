"""EfficientNet family built from the B0 stage table and a ScalingConfig."""
from __future__ import annotations

import math

from ..errors import ConfigError
from ..layers import (ConvBNAct, Dense, Dropout, GlobalAvgPool, Module, Sequential, SqueezeExcite,
                      drop_connect)
from ..rng import SeededRng
from .graph import ModelGraph, ScalingConfig, StageSpec

STEM_CHANNELS = 32
HEAD_CHANNELS = 1280
# (expand_ratio, kernel, stride, out_channels, repeats) for stages 2-8 of B0
B0_BLOCKS = [
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
]
SE_RATIO = 0.25
DROP_CONNECT_SURVIVAL = 0.8


def make_divisible(value: float, divisor: int = 8) -> int:
    """Round to the nearest multiple of ``divisor`` without losing more than 10%."""
    new = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


def scale_width(channels: int, width_mult: float) -> int:
    return make_divisible(channels * width_mult)


def scale_depth(repeats: int, depth_mult: float) -> int:
    return int(math.ceil(repeats * depth_mult))


class MBConv(Module):
    """Mobile inverted bottleneck: [1x1 expand] -> depthwise kxk -> SE -> 1x1 project.

    The expansion conv is absent when ``expand_ratio == 1``.  The identity skip
    (with per-sample drop-connect on the branch) exists only for stride-1
    blocks whose input and output widths agree.
    """

    def __init__(self, c_in: int, c_out: int, expand_ratio: int, kernel: int, stride: int,
                 se_ratio: float | None = SE_RATIO, survival_p: float = DROP_CONNECT_SURVIVAL,
                 rng: SeededRng | None = None):
        super().__init__()
        hidden = c_in * expand_ratio
        self.c_in, self.c_out, self.hidden = c_in, c_out, hidden
        self.survival_p = survival_p
        if expand_ratio != 1:
            self.expand = ConvBNAct(c_in, hidden, 1, act="swish", rng=rng)
        else:
            object.__setattr__(self, "expand", None)
        self.depthwise = ConvBNAct(hidden, hidden, kernel, stride, groups=hidden, act="swish", rng=rng)
        if se_ratio:
            self.se = SqueezeExcite(hidden, max(1, int(round(c_in * se_ratio))), rng=rng)
        else:
            object.__setattr__(self, "se", None)
        self.project = ConvBNAct(hidden, c_out, 1, act=None, rng=rng)
        self.has_skip = stride == 1 and c_in == c_out

    def forward(self, x, ctx):
        h = x if self.expand is None else self.expand(x, ctx)
        h = self.depthwise(h, ctx)
        if self.se is not None:
            h = self.se(h, ctx)
        h = self.project(h, ctx)
        if self.has_skip:
            return x + drop_connect(h, self.survival_p, ctx)
        return h

    def out_shape(self, in_shape):
        s = in_shape if self.expand is None else self.expand.out_shape(in_shape)
        s = self.depthwise.out_shape(s)
        if self.se is not None:
            s = self.se.out_shape(s)
        return self.project.out_shape(s)


def efficientnet_stages(scaling: ScalingConfig, classes: int | None = None) -> list[StageSpec]:
    stages = [StageSpec("stem_conv", 3, 2, scale_width(STEM_CHANNELS, scaling.width_mult))]
    for e, k, s, c, n in B0_BLOCKS:
        stages.append(StageSpec("mbconv", k, s, scale_width(c, scaling.width_mult),
                                scale_depth(n, scaling.depth_mult), expand_ratio=e, se_ratio=SE_RATIO))
    stages.append(StageSpec("head_conv", 1, 1, scale_width(HEAD_CHANNELS, scaling.width_mult)))
    return stages


def build_efficientnet(scaling: ScalingConfig | None = None, classes: int | None = 1000,
                       input_channels: int = 3, survival_p: float = DROP_CONNECT_SURVIVAL,
                       seed: int = 0, name: str = "efficientnet") -> ModelGraph:
    """Scaled EfficientNet; ``classes=None`` builds the headless feature extractor."""
    scaling = scaling or ScalingConfig()
    if not isinstance(scaling, ScalingConfig):
        raise ConfigError(f"expected ScalingConfig, got {scaling!r}")
    if classes is not None and classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    rng = SeededRng(seed)
    stages = efficientnet_stages(scaling, classes)
    stem = stages[0]
    body: list[Module] = [ConvBNAct(input_channels, stem.out_channels, 3, 2, act="swish", rng=rng)]
    c_in = stem.out_channels
    for spec in stages[1:-1]:
        blocks = []
        for r in range(spec.repeats):
            blocks.append(MBConv(c_in, spec.out_channels, spec.expand_ratio, spec.kernel,
                                 spec.stride if r == 0 else 1, spec.se_ratio, survival_p, rng=rng))
            c_in = spec.out_channels
        body.append(Sequential(*blocks))
    head = stages[-1]
    body.append(ConvBNAct(c_in, head.out_channels, 1, act="swish", rng=rng))
    classifier = None
    if classes is not None:
        classifier = Sequential(Dropout(scaling.dropout_rate), Dense(head.out_channels, classes, rng=rng))
    cfg = {"width_mult": scaling.width_mult, "depth_mult": scaling.depth_mult,
           "resolution": scaling.resolution, "dropout_rate": scaling.dropout_rate, "survival_p": survival_p}
    res = scaling.resolution
    return ModelGraph(name, stages, body, (input_channels, res, res), classes,
                      pool=GlobalAvgPool(), classifier=classifier, config=cfg)
