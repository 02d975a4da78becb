"""ResNet-50: 7x7/2 stem, 3x3/2 max pool, four bottleneck stages, pooled softmax head."""
from __future__ import annotations

from ..errors import ConfigError
from ..layers import (ConvBNAct, Dense, Dropout, GlobalAvgPool, MaxPool, Module, Sequential)
from ..rng import SeededRng
from ..tensor import relu
from .graph import ModelGraph, StageSpec

EXPANSION = 4
RESNET50_LAYOUT = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]  # (base width, repeats, entry stride)


class Bottleneck(Module):
    """1x1 reduce -> 3x3 (carries the stride) -> 1x1 expand, plus shortcut.

    The shortcut is the identity when shapes agree and a 1x1 projection with
    batchnorm otherwise.
    """

    def __init__(self, c_in: int, width: int, stride: int = 1, rng: SeededRng | None = None):
        super().__init__()
        c_out = width * EXPANSION
        self.reduce = ConvBNAct(c_in, width, 1, act="relu", rng=rng)
        self.spatial = ConvBNAct(width, width, 3, stride, act="relu", rng=rng)
        self.expand = ConvBNAct(width, c_out, 1, act=None, rng=rng)
        if stride != 1 or c_in != c_out:
            self.shortcut = ConvBNAct(c_in, c_out, 1, stride, act=None, rng=rng)
        else:
            object.__setattr__(self, "shortcut", None)

    def forward(self, x, ctx):
        branch = self.expand(self.spatial(self.reduce(x, ctx), ctx), ctx)
        skip = x if self.shortcut is None else self.shortcut(x, ctx)
        return relu(branch + skip)

    def out_shape(self, in_shape):
        out = self.expand.out_shape(self.spatial.out_shape(self.reduce.out_shape(in_shape)))
        skip = in_shape if self.shortcut is None else self.shortcut.out_shape(in_shape)
        if skip != out:
            raise ConfigError(f"bottleneck branch {out} and shortcut {skip} disagree")
        return out


def build_resnet50(classes: int | None = 1000, input_channels: int = 3, dropout_p: float = 0.5,
                   seed: int = 0, input_extent: int = 224) -> ModelGraph:
    """ResNet-50; ``classes=None`` builds the headless feature extractor (2048 wide)."""
    if classes is not None and classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    rng = SeededRng(seed)
    stages = [StageSpec("stem_conv", 7, 2, 64), StageSpec("max_pool", 3, 2, 64)]
    body: list[Module] = [ConvBNAct(input_channels, 64, 7, 2, act="relu", rng=rng, padding=3),
                          MaxPool(3, 2, 1)]
    c_in = 64
    for width, repeats, stride in RESNET50_LAYOUT:
        blocks = []
        for r in range(repeats):
            blocks.append(Bottleneck(c_in, width, stride if r == 0 else 1, rng=rng))
            c_in = width * EXPANSION
        stages.append(StageSpec("resnet_bottleneck", 3, stride, c_in, repeats))
        body.append(Sequential(*blocks))
    classifier = None
    if classes is not None:
        classifier = Sequential(Dropout(dropout_p), Dense(c_in, classes, rng=rng))
    return ModelGraph("resnet50", stages, body, (input_channels, input_extent, input_extent), classes,
                      pool=GlobalAvgPool(), classifier=classifier,
                      config={"dropout_p": dropout_p})
