"""Declarative stage descriptions, the compiled model containers, and bookkeeping."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

from ..errors import ConfigError, SelectorError, ShapeError
from ..layers import BatchNorm, Context, EVAL, Module, Sequential, softmax
from ..tensor import Tensor, concat

BLOCK_KINDS = ("stem_conv", "max_pool", "resnet_bottleneck", "mbconv", "head_conv", "classifier", "dense")


@dataclass(frozen=True)
class StageSpec:
    block_kind: str
    kernel: int = 1
    stride: int = 1
    out_channels: int = 1
    repeats: int = 1
    expand_ratio: int | None = None
    se_ratio: float | None = None

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.out_channels < 1 or self.repeats < 1 or self.kernel < 1:
            raise ConfigError(f"non-positive extent in {self}")
        if (self.expand_ratio is not None) != (self.block_kind == "mbconv"):
            raise ConfigError("expand_ratio is required for mbconv stages and only for them")


@dataclass(frozen=True)
class ScalingConfig:
    width_mult: float = 1.0
    depth_mult: float = 1.0
    resolution: int = 224
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.width_mult <= 0 or self.depth_mult <= 0 or self.resolution < 1:
            raise ConfigError(f"scaling factors must be positive: {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1): {self}")


# Published compound-scaling coefficients of the EfficientNet family, plus a
# reduced "desk" variant used for CPU-scale training runs.
EFFICIENTNET_PRESETS = {
    "efficientnet-b0": ScalingConfig(1.0, 1.0, 224, 0.2),
    "efficientnet-b1": ScalingConfig(1.0, 1.1, 240, 0.2),
    "efficientnet-b2": ScalingConfig(1.1, 1.2, 260, 0.3),
    "efficientnet-b3": ScalingConfig(1.2, 1.4, 300, 0.3),
    "efficientnet-b4": ScalingConfig(1.4, 1.8, 380, 0.4),
    "efficientnet-b5": ScalingConfig(1.6, 2.2, 456, 0.4),
    "efficientnet-b6": ScalingConfig(1.8, 2.6, 528, 0.5),
    "efficientnet-b7": ScalingConfig(2.0, 3.1, 600, 0.5),
    "efficientnet-desk": ScalingConfig(0.25, 0.25, 64, 0.2),
}


class ParamCount(NamedTuple):
    total: int
    trainable: int
    non_trainable: int


class ModelGraph(Module):
    """Ordered stages compiled into layers.

    ``body`` holds one module per :class:`StageSpec`.  Image graphs end with a
    global average pool; when ``classes`` is set a classifier stage follows and
    the forward pass returns softmax probabilities, otherwise the flat feature
    vector.
    """

    def __init__(self, name: str, stages: list[StageSpec], body: list[Module], input_shape: tuple,
                 classes: int | None, pool: Module | None = None, classifier: Module | None = None,
                 config: dict | None = None):
        super().__init__()
        if len(stages) != len(body):
            raise ConfigError("one module per stage expected")
        self.name = name
        self.stages = list(stages)
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.config = dict(config or {})
        self.body = Sequential(*body)
        if pool is not None:
            self.pool = pool
        else:
            object.__setattr__(self, "pool", None)
        if classifier is not None:
            self.classifier = classifier
        else:
            object.__setattr__(self, "classifier", None)
        self.stage_shapes = self.trace_shapes()
        self.feature_width = self._features_shape((1,) + self.input_shape)[-1]

    def _features_shape(self, shape):
        shape = self.body.out_shape(shape)
        if self.pool is not None:
            shape = self.pool.out_shape(shape)
        if len(shape) != 2:
            raise ShapeError(f"{self.name} does not emit flat features: {shape}")
        return shape

    def trace_shapes(self, input_shape: tuple | None = None, batch: int = 1) -> list[tuple]:
        """Symbolic output shape after every stage (raises ShapeError on mismatch)."""
        shape = (batch,) + tuple(input_shape or self.input_shape)
        out = []
        for stage in self.body:
            shape = stage.out_shape(shape)
            out.append(shape)
        if self.pool is not None:
            shape = self.pool.out_shape(shape)
        if self.classifier is not None:
            out.append(self.classifier.out_shape(shape))
        return out

    def features(self, x: Tensor, ctx: Context = EVAL) -> Tensor:
        x = self.body(x, ctx)
        if self.pool is not None:
            x = self.pool(x, ctx)
        return x

    def forward(self, x: Tensor, ctx: Context = EVAL) -> Tensor:
        if tuple(x.shape[1:2]) != tuple(self.input_shape[:1]):
            raise ShapeError(f"{self.name} expects input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        h = self.features(x, ctx)
        if self.classifier is None:
            return h
        return softmax(self.classifier(h, ctx))

    def describe(self) -> dict:
        return {"name": self.name, "stages": [asdict(s) for s in self.stages],
                "input_channels": self.input_shape[0], "classes": self.classes,
                "head": self.classifier is not None, "config": self.config}

    def fingerprint(self) -> bytes:
        return _fingerprint(self.describe())

    def summary(self) -> str:
        return summary_table(self)


class FusionModel(Module):
    """Image branch and tabular branch concatenated into a 2-way softmax head.

    ``tabular_branch=None`` gives the image-only variant (zero-width tabular
    features) used as the CNN-alone arm of the comparison experiment.
    """

    def __init__(self, image_branch: ModelGraph, tabular_branch: ModelGraph | None, head: Sequential,
                 head_config: dict):
        super().__init__()
        if image_branch.classifier is not None:
            raise ShapeError("image branch must be headless (emit a flat feature vector)")
        if tabular_branch is not None and tabular_branch.classifier is not None:
            raise ShapeError("tabular branch must emit features, not class scores")
        self.image_branch = image_branch
        if tabular_branch is not None:
            self.tabular_branch = tabular_branch
        else:
            object.__setattr__(self, "tabular_branch", None)
        self.head = head
        self.head_config = dict(head_config)
        tab = tabular_branch.feature_width if tabular_branch is not None else 0
        self.head_input_width = image_branch.feature_width + tab
        head.out_shape((1, self.head_input_width))

    @property
    def tabular_dim(self) -> int:
        return 0 if self.tabular_branch is None else self.tabular_branch.input_shape[0]

    def forward(self, images: Tensor, features: Tensor | None = None, ctx: Context = EVAL) -> Tensor:
        img = self.image_branch.features(images, ctx)
        if self.tabular_branch is not None:
            if features is None or features.ndim != 2 or features.shape[1] != self.tabular_dim:
                got = None if features is None else features.shape
                raise ShapeError(f"expected features (N, {self.tabular_dim}), got {got}")
            if features.shape[0] != images.shape[0]:
                raise ShapeError("image and feature batch sizes differ")
            h = concat([img, self.tabular_branch.features(features, ctx)], axis=1)
        else:
            h = img
        return softmax(self.head(h, ctx))

    def __call__(self, images, features=None, ctx: Context = EVAL):
        return self.forward(images, features, ctx)

    def describe(self) -> dict:
        return {"kind": "fusion", "image": self.image_branch.describe(),
                "tabular": None if self.tabular_branch is None else self.tabular_branch.describe(),
                "head": self.head_config}

    def fingerprint(self) -> bytes:
        return _fingerprint(self.describe())

    def branches(self) -> dict[str, Module]:
        out = {"image_branch": self.image_branch, "head": self.head}
        if self.tabular_branch is not None:
            out["tabular_branch"] = self.tabular_branch
        return out


def _fingerprint(desc: dict) -> bytes:
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode("utf-8")).digest()


def _module_counts(module: Module, respect_freeze: bool) -> ParamCount:
    trainable = frozen = 0
    for _, p in module.named_parameters():
        if respect_freeze and not p.trainable:
            frozen += p.size
        else:
            trainable += p.size
    stats = sum(b.size for _, b in module.named_buffers())
    return ParamCount(trainable + frozen + stats, trainable, frozen + stats)


def count_params(model: Module, respect_freeze: bool = False) -> ParamCount:
    """(total, trainable, non_trainable) for any module.

    By default the batchnorm running statistics are the only non-trainable
    values.  With ``respect_freeze`` parameters frozen by :func:`set_trainable`
    move to the non-trainable side as well.
    """
    return _module_counts(model, respect_freeze)


def bn_statistics_count(model: Module) -> int:
    return sum(b.size for _, b in model.named_buffers())


def _resolve(model: Module, selector: str) -> Module | None:
    if selector == "all":
        return model
    if isinstance(model, FusionModel):
        return model.branches().get(selector)
    if isinstance(model, ModelGraph) and selector == "head":
        return model.classifier
    return None


def set_trainable(model: Module, selector: str, flag: bool, freeze_bn_stats: bool = True) -> int:
    """Set the trainable flag on every parameter under ``selector``.

    Freezing also freezes batchnorm running statistics of the selected layers
    unless ``freeze_bn_stats`` is False.  Returns the number of parameter values
    touched.
    """
    target = _resolve(model, selector)
    params = [] if target is None else target.parameters()
    if not params:
        raise SelectorError(f"selector {selector!r} matches no parameters")
    for p in params:
        p.trainable = flag
    for _, m in target.named_modules():
        if isinstance(m, BatchNorm):
            m.stats_frozen = (not flag) and freeze_bn_stats
    return sum(p.size for p in params)


def _stage_params(module: Module) -> int:
    return count_params(module).total


def summary_table(model: ModelGraph) -> str:
    rows = [("stage", "kind", "kernel", "stride", "channels", "repeats", "output", "params")]
    for i, (spec, mod, shape) in enumerate(zip(model.stages, model.body, model.stage_shapes)):
        rows.append((str(i + 1), spec.block_kind, str(spec.kernel), str(spec.stride),
                     str(spec.out_channels), str(spec.repeats), "x".join(map(str, shape[1:])),
                     f"{_stage_params(mod):,}"))
    if model.classifier is not None:
        rows.append((str(len(model.stages) + 1), "classifier", "-", "-", str(model.classes), "1",
                     str(model.classes), f"{_stage_params(model.classifier):,}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
