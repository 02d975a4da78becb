from .efficientnet import MBConv, build_efficientnet, make_divisible
from .fusion import build_fnn, build_fusion
from .graph import (EFFICIENTNET_PRESETS, FusionModel, ModelGraph, ParamCount, ScalingConfig, StageSpec,
                    bn_statistics_count, count_params, set_trainable, summary_table)
from .resnet import Bottleneck, build_resnet50

ARCHITECTURES = ("resnet50",) + tuple(EFFICIENTNET_PRESETS)


def build_image_model(arch: str, classes: int | None, input_channels: int = 3, seed: int = 0,
                      scaling: ScalingConfig | None = None) -> ModelGraph:
    """Build a named image architecture (or a custom-scaled EfficientNet)."""
    from ..errors import ConfigError
    if arch == "resnet50":
        return build_resnet50(classes, input_channels, seed=seed)
    if scaling is None:
        if arch not in EFFICIENTNET_PRESETS:
            raise ConfigError(f"unknown architecture {arch!r}; valid: {', '.join(ARCHITECTURES)}")
        scaling = EFFICIENTNET_PRESETS[arch]
    return build_efficientnet(scaling, classes, input_channels, seed=seed, name=arch)


__all__ = [
    "ARCHITECTURES", "Bottleneck", "EFFICIENTNET_PRESETS", "FusionModel", "MBConv", "ModelGraph",
    "ParamCount", "ScalingConfig", "StageSpec", "bn_statistics_count", "build_efficientnet",
    "build_fnn", "build_fusion", "build_image_model", "build_resnet50", "count_params",
    "make_divisible", "set_trainable", "summary_table",
]
