"""Tabular feed-forward branch and the two-branch fusion classifier."""
from __future__ import annotations

from ..errors import ConfigError
from ..layers import Activation, BatchNorm, Dense, Dropout, Sequential
from ..rng import SeededRng
from .graph import FusionModel, ModelGraph, StageSpec

DEFAULT_FNN_HIDDEN = (64, 32)
DEFAULT_HEAD_HIDDEN = 128


def _dense_block(f_in: int, f_out: int, dropout_p: float, rng: SeededRng) -> Sequential:
    return Sequential(Dense(f_in, f_out, rng=rng), BatchNorm(f_out), Activation("relu"), Dropout(dropout_p))


def build_fnn(input_dim: int, hidden=DEFAULT_FNN_HIDDEN, dropout_p: float = 0.3, seed: int = 0) -> ModelGraph:
    """dense -> batchnorm -> relu -> dropout per hidden width; emits the last hidden vector."""
    hidden = list(hidden)
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    if not hidden:
        raise ConfigError("build_fnn needs at least one hidden layer")
    rng = SeededRng(seed)
    stages, body = [], []
    f_in = input_dim
    for width in hidden:
        stages.append(StageSpec("dense", 1, 1, width))
        body.append(_dense_block(f_in, width, dropout_p, rng))
        f_in = width
    return ModelGraph("fnn", stages, body, (input_dim,), None, config={"dropout_p": dropout_p})


def build_fusion(image_branch: ModelGraph, tabular_branch: ModelGraph | None,
                 head_hidden: int = DEFAULT_HEAD_HIDDEN, dropout_p: float = 0.5, seed: int = 0) -> FusionModel:
    """concat(image features, tabular features) -> dense -> BN -> relu -> dropout -> dense(2) -> softmax."""
    rng = SeededRng(seed)
    width = image_branch.feature_width + (tabular_branch.feature_width if tabular_branch is not None else 0)
    head = Sequential(Dense(width, head_hidden, rng=rng), BatchNorm(head_hidden), Activation("relu"),
                      Dropout(dropout_p), Dense(head_hidden, 2, rng=rng))
    return FusionModel(image_branch, tabular_branch, head,
                       {"head_hidden": head_hidden, "dropout_p": dropout_p, "input_width": width})
