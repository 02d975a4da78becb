"""Model specification for the fusion classifier and the two comparison experiments."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..data.dataset import Dataset
from ..errors import ConfigError
from ..models import EFFICIENTNET_PRESETS, build_efficientnet, build_fnn, build_fusion, build_resnet50
from ..models.fusion import DEFAULT_FNN_HIDDEN, DEFAULT_HEAD_HIDDEN
from ..splitter import FoldAssignment, group_kfold
from . import checkpoint
from .trainer import KFoldResult, TrainConfig, train_kfold

EXPERIMENTS = ("frozen_vs_trainable", "cnn_vs_fusion")


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "efficientnet-desk"
    image_size: int = 48
    tabular_dim: int = 12
    use_tabular: bool = True
    fnn_hidden: tuple[int, ...] = DEFAULT_FNN_HIDDEN
    fnn_dropout: float = 0.3
    head_hidden: int = DEFAULT_HEAD_HIDDEN
    head_dropout: float = 0.5
    seed: int = 0

    def build_image_branch(self):
        if self.arch == "resnet50":
            return build_resnet50(None, 3, seed=self.seed, input_extent=self.image_size)
        if self.arch not in EFFICIENTNET_PRESETS:
            raise ConfigError(f"unknown architecture {self.arch!r}; valid: resnet50, "
                              + ", ".join(EFFICIENTNET_PRESETS))
        scaling = replace(EFFICIENTNET_PRESETS[self.arch], resolution=self.image_size)
        return build_efficientnet(scaling, None, 3, seed=self.seed, name=self.arch)

    def build(self):
        image = self.build_image_branch()
        tab = build_fnn(self.tabular_dim, self.fnn_hidden, self.fnn_dropout, seed=self.seed + 1) \
            if self.use_tabular else None
        return build_fusion(image, tab, self.head_hidden, self.head_dropout, seed=self.seed + 2)

    def builder(self, pretrained: bytes | None = None):
        """Per-fold builder; ``pretrained`` is an image-branch checkpoint to partial-load."""
        def make(fold: int):
            model = self.build()
            if pretrained is not None:
                checkpoint.loads(pretrained, model, partial=True, prefix="image_branch.")
            return model
        return make


@dataclass
class ExperimentReport:
    kind: str
    arms: dict[str, KFoldResult]
    trainable: dict[str, int]
    pretrain_report: object = None

    def oof_auc(self) -> dict[str, float | None]:
        return {k: r.oof_report()["auc"] for k, r in self.arms.items()}

    def table(self) -> str:
        names = list(self.arms)
        lines = [f"experiment {self.kind}", "metric".ljust(24) + "".join(n.rjust(16) for n in names)]
        reports = {n: self.arms[n].oof_report() for n in names}
        rows = [("trainable params", lambda n: f"{self.trainable[n]:,}")]
        for key in ("auc", "accuracy", "tpr", "tnr"):
            rows.append((f"oof {key}", lambda n, k=key: "undefined" if reports[n][k] is None
                         else f"{reports[n][k]:.4f}"))
        rows.append(("final train loss", lambda n: f"{self.arms[n].final_train_loss():.4f}"))
        for label, fn in rows:
            lines.append(label.ljust(24) + "".join(fn(n).rjust(16) for n in names))
        epochs = len(next(iter(self.arms.values())).stats[0])
        lines.append("epoch curves (mean over folds): train_loss / val_loss")
        for e in range(epochs):
            cells = []
            for n in names:
                tl = np.mean([f[e].train_loss for f in self.arms[n].stats])
                vl = np.mean([f[e].val_loss for f in self.arms[n].stats])
                cells.append(f"{tl:.3f}/{vl:.3f}".rjust(16))
            lines.append(f"epoch {e + 1}".ljust(24) + "".join(cells))
        return "\n".join(lines)


def pretrain_backbone(spec: ModelSpec, dataset: Dataset, config: TrainConfig) -> bytes:
    """Train an image-only model on one task and return its image-branch checkpoint.

    Stands in for ImageNet weights: the backbone is fit locally on a separate
    synthetic dataset and later partial-loaded into the fusion model.
    """
    img_spec = replace(spec, use_tabular=False)
    groups = [s.patient_id for s in dataset.samples]
    assignment = group_kfold(groups, config.k)
    result = train_kfold(img_spec.builder(), dataset, assignment, replace(config, freeze_image_branch=False),
                         folds=[0])
    model = img_spec.build()
    checkpoint.loads(result.checkpoints[0], model)
    return checkpoint.dumps(model.image_branch)


def run_experiment(kind: str, dataset: Dataset, config: TrainConfig, spec: ModelSpec | None = None,
                   pretrain_data: Dataset | None = None, assignment: FoldAssignment | None = None,
                   pretrained: bytes | None = None) -> ExperimentReport:
    """Two controlled arms on the same folds and seeds.

    frozen_vs_trainable: both arms start from the same pretrained image branch
    and differ only in ``freeze_image_branch``.  cnn_vs_fusion: image branch
    alone versus the image+metadata fusion model.
    """
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}; valid: {', '.join(EXPERIMENTS)}")
    spec = spec or ModelSpec(tabular_dim=dataset.schema.width, seed=config.seed)
    assignment = assignment or group_kfold([s.patient_id for s in dataset.samples], config.k)
    arms, trainable = {}, {}
    if kind == "frozen_vs_trainable":
        if pretrained is None:
            if pretrain_data is None:
                raise ConfigError("frozen_vs_trainable needs pretrain_data or a pretrained checkpoint")
            pretrained = pretrain_backbone(spec, pretrain_data, config)
        for name, frozen in (("frozen", True), ("trainable", False)):
            cfg = replace(config, freeze_image_branch=frozen)
            arms[name] = train_kfold(spec.builder(pretrained), dataset, assignment, cfg)
    else:
        for name, use_tab in (("image_only", False), ("fusion", True)):
            arms[name] = train_kfold(replace(spec, use_tabular=use_tab).builder(), dataset, assignment,
                                     replace(config, freeze_image_branch=False))
    for name, res in arms.items():
        trainable[name] = res.param_counts[0].trainable
    return ExperimentReport(kind, arms, trainable)
