"""K-fold training with out-of-fold scoring."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .. import tensor as T
from ..data.dataset import Dataset
from ..data.sampling import oversample
from ..errors import ConfigError, ConsistencyError, DivergenceError
from ..layers import Context, EVAL, Mode
from ..metrics import ScoredSample, format_value, metric_report
from ..models.graph import count_params, set_trainable
from ..rng import SeededRng, derive_seed
from ..splitter import FoldAssignment, fold_iter
from . import checkpoint
from .optim import cross_entropy_loss, make_optimizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    freeze_image_branch: bool = False
    oversample_ratio: float = 1.0
    k: int = 5
    class_weights: tuple[float, float] | None = None
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batchnorm needs a batch)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"optimizer must be adam or sgd_momentum, got {self.optimizer!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.eval_batch_size < 1:
            raise ConfigError("eval_batch_size must be >= 1")
        if not 0.0 < self.oversample_ratio <= 1.0:
            raise ConfigError(f"oversample_ratio must be in (0, 1], got {self.oversample_ratio}")
        if self.class_weights is not None:
            if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
                raise ConfigError(f"class_weights must be two positive numbers, got {self.class_weights}")
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))


@dataclass
class EpochStats:
    fold: int
    epoch: int
    train_loss: float
    train_acc: float
    train_recall_benign: float | None
    train_recall_malignant: float | None
    val_loss: float | None
    val_acc: float | None
    val_recall_benign: float | None
    val_recall_malignant: float | None
    seconds: float

    def rows(self) -> list[list]:
        """Two CSV rows (train, val) in the curve-file column order."""
        return [[self.epoch, "train", self.train_loss, self.train_acc, self.train_recall_benign,
                 self.train_recall_malignant, self.seconds],
                [self.epoch, "val", self.val_loss, self.val_acc, self.val_recall_benign,
                 self.val_recall_malignant, self.seconds]]


# Parameters or batchnorm statistics beyond this magnitude mean the run has
# blown up even though float64 plus the clamped log keep the loss finite.
DIVERGENCE_LIMIT = 1e8


def _check_state(model, where: str) -> None:
    for name, arr in model.state_arrays().items():
        peak = np.max(np.abs(arr)) if arr.size else 0.0
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise DivergenceError(f"{where}: {name} reached magnitude {peak:.3g}")


CURVE_COLUMNS = ["epoch", "split", "loss", "acc", "recall_benign", "recall_malignant", "seconds"]


def write_curves_csv(stats: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for s in stats:
            for row in s.rows():
                w.writerow([format_value(v) for v in row])


@dataclass
class KFoldResult:
    assignment: FoldAssignment
    config: TrainConfig
    stats: list[list[EpochStats]] = field(default_factory=list)
    oof: list[ScoredSample] = field(default_factory=list)
    checkpoints: list[bytes] = field(default_factory=list)
    param_counts: list[tuple] = field(default_factory=list)

    def oof_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([s.score for s in self.oof]), np.array([s.label for s in self.oof]))

    def oof_report(self, threshold: float = 0.5) -> dict:
        return metric_report(*self.oof_arrays(), threshold)

    def final_train_loss(self) -> float:
        return float(np.mean([fold[-1].train_loss for fold in self.stats]))


def _recalls(pred: np.ndarray, y: np.ndarray) -> tuple[float | None, float | None]:
    out = []
    for cls in (0, 1):
        m = y == cls
        out.append(float(np.mean(pred[m] == cls)) if m.any() else None)
    return out[0], out[1]


def predict(model, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities (N, 2), center-cropped, no graph recorded."""
    out = []
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = range(start, min(start + batch_size, len(dataset)))
            x, f, _ = dataset.batch(idx, train=False)
            out.append(model(T.Tensor(x), T.Tensor(f), EVAL).data)
    return np.concatenate(out) if out else np.zeros((0, 2))


def evaluate(model, dataset: Dataset, batch_size: int = 64, threshold: float = 0.5, fold: int = -1):
    """(scored samples, metric report with mean loss) for ``dataset``."""
    probs = predict(model, dataset, batch_size)
    y = dataset.targets
    scores = probs[:, 1]
    report = metric_report(scores, y, threshold) if len(y) else {}
    if len(y):
        p_true = np.clip(probs[np.arange(len(y)), y], 1e-12, None)
        report["loss"] = float(-np.mean(np.log(p_true)))
    samples = [ScoredSample(float(s), int(t), n, fold) for s, t, n in zip(scores, y, dataset.names)]
    return samples, report


def _check_leakage(train: Dataset, val: Dataset) -> None:
    shared = {s.patient_id for s in train.samples} & {s.patient_id for s in val.samples}
    if shared:
        raise ConsistencyError(f"patients in both train and validation: {sorted(shared)[:5]}")
    if any(s.is_copy for s in val.samples):
        raise ConsistencyError("oversampled copies found in a validation set")


def train_epoch(model, opt, data: Dataset, config: TrainConfig, fold: int, epoch: int) -> tuple[float, float, tuple]:
    order = SeededRng(derive_seed(config.seed, fold, epoch, "order")).permutation(len(data))
    bs = config.batch_size
    batches = [order[i:i + bs] for i in range(0, len(order), bs)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    total_loss = 0.0
    preds, ys = [], []
    for b, idx in enumerate(batches):
        x, f, y = data.batch(idx, train=True, seed=config.seed, epoch=epoch)
        ctx = Context(Mode.TRAIN, SeededRng(derive_seed(config.seed, fold, epoch, b, "masks")))
        probs = model(T.Tensor(x), T.Tensor(f), ctx)
        loss = cross_entropy_loss(probs, y, config.class_weights)
        value = float(loss.data)
        if not math.isfinite(value) or not np.all(np.isfinite(probs.data)):
            raise DivergenceError(f"non-finite loss at fold {fold} epoch {epoch + 1} batch {b}")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        _check_state(model, f"fold {fold} epoch {epoch + 1} batch {b}")
        total_loss += value * len(idx)
        preds.append(probs.data.argmax(axis=1))
        ys.append(y)
    pred, y = np.concatenate(preds), np.concatenate(ys)
    return total_loss / len(data), float(np.mean(pred == y)), _recalls(pred, y)


def train_kfold(model_builder: Callable[[int], object], dataset: Dataset, assignment: FoldAssignment,
                config: TrainConfig, on_epoch: Callable[[EpochStats], None] | None = None,
                folds: list[int] | None = None, extra: dict | None = None) -> KFoldResult:
    """Train one fresh model per fold and score its held-out fold.

    ``model_builder(fold)`` must return an identically initialised model each
    time.  Oversampling touches the training portion only, so the concatenated
    held-out scores cover every original sample exactly once.  On a non-finite
    loss a :class:`DivergenceError` is raised with the partial result attached
    as ``exc.partial``.  ``extra`` is stored in every fold checkpoint.
    """
    if len(assignment) != len(dataset):
        raise ConsistencyError(f"assignment covers {len(assignment)} samples, dataset has {len(dataset)}")
    if assignment.k != config.k:
        raise ConsistencyError(f"assignment has k={assignment.k}, config k={config.k}")
    if any(s.is_copy for s in dataset.samples):
        raise ConsistencyError("train_kfold expects original samples only")
    result = KFoldResult(assignment, config)
    scored: dict[int, ScoredSample] = {}
    for fold in (range(assignment.k) if folds is None else folds):
        tr_idx, va_idx = fold_iter(assignment, fold)
        val = dataset.subset(va_idx)
        train = dataset.subset(tr_idx)
        train = train.with_samples(oversample(train.samples, config.oversample_ratio,
                                              SeededRng(derive_seed(config.seed, fold, "oversample"))))
        _check_leakage(train, val)

        model = model_builder(fold)
        if config.freeze_image_branch:
            set_trainable(model, "image_branch", False)
        result.param_counts.append(count_params(model, respect_freeze=True))
        opt = make_optimizer(config.optimizer, model.parameters(), config.learning_rate)
        series: list[EpochStats] = []
        result.stats.append(series)
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            try:
                loss, acc, (rb, rm) = train_epoch(model, opt, train, config, fold, epoch)
            except DivergenceError as exc:
                exc.partial = result
                raise
            _, rep = evaluate(model, val, config.eval_batch_size, fold=fold)
            stats = EpochStats(fold, epoch + 1, loss, acc, rb, rm, rep.get("loss"), rep.get("accuracy"),
                               rep.get("tnr"), rep.get("tpr"), time.perf_counter() - t0)
            series.append(stats)
            if on_epoch is not None:
                on_epoch(stats)
        samples, _ = evaluate(model, val, config.eval_batch_size, fold=fold)
        for i, s in zip(va_idx, samples):
            scored[int(i)] = s
        result.checkpoints.append(checkpoint.dumps(model, extra={**(extra or {}), "fold": fold,
                                                                      "config": asdict(config)}))
    result.oof = [scored[i] for i in sorted(scored)]
    return result
