"""Confusion matrix, rate equations, ROC curve and AUC (malignant = positive class)."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ClassMissingError


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: int
    image_name: str = ""
    fold: int = -1


@dataclass(frozen=True)
class ConfusionMatrix:
    """a: benign->benign, b: benign->malignant, c: malignant->benign, d: malignant->malignant."""
    a: int
    b: int
    c: int
    d: int

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def percentages(self) -> tuple[float, float, float, float]:
        t = self.total
        if t == 0:
            return (0.0, 0.0, 0.0, 0.0)
        return tuple(100.0 * v / t for v in (self.a, self.b, self.c, self.d))

    def table(self) -> str:
        """Counts and percentages laid out as actual rows x predicted columns."""
        pa, pb, pc, pd = self.percentages()
        rows = [("", "benign", "malignant"),
                ("benign", f"True Neg {self.a:,} {pa:.1f}%", f"False Pos {self.b:,} {pb:.1f}%"),
                ("malignant", f"False Neg {self.c:,} {pc:.1f}%", f"True Pos {self.d:,} {pd:.1f}%")]
        w = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join("  ".join(c.ljust(w[i]) for i, c in enumerate(r)).rstrip() for r in rows)


@dataclass(frozen=True)
class Rates:
    """Rates are None when their denominator is zero."""
    tpr: float | None
    fpr: float | None
    tnr: float | None
    fnr: float | None
    accuracy: float | None
    precision: float | None


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 (benign) or 1 (malignant)")
    return s, y


def _require_both(y: np.ndarray) -> tuple[int, int]:
    m_pos = int(y.sum())
    m_neg = int(y.size - m_pos)
    if m_pos == 0 or m_neg == 0:
        raise ClassMissingError(f"need both classes, got {m_pos} malignant and {m_neg} benign")
    return m_pos, m_neg


def confusion_at(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Predict malignant iff score >= threshold and tally the four cells."""
    s, y = _arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(a=int(np.sum(~pos & ~pred)), b=int(np.sum(~pos & pred)),
                           c=int(np.sum(pos & ~pred)), d=int(np.sum(pos & pred)))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def rates(cm: ConfusionMatrix) -> Rates:
    return Rates(tpr=_ratio(cm.d, cm.c + cm.d), fpr=_ratio(cm.b, cm.a + cm.b),
                 tnr=_ratio(cm.a, cm.a + cm.b), fnr=_ratio(cm.c, cm.c + cm.d),
                 accuracy=_ratio(cm.a + cm.d, cm.total), precision=_ratio(cm.d, cm.b + cm.d))


def roc_curve(scores, labels) -> RocCurve:
    """One (FPR, TPR) point per distinct score, descending, preceded by (0, 0)."""
    s, y = _arrays(scores, labels)
    m_pos, m_neg = _require_both(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]  # final index of each tie block
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return RocCurve(thresholds=np.r_[np.inf, s[last]],
                    fpr=np.r_[0.0, fp / m_neg], tpr=np.r_[0.0, tp / m_pos])


def auc(scores, labels) -> float:
    """Area under the ROC curve from midranks, exact up to the final division.

    Twice the positive rank sum is an integer even with ties, so the
    Mann-Whitney statistic is carried as an exact rational.
    """
    s, y = _arrays(scores, labels)
    m_pos, m_neg = _require_both(y)
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    starts = np.r_[0, np.nonzero(np.diff(ss))[0] + 1]
    ends = np.r_[starts[1:], ss.size]
    twice_rank = np.empty(ss.size, dtype=np.int64)
    # midrank of a tie block spanning 1-based ranks start+1..end is (start+1+end)/2
    twice_rank_block = starts + 1 + ends
    twice_rank[:] = np.repeat(twice_rank_block, ends - starts)
    twice_pos_ranks = int(twice_rank[y[order] == 1].sum())
    num = twice_pos_ranks - m_pos * (m_pos + 1)
    return float(Fraction(num, 2 * m_pos * m_neg))


def auc_pairwise_oracle(scores, labels) -> float:
    """Literal double loop over (positive, negative) pairs; a test oracle only."""
    s, y = _arrays(scores, labels)
    m_pos, m_neg = _require_both(y)
    pos = [float(v) for v in s[y == 1]]
    neg = [float(v) for v in s[y == 0]]
    lower = equal = 0
    for sp in pos:
        for sn in neg:
            if sp < sn:
                lower += 1
            elif sp == sn:
                equal += 1
    return float(1 - Fraction(2 * lower + equal, 2 * m_pos * m_neg))


def metric_report(scores, labels, threshold: float = 0.5) -> dict:
    """Flat dictionary: confusion cells, rates, and AUC (None when a class is absent)."""
    s, y = _arrays(scores, labels)
    cm = confusion_at(s, y, threshold)
    r = rates(cm)
    try:
        area = auc(s, y)
    except ClassMissingError:
        area = None
    out = {"n": int(s.size), "a": cm.a, "b": cm.b, "c": cm.c, "d": cm.d}
    out.update(asdict(r))
    out["auc"] = area
    return out


def format_value(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "undefined"
    return str(v)


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([format_value(float(t)) if math.isfinite(t) else "inf", repr(float(f)), repr(float(p))])


def read_roc_csv(path) -> RocCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return RocCurve(thresholds=np.array([float(r["threshold"]) for r in rows]),
                    fpr=np.array([float(r["fpr"]) for r in rows]),
                    tpr=np.array([float(r["tpr"]) for r in rows]))


REPORT_COLUMNS = ["row", "n", "a", "b", "c", "d", "tpr", "fpr", "tnr", "fnr", "accuracy", "precision", "auc"]


def write_metrics_csv(rows: dict[str, dict], path) -> None:
    """One row per fold plus the OOF row, keyed by the ``row`` column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for name, rep in rows.items():
            w.writerow([name] + [format_value(rep.get(k)) for k in REPORT_COLUMNS[1:]])


def write_metrics_text(rows: dict[str, dict], path) -> None:
    """Flat ``row.key=value`` lines."""
    with open(path, "w") as fh:
        for name, rep in rows.items():
            for k in REPORT_COLUMNS[1:]:
                fh.write(f"{name}.{k}={format_value(rep.get(k))}\n")


def scored_samples(scores: Sequence[float], labels: Sequence[int], names=None, folds=None) -> list[ScoredSample]:
    names = names if names is not None else [""] * len(scores)
    folds = folds if folds is not None else [-1] * len(scores)
    return [ScoredSample(float(s), int(l), n, int(f)) for s, l, n, f in zip(scores, labels, names, folds)]
