"""Report bundle: metrics, ROC points, curves, plots, config snapshot, seed record."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..metrics import (confusion_at, metric_report, roc_curve, write_metrics_csv, write_metrics_text,
                       write_roc_csv)
from ..errors import ClassMissingError
from ..train.trainer import KFoldResult, write_curves_csv
from .plots import curves_svg, roc_svg


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_scores_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_name", "fold", "target", "score"])
        for s in samples:
            w.writerow([s.image_name, s.fold, s.label, repr(s.score)])


def write_evaluation(out: Path, scores: np.ndarray, labels: np.ndarray, threshold: float,
                     rows: dict[str, dict] | None = None) -> dict:
    """metrics.{csv,txt,json}, roc.csv, roc.svg and confusion.txt for one scored set."""
    out.mkdir(parents=True, exist_ok=True)
    report = metric_report(scores, labels, threshold)
    rows = dict(rows or {})
    rows["oof" if len(rows) else "all"] = report
    write_metrics_csv(rows, out / "metrics.csv")
    write_metrics_text(rows, out / "metrics.txt")
    (out / "metrics.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    cm = confusion_at(scores, labels, threshold)
    (out / "confusion.txt").write_text(cm.table() + "\n")
    try:
        curve = roc_curve(scores, labels)
    except ClassMissingError:
        curve = None
    if curve is not None:
        write_roc_csv(curve, out / "roc.csv")
        (out / "roc.svg").write_text(roc_svg(curve.fpr, curve.tpr, "OOF" if len(rows) > 1 else "model"))
    return report


def write_training_bundle(out: Path, result: KFoldResult, threshold: float, config_ini: str,
                          seeds: dict) -> dict | None:
    """Everything ``train`` emits; works on a partial result after divergence."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_ini)
    (out / "seeds.json").write_text(json.dumps(seeds, indent=2, sort_keys=True) + "\n")
    for fold, series in enumerate(result.stats):
        path = out / f"curves_fold{fold}.csv"
        write_curves_csv(series, path)
        rows = _read_rows(path)
        if rows:
            for metric in ("loss", "acc", "recall"):
                try:
                    svg = curves_svg(rows, metric)
                except ValueError:
                    continue
                (out / f"{metric}_fold{fold}.svg").write_text(svg)
    if not result.oof:
        return None
    write_scores_csv(result.oof, out / "oof_scores.csv")
    scores, labels = result.oof_arrays()
    folds = np.array([s.fold for s in result.oof])
    per_fold = {}
    for f in range(result.assignment.k):
        m = folds == f
        if m.any():
            per_fold[f"fold{f}"] = metric_report(scores[m], labels[m], threshold)
    return write_evaluation(out, scores, labels, threshold, per_fold)
