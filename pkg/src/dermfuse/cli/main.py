"""``dermfuse`` command line: synth, split, train, eval, params, render.

Exit codes: 0 success, 2 invalid arguments or config, 3 I/O failure,
4 fewer patients than folds, 5 training divergence, 6 checkpoint/architecture
fingerprint mismatch.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..data import AugmentPolicy, Dataset, FeatureSchema, load_metadata_csv, synth_generate, write_image
from ..data.metadata import read_column, write_metadata_csv
from ..errors import (CompatibilityError, ConfigError, DivergenceError, FormatError, InsufficientGroupsError,
                      SchemaError, IntegrityError)
from ..metrics import confusion_at, format_value
from ..models import ARCHITECTURES, EFFICIENTNET_PRESETS, ScalingConfig, build_image_model, count_params
from ..splitter import FoldAssignment, group_kfold
from ..train import checkpoint
from ..train.experiments import ModelSpec
from ..train.trainer import TrainConfig, evaluate, train_kfold
from .config import load_config, parse_overrides
from .plots import curves_svg, roc_svg
from .report import write_evaluation, write_scores_csv, write_training_bundle

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_GROUPS, EXIT_DIVERGED, EXIT_FINGERPRINT = 0, 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"dermfuse: error: {msg}", file=sys.stderr)


def _warn(msg: str) -> None:
    print(f"warning: {msg}")


# -- synth ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if not 0.0 < args.malignant_frac < 1.0:
        raise UsageError(f"--malignant-frac must be strictly between 0 and 1, got {args.malignant_frac}")
    if args.n < 10:
        raise UsageError(f"--n must be at least 10, got {args.n}")
    if args.size < 16:
        raise UsageError(f"--size must be at least 16, got {args.size}")
    records, images = synth_generate(args.n, args.malignant_frac, args.size, args.seed)
    out = Path(args.out)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for r in records:
        write_image(images[r.image_name], img_dir / f"{r.image_name}.png")
    write_metadata_csv(records, out / "metadata.csv")
    n_mal = sum(r.target for r in records)
    print(f"wrote {len(records)} samples ({n_mal} malignant) to {out}")
    return EXIT_OK


# -- split ---------------------------------------------------------------------------

def cmd_split(args) -> int:
    records = load_metadata_csv(args.csv)
    assignment = group_kfold([r.patient_id for r in records], args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    width = FeatureSchema.from_records(records).width
    write_metadata_csv(records, out, {"fold": assignment.fold_of, "provenance": ["original"] * len(records),
                                      "feature_width": [width] * len(records)})
    for f in range(args.k):
        members = [r for r, g in zip(records, assignment.fold_of) if g == f]
        print(f"fold {f}: samples {len(members)} patients {len({r.patient_id for r in members})} "
              f"malignant {sum(r.target for r in members)}")
    return EXIT_OK


def _manifest_assignment(path, records, k: int) -> FoldAssignment:
    names = read_column(path, "image_name")
    folds = read_column(path, "fold")
    by_name = dict(zip(names, folds))
    try:
        fold_of = tuple(int(by_name[r.image_name]) for r in records)
    except KeyError as exc:
        raise SchemaError(f"manifest {path} has no fold for {exc.args[0]!r}") from None
    except ValueError as exc:
        raise SchemaError(f"manifest {path}: {exc}") from None
    if set(fold_of) - set(range(k)):
        raise ConfigError(f"manifest folds {sorted(set(fold_of))} do not match train.k={k}")
    return FoldAssignment(k, fold_of)


# -- train ---------------------------------------------------------------------------

def _spec_from(cfg, width: int) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec(arch=m["arch"], image_size=cfg["data"]["crop_size"], tabular_dim=width,
                     use_tabular=m["use_tabular"], fnn_hidden=m["fnn_hidden"], fnn_dropout=m["fnn_dropout"],
                     head_hidden=m["head_hidden"], head_dropout=m["head_dropout"], seed=m["seed"])


def _train_config(cfg) -> TrainConfig:
    t = dict(cfg["train"])
    return TrainConfig(**t)


def cmd_train(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    d = cfg["data"]
    if not d["csv"] or not d["images"]:
        raise ConfigError("data.csv and data.images are required")
    tcfg = _train_config(cfg)
    records = load_metadata_csv(d["csv"])
    schema = FeatureSchema.from_records(records)
    dataset = Dataset.from_directory(records, d["images"], policy=AugmentPolicy(d["crop_size"]), schema=schema,
                                     hair_removal=d["hair_removal"])
    assignment = (_manifest_assignment(d["manifest"], records, tcfg.k) if d["manifest"]
                  else group_kfold([r.patient_id for r in records], tcfg.k))
    spec = _spec_from(cfg, schema.width)
    pretrained = Path(cfg["model"]["pretrained"]).read_bytes() if cfg["model"]["pretrained"] else None
    builder = spec.builder(pretrained)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    seeds = {"model.seed": spec.seed, "train.seed": tcfg.seed, "rng": "pcg64"}
    threshold = cfg["eval"]["threshold"]
    extra = {"spec": asdict(spec), "sites": list(schema.sites), "crop_size": d["crop_size"]}

    def progress(s):
        print(f"fold {s.fold} epoch {s.epoch} train_loss {s.train_loss:.4f} val_loss "
              f"{format_value(s.val_loss)}", file=sys.stderr)

    try:
        result = train_kfold(builder, dataset, assignment, tcfg, on_epoch=progress, extra=extra)
    except DivergenceError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            write_training_bundle(out, partial, threshold, cfg.to_ini(), seeds)
        _err(f"training diverged: {exc}; partial report in {out}")
        return EXIT_DIVERGED
    report = write_training_bundle(out, result, threshold, cfg.to_ini(), seeds)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for fold, blob in enumerate(result.checkpoints):
        (ckpt_dir / f"fold{fold}.ckpt").write_bytes(blob)
    counts = result.param_counts[0]
    print(f"trainable params {counts.trainable:,} of {counts.total:,}")
    print(f"OOF AUC {format_value(report['auc'])}")
    print(f"OOF accuracy {format_value(report['accuracy'])}")
    scores, labels = result.oof_arrays()
    print(confusion_at(scores, labels, threshold).table())
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------

def cmd_eval(args, overrides) -> int:
    meta = checkpoint.read_metadata(args.checkpoint)
    extra = meta.get("extra", {})
    if "spec" not in extra:
        raise FormatError("checkpoint carries no model specification")
    schema = FeatureSchema(tuple(extra["sites"]))
    if args.config or overrides:
        cfg = load_config(args.config, overrides)
        spec = _spec_from(cfg, schema.width)
        crop = cfg["data"]["crop_size"]
        threshold = cfg["eval"]["threshold"]
    else:
        s = dict(extra["spec"])
        s["fnn_hidden"] = tuple(s["fnn_hidden"])
        spec = ModelSpec(**s)
        crop = extra["crop_size"]
        threshold = args.threshold
    model = spec.build()
    checkpoint.load_checkpoint(args.checkpoint, model)
    records = load_metadata_csv(args.csv)
    dataset = Dataset.from_directory(records, args.images, policy=AugmentPolicy(crop), schema=schema)
    samples, _ = evaluate(model, dataset)
    scores = np.array([s.score for s in samples])
    labels = dataset.targets
    out = Path(args.out)
    report = write_evaluation(out, scores, labels, threshold)
    write_scores_csv(samples, out / "scores.csv")
    if report["auc"] is None:
        _warn("only one class present; AUC undefined")
    print(f"AUC {format_value(report['auc'])}")
    print(f"accuracy {format_value(report['accuracy'])}")
    print(confusion_at(scores, labels, threshold).table())
    return EXIT_OK


# -- params --------------------------------------------------------------------------

def cmd_params(args) -> int:
    scaling = None
    if args.scaling:
        try:
            w, dep, res = args.scaling.split(",")
            scaling = ScalingConfig(float(w), float(dep), int(res))
        except ValueError:
            raise UsageError("--scaling expects width,depth,resolution") from None
        arch = args.arch or "efficientnet-custom"
    else:
        arch = args.arch
        if arch not in ARCHITECTURES:
            raise UsageError(f"unknown architecture {arch!r}; valid: {', '.join(ARCHITECTURES)}")
    model = build_image_model(arch, args.classes, scaling=scaling)
    counts = count_params(model)
    print(model.summary())
    print(f"total {counts.total:,}")
    print(f"trainable {counts.trainable:,}")
    print(f"non_trainable {counts.non_trainable:,}")
    return EXIT_OK


# -- render --------------------------------------------------------------------------

def cmd_render(args) -> int:
    try:
        with open(args.csv, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except UnicodeDecodeError:
        raise UsageError(f"{args.csv} is not a text CSV") from None
    try:
        if header == ["threshold", "fpr", "tpr"]:
            if not rows:
                raise UsageError("ROC CSV has no points")
            svg = roc_svg([float(r["fpr"]) for r in rows], [float(r["tpr"]) for r in rows])
        elif {"epoch", "split", "loss", "acc"} <= set(header):
            if not rows:
                raise UsageError("curve CSV has no rows")
            svg = curves_svg(rows, args.metric)
        else:
            raise UsageError(f"unrecognised CSV header {header} (expected ROC or curve columns)")
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed CSV {args.csv}: {exc}") from None
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- entry ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _err(message)
        raise SystemExit(EXIT_ARGS)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dermfuse", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic image + metadata dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--malignant-frac", type=float, default=0.1)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("split", help="patient-grouped K-fold manifest")
    s.add_argument("--csv", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="K-fold training; extra --section.key value pairs override the config")
    s.add_argument("--config")

    s = sub.add_parser("eval", help="score a dataset with a fold checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--csv", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="build the model from this config instead of the checkpoint record")
    s.add_argument("--threshold", type=float, default=0.5)

    s = sub.add_parser("params", help="stage table and parameter counts")
    s.add_argument("--arch", default=None)
    s.add_argument("--classes", type=int, default=1000)
    s.add_argument("--scaling", help="custom EfficientNet scaling: width,depth,resolution")

    s = sub.add_parser("render", help="SVG plot from a curve CSV or ROC CSV")
    s.add_argument("csv")
    s.add_argument("--out", required=True)
    s.add_argument("--metric", choices=("loss", "acc", "recall"), default="loss")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if rest and args.command not in ("train", "eval"):
            raise UsageError(f"unrecognized arguments: {' '.join(rest)}")
        overrides = parse_overrides(rest) if rest else []
        if args.command == "params" and not args.arch and not args.scaling:
            raise UsageError("--arch (or --scaling) is required")
        if args.command == "params" and args.classes is not None and args.classes < 2:
            raise UsageError("--classes must be >= 2")
        handler = {"synth": lambda: cmd_synth(args), "split": lambda: cmd_split(args),
                   "train": lambda: cmd_train(args, overrides), "eval": lambda: cmd_eval(args, overrides),
                   "params": lambda: cmd_params(args), "render": lambda: cmd_render(args)}[args.command]
        return handler()
    except InsufficientGroupsError as exc:
        _err(str(exc))
        return EXIT_GROUPS
    except CompatibilityError as exc:
        _err(str(exc))
        return EXIT_FINGERPRINT
    except (UsageError, ConfigError, SchemaError, IntegrityError) as exc:
        _err(str(exc))
        return EXIT_ARGS
    except (OSError, FormatError) as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
