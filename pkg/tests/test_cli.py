import csv
import hashlib
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from dermfuse.cli import main
from dermfuse.cli.config import load_config, parse_overrides
from dermfuse.cli.plots import LEFT, TOP, line_chart
from dermfuse.errors import ConfigError

SVG = "{http://www.w3.org/2000/svg}"
TINY_OVERRIDES = ["--data.crop_size", "16", "--model.fnn_hidden", "8", "--model.head_hidden", "8",
                  "--train.epochs", "1", "--train.batch_size", "8", "--train.k", "2"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def digest(directory):
    h = {}
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file():
            h[str(p.relative_to(directory))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return h


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "40", "--malignant-frac", "0.25", "--size", "20", "--seed", "3",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data.csv", str(synth_dir / "metadata.csv"), "--data.images", str(synth_dir / "images"),
                 "--output.dir", str(out)] + TINY_OVERRIDES)
    assert code == 0
    return out


# -- synth --------------------------------------------------------------------------------------

def test_synth_counts(tmp_path, capsys):
    assert main(["synth", "--n", "500", "--malignant-frac", "0.02", "--size", "16", "--out", str(tmp_path)]) == 0
    r = rows(tmp_path / "metadata.csv")
    assert len(r) == 500 and sum(int(x["target"]) for x in r) == 10
    assert len(list((tmp_path / "images").glob("*.png"))) == 500
    assert "500 samples (10 malignant)" in capsys.readouterr().out


def test_synth_bit_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--n", "12", "--size", "16", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_synth_bad_fraction(tmp_path, capsys):
    assert main(["synth", "--malignant-frac", "0", "--out", str(tmp_path)]) == 2
    assert "--malignant-frac" in capsys.readouterr().err


def test_synth_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--n", "10", "--size", "16", "--out", str(blocker / "sub")]) == 3


def test_missing_required_flag():
    assert main(["synth"]) == 2
    assert main(["bogus"]) == 2


# -- split --------------------------------------------------------------------------------------

def test_split_groups_and_determinism(synth_dir, tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        assert main(["split", "--csv", str(synth_dir / "metadata.csv"), "--k", "3", "--out", str(tmp_path / name)]) == 0
    out = capsys.readouterr().out
    assert out.count("fold ") == 6 and "patients" in out
    a = rows(tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    folds = {}
    for r in a:
        folds.setdefault(r["patient_id"], set()).add(r["fold"])
    assert all(len(v) == 1 for v in folds.values())
    assert {r["provenance"] for r in a} == {"original"} and a[0]["feature_width"]


def test_split_too_few_patients(tmp_path, capsys):
    p = tmp_path / "m.csv"
    p.write_text("image_name,patient_id,sex,age_approx,anatom_site,diagnosis,benign_malignant,target\n"
                 + "".join(f"i{i},p{i % 3},male,40,torso,x,benign,0\n" for i in range(6)))
    assert main(["split", "--csv", str(p), "--k", "5", "--out", str(tmp_path / "o.csv")]) == 4
    assert "at least equal to the number of folds" in capsys.readouterr().err


def test_split_missing_file(tmp_path):
    assert main(["split", "--csv", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.csv")]) == 3


# -- params ------------------------------------------------------------------------------------

def _count_lines(out):
    return {l.split()[0]: int(l.split()[1].replace(",", "")) for l in out.splitlines()
            if l.split() and l.split()[0] in ("total", "trainable", "non_trainable")}


def test_params_b0(capsys):
    assert main(["params", "--arch", "efficientnet-b0", "--classes", "1000"]) == 0
    c = _count_lines(capsys.readouterr().out)
    assert c["trainable"] == 5_288_548 and c["total"] == 5_330_564 and c["non_trainable"] == 42_016


def test_params_resnet_head_difference(capsys):
    main(["params", "--arch", "resnet50", "--classes", "2"])
    two = _count_lines(capsys.readouterr().out)
    main(["params", "--arch", "resnet50", "--classes", "1000"])
    thousand = _count_lines(capsys.readouterr().out)
    assert thousand["total"] - two["total"] == 998 * 2048 + 998
    assert thousand["non_trainable"] == two["non_trainable"]


def test_params_unknown_arch(capsys):
    assert main(["params", "--arch", "vgg16"]) == 2
    err = capsys.readouterr().err
    assert "resnet50" in err and "efficientnet-b0" in err


def test_params_custom_scaling(capsys):
    assert main(["params", "--scaling", "1.0,1.0,224", "--classes", "1000"]) == 0
    assert _count_lines(capsys.readouterr().out)["total"] == 5_330_564
    assert main(["params", "--scaling", "1.0,x"]) == 2


# -- config --------------------------------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nepochs = 4  # short\nlearning_rate = 0.01\n[model]\nfnn_hidden = 16, 8\n")
    cfg = load_config(p, parse_overrides(["--train.epochs", "2", "--eval.threshold=0.3"]))
    assert cfg["train"]["epochs"] == 2 and cfg["train"]["learning_rate"] == 0.01
    assert cfg["model"]["fnn_hidden"] == (16, 8) and cfg["eval"]["threshold"] == 0.3
    again = load_config(text=cfg.to_ini())
    assert again.values == cfg.values


@pytest.mark.parametrize("text", ["[train]\nepoch = 3\n", "[nope]\na = 1\n", "[train]\nepochs = many\n",
                                  "[model]\nuse_tabular = maybe\n"])
def test_config_rejects_unknown_or_bad(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_bad_override_exit_code(tmp_path, capsys):
    assert main(["train", "--train.bogus", "1"]) == 2
    assert "train.bogus" in capsys.readouterr().err


# -- train / eval ----------------------------------------------------------------------------------

def test_train_bundle(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"config.ini", "seeds.json", "curves_fold0.csv", "curves_fold1.csv", "oof_scores.csv", "metrics.csv",
            "metrics.json", "metrics.txt", "roc.csv", "roc.svg", "confusion.txt", "loss_fold0.svg",
            "checkpoints"} <= names
    assert (trained / "roc.csv").read_text().splitlines()[0] == "threshold,fpr,tpr"
    assert rows(trained / "curves_fold0.csv")[0].keys() == {"epoch", "split", "loss", "acc", "recall_benign",
                                                            "recall_malignant", "seconds"}
    metrics = rows(trained / "metrics.csv")
    assert [m["row"] for m in metrics] == ["fold0", "fold1", "oof"]
    assert len(rows(trained / "oof_scores.csv")) == 40


def test_train_output_and_snapshot_reproduces(trained, synth_dir, tmp_path, capsys):
    snapshot = (trained / "config.ini").read_text()
    cfg = tmp_path / "snap.ini"
    cfg.write_text(snapshot)
    assert main(["train", "--config", str(cfg), "--output.dir", str(tmp_path / "again")]) == 0
    out = capsys.readouterr().out
    assert "OOF AUC" in out and "True Pos" in out and "trainable params" in out
    skip = lambda d: {k: v for k, v in digest(d).items() if not k.startswith("curves") and k != "config.ini"}
    assert skip(trained) == skip(tmp_path / "again")
    for fold in (0, 1):
        a, b = rows(trained / f"curves_fold{fold}.csv"), rows(tmp_path / "again" / f"curves_fold{fold}.csv")
        assert [dict(r, seconds="") for r in a] == [dict(r, seconds="") for r in b]


def test_train_freeze_reduces_trainable(synth_dir, tmp_path, capsys):
    base = ["train", "--data.csv", str(synth_dir / "metadata.csv"), "--data.images", str(synth_dir / "images")]
    counts = []
    for flag in ("false", "true"):
        assert main(base + TINY_OVERRIDES + ["--train.freeze_image_branch", flag,
                                             "--output.dir", str(tmp_path / flag)]) == 0
        line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("trainable params"))
        counts.append(int(line.split()[2].replace(",", "")))
    assert counts[1] < counts[0]


def test_train_divergence_exit_5(synth_dir, tmp_path, capsys):
    out = tmp_path / "div"
    code = main(["train", "--data.csv", str(synth_dir / "metadata.csv"), "--data.images", str(synth_dir / "images"),
                 "--output.dir", str(out), "--train.learning_rate", "1e6", "--train.optimizer", "sgd_momentum"]
                + TINY_OVERRIDES)
    assert code == 5
    assert "diverged" in capsys.readouterr().err
    assert (out / "config.ini").exists() and (out / "seeds.json").exists()


def test_train_requires_data(tmp_path):
    assert main(["train", "--output.dir", str(tmp_path)]) == 2


def test_eval_with_checkpoint(trained, synth_dir, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(trained / "checkpoints" / "fold0.ckpt"),
                 "--csv", str(synth_dir / "metadata.csv"), "--images", str(synth_dir / "images"),
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    pct = [float(tok[:-1]) for tok in text.split() if tok.endswith("%")]
    assert len(pct) == 4 and abs(sum(pct) - 100) <= 0.1
    assert (out / "roc.csv").read_text().splitlines()[0] == "threshold,fpr,tpr"
    assert len(rows(out / "scores.csv")) == 40


def test_eval_single_class(trained, synth_dir, tmp_path, capsys):
    src = rows(synth_dir / "metadata.csv")
    benign = tmp_path / "benign.csv"
    with open(benign, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(src[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(r for r in src if r["target"] == "0")
    assert main(["eval", "--checkpoint", str(trained / "checkpoints" / "fold1.ckpt"), "--csv", str(benign),
                 "--images", str(synth_dir / "images"), "--out", str(tmp_path / "ev")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("warning:") and "AUC undefined" in out
    assert not (tmp_path / "ev" / "roc.csv").exists()


def test_eval_fingerprint_mismatch(trained, synth_dir, tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(trained / "checkpoints" / "fold0.ckpt"),
                 "--csv", str(synth_dir / "metadata.csv"), "--images", str(synth_dir / "images"),
                 "--out", str(tmp_path / "ev"), "--model.head_hidden", "12", "--data.crop_size", "16"])
    assert code == 6
    assert "fingerprint" in capsys.readouterr().err


def test_eval_corrupt_checkpoint(trained, synth_dir, tmp_path):
    bad = tmp_path / "bad.ckpt"
    blob = bytearray((trained / "checkpoints" / "fold0.ckpt").read_bytes())
    blob[100] ^= 1
    bad.write_bytes(bytes(blob))
    assert main(["eval", "--checkpoint", str(bad), "--csv", str(synth_dir / "metadata.csv"),
                 "--images", str(synth_dir / "images"), "--out", str(tmp_path / "ev")]) == 3


# -- render ----------------------------------------------------------------------------------------

def _polyline_points(svg_path):
    root = ET.parse(svg_path).getroot()
    lines = root.findall(f"{SVG}polyline")
    return root, [[tuple(map(float, p.split(","))) for p in pl.get("points").split()] for pl in lines]


def test_render_perfect_roc_passes_corner(tmp_path):
    roc = tmp_path / "roc.csv"
    roc.write_text("threshold,fpr,tpr\ninf,0.0,0.0\n1.0,0.0,1.0\n0.0,1.0,1.0\n")
    assert main(["render", str(roc), "--out", str(tmp_path / "roc.svg")]) == 0
    root, lines = _polyline_points(tmp_path / "roc.svg")
    assert (float(LEFT), float(TOP)) in lines[0]
    assert root.findall(f"{SVG}line[@class='chance']")


def test_render_curves_well_formed(trained, tmp_path):
    for metric in ("loss", "acc", "recall"):
        out = tmp_path / f"{metric}.svg"
        assert main(["render", str(trained / "curves_fold0.csv"), "--out", str(out), "--metric", metric]) == 0
        root, lines = _polyline_points(out)
        assert root.tag == f"{SVG}svg" and len(lines) >= 1
        assert root.findall(f"{SVG}text")


def test_render_bad_inputs(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("threshold,fpr,tpr\n")
    assert main(["render", str(empty), "--out", str(tmp_path / "o.svg")]) == 2
    junk = tmp_path / "j.csv"
    junk.write_text("a,b\n1,2\n")
    assert main(["render", str(junk), "--out", str(tmp_path / "o.svg")]) == 2
    bad = tmp_path / "b.csv"
    bad.write_text("threshold,fpr,tpr\ninf,zero,0\n")
    assert main(["render", str(bad), "--out", str(tmp_path / "o.svg")]) == 2


def test_line_chart_rejects_empty():
    with pytest.raises(ValueError):
        line_chart({"a": []}, "t", "x", "y")
