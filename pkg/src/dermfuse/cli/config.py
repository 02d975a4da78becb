"""Run configuration: an INI file with fixed sections, validated key by key.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` or
``;`` start comments.  Booleans are true/false, tuples are comma separated,
an empty value means "unset" for optional keys.  Command-line overrides use
dotted names, e.g. ``--train.epochs 3`` or ``--model.arch=efficientnet-b0``.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from typing import Callable

from ..errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _opt_pair(s: str):
    if not s.strip():
        return None
    vals = tuple(float(p) for p in s.split(","))
    if len(vals) != 2:
        raise ValueError("expected two comma-separated numbers")
    return vals


def _opt_str(s: str):
    return s.strip() or None


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: str
    help: str = ""


SCHEMA: dict[str, dict[str, Key]] = {
    "data": {
        "csv": Key(_opt_str, "", "metadata CSV"),
        "images": Key(_opt_str, "", "directory holding <image_name>.png|.ppm"),
        "manifest": Key(_opt_str, "", "optional CSV with a fold column (from `split`)"),
        "crop_size": Key(int, "48", "training crop extent"),
        "hair_removal": Key(_bool, "false", "apply hair removal once before training"),
    },
    "model": {
        "arch": Key(str, "efficientnet-desk", "image branch architecture"),
        "use_tabular": Key(_bool, "true", "include the metadata branch"),
        "fnn_hidden": Key(_int_tuple, "64,32", "tabular branch widths"),
        "fnn_dropout": Key(float, "0.3", ""),
        "head_hidden": Key(int, "128", ""),
        "head_dropout": Key(float, "0.5", ""),
        "seed": Key(int, "0", "initialisation seed"),
        "pretrained": Key(_opt_str, "", "image-branch checkpoint to partial-load"),
    },
    "train": {
        "epochs": Key(int, "10", ""),
        "batch_size": Key(int, "32", ""),
        "learning_rate": Key(float, "0.001", ""),
        "optimizer": Key(str, "adam", "adam or sgd_momentum"),
        "seed": Key(int, "0", "shuffling, augmentation and dropout seed"),
        "freeze_image_branch": Key(_bool, "false", ""),
        "oversample_ratio": Key(float, "1.0", "minority:majority target per training fold"),
        "k": Key(int, "5", "folds"),
        "class_weights": Key(_opt_pair, "", "benign,malignant loss weights"),
        "eval_batch_size": Key(int, "64", ""),
    },
    "eval": {
        "threshold": Key(float, "0.5", "malignant decision threshold"),
    },
    "output": {
        "dir": Key(str, "run", "report bundle directory"),
    },
}


class RunConfig:
    """Raw string values (for the snapshot) plus parsed values per section."""

    def __init__(self, raw: dict[str, dict[str, str]]):
        self.raw = {s: dict(v) for s, v in raw.items()}
        self.values: dict[str, dict] = {}
        for section, keys in SCHEMA.items():
            self.values[section] = {}
            for key, spec in keys.items():
                text = self.raw[section][key]
                try:
                    self.values[section][key] = spec.parse(text)
                except ValueError as exc:
                    raise ConfigError(f"{section}.{key}: {exc}") from None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in SCHEMA.items():
            cp[section] = {k: self.raw[section][k] for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def defaults() -> dict[str, dict[str, str]]:
    return {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}


def _set(raw: dict, dotted: str, value: str, origin: str) -> None:
    section, _, key = dotted.partition(".")
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown section [{section}]; valid: {', '.join(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key {section}.{key}; valid: {', '.join(SCHEMA[section])}")
    raw[section][key] = value


def parse_overrides(args: list[str]) -> list[tuple[str, str]]:
    """``--section.key value`` / ``--section.key=value`` pairs."""
    out = []
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unexpected argument {tok!r} (overrides look like --section.key value)")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"override {tok} is missing a value")
            value = args[i + 1]
            i += 2
        out.append((name, value))
    return out


def load_config(path=None, overrides: list[tuple[str, str]] | None = None, text: str | None = None) -> RunConfig:
    raw = defaults()
    if path is not None or text is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            if text is not None:
                cp.read_string(text)
            else:
                with open(path, encoding="utf-8") as fh:
                    cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"config syntax: {exc}") from None
        if cp.defaults():
            raise ConfigError("unknown section [DEFAULT]")
        for section in cp.sections():
            for key, value in cp[section].items():
                _set(raw, f"{section}.{key}", value, str(path or "<config>"))
    for name, value in overrides or []:
        _set(raw, name, value, "command line")
    return RunConfig(raw)
