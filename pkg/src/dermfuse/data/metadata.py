"""Metadata CSV parsing and categorical feature encoding."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import IntegrityError, SchemaError

COLUMNS = ["image_name", "patient_id", "sex", "age_approx", "anatom_site", "diagnosis",
           "benign_malignant", "target"]
REQUIRED = [c for c in COLUMNS if c != "diagnosis"]
SEXES = ("female", "male", "unknown")
DEFAULT_SITES = ("torso", "lower extremity", "upper extremity", "head/neck", "palms/soles", "oral/genital")
AGE_DIVISOR = 90.0


@dataclass(frozen=True)
class MetadataRecord:
    image_name: str
    patient_id: str
    sex: str = "unknown"
    age_approx: float | None = None
    anatom_site: str | None = None
    diagnosis: str = ""
    benign_malignant: str = "benign"
    target: int = 0

    def __post_init__(self):
        if self.sex not in SEXES:
            raise SchemaError(f"{self.image_name}: sex must be one of {SEXES}, got {self.sex!r}")
        if self.benign_malignant not in ("benign", "malignant"):
            raise SchemaError(f"{self.image_name}: benign_malignant must be benign or malignant")
        if self.target != int(self.benign_malignant == "malignant"):
            raise IntegrityError(f"{self.image_name}: target={self.target} contradicts "
                                 f"benign_malignant={self.benign_malignant}")


def _parse_row(row: dict, line: int) -> MetadataRecord:
    sex = (row["sex"] or "").strip().lower() or "unknown"
    age_s = (row["age_approx"] or "").strip()
    site = (row["anatom_site"] or "").strip().lower() or None
    label = (row["benign_malignant"] or "").strip().lower()
    try:
        age = float(age_s) if age_s else None
        target = int((row["target"] or "").strip())
    except ValueError as exc:
        raise SchemaError(f"line {line}: {exc}") from exc
    try:
        return MetadataRecord(image_name=row["image_name"].strip(), patient_id=row["patient_id"].strip(),
                              sex=sex, age_approx=age, anatom_site=site,
                              diagnosis=(row.get("diagnosis") or "").strip(),
                              benign_malignant=label, target=target)
    except IntegrityError as exc:
        raise IntegrityError(f"line {line}: {exc}") from None
    except SchemaError as exc:
        raise SchemaError(f"line {line}: {exc}") from None


def load_metadata_csv(path) -> list[MetadataRecord]:
    """Parse a metadata CSV with the standard column names.

    Blank sex becomes ``unknown``; blank age or site become missing (None).
    ``diagnosis`` is optional since test-split files omit it.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED:
            if col not in header:
                raise SchemaError(f"missing required column {col!r} in {path}")
        records = [_parse_row(row, i + 2) for i, row in enumerate(reader)]
    seen = set()
    for r in records:
        if r.image_name in seen:
            raise IntegrityError(f"duplicate image_name {r.image_name!r}")
        seen.add(r.image_name)
    return records


def _fmt_age(age) -> str:
    if age is None:
        return ""
    return str(int(age)) if float(age).is_integer() else repr(float(age))


def record_row(r: MetadataRecord) -> list[str]:
    return [r.image_name, r.patient_id, "" if r.sex == "unknown" else r.sex, _fmt_age(r.age_approx),
            r.anatom_site or "", r.diagnosis, r.benign_malignant, str(r.target)]


def write_metadata_csv(records: Iterable[MetadataRecord], path, extra: dict[str, Sequence] | None = None) -> None:
    """Write records (optionally with extra per-row columns such as ``fold``)."""
    records = list(records)
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS + list(extra))
        for i, r in enumerate(records):
            w.writerow(record_row(r) + [str(extra[c][i]) for c in extra])


def read_column(path, column: str) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise SchemaError(f"missing required column {column!r} in {path}")
        return [row[column] for row in reader]


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed encoding layout: sex one-hot, age (scaled + missing flag), site one-hot + unknown."""
    sites: tuple[str, ...] = DEFAULT_SITES

    @classmethod
    def from_records(cls, records: Iterable[MetadataRecord]) -> "FeatureSchema":
        return cls(tuple(sorted({r.anatom_site for r in records if r.anatom_site})))

    @property
    def width(self) -> int:
        return len(SEXES) + 2 + len(self.sites) + 1

    def names(self) -> list[str]:
        return ([f"sex={s}" for s in SEXES] + ["age/90", "age_missing"]
                + [f"site={s}" for s in self.sites] + ["site=unknown"])


def encode_features(record: MetadataRecord, schema: FeatureSchema) -> np.ndarray:
    vec = np.zeros(schema.width)
    vec[SEXES.index(record.sex)] = 1.0
    if record.age_approx is None:
        vec[4] = 1.0
    else:
        vec[3] = record.age_approx / AGE_DIVISOR
    base = len(SEXES) + 2
    site = record.anatom_site
    vec[base + (schema.sites.index(site) if site in schema.sites else len(schema.sites))] = 1.0
    return vec


def encode_all(records: Sequence[MetadataRecord], schema: FeatureSchema) -> np.ndarray:
    if not records:
        return np.zeros((0, schema.width))
    return np.stack([encode_features(r, schema) for r in records])
