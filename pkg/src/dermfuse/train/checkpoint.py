"""Binary checkpoint files (little-endian).

Layout::

    magic      8 bytes  b"DRMFCKPT"
    version    u32
    fingerprint 32 bytes (sha256 of the architecture description)
    count      u32
    count x    { u32 name length, utf-8 name, u32 rank, rank x u64 extent, float64 values }
    meta       u32 length + utf-8 JSON (rng state, architecture description, extras)
    checksum   32 bytes sha256 over everything above
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CompatibilityError, FormatError

MAGIC = b"DRMFCKPT"
VERSION = 1


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _model_arrays(model) -> dict[str, np.ndarray]:
    return model.state_arrays()


def dumps(model, rng_state: dict | None = None, extra: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), model.fingerprint()]
    arrays = _model_arrays(model)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = json.dumps({"rng": rng_state, "model": model.describe(), "extra": extra or {}},
                      sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model, path, rng_state: dict | None = None, extra: dict | None = None) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    blob = dumps(model, rng_state, extra)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse(blob: bytes) -> tuple[bytes, dict[str, np.ndarray], dict]:
    """Validate and decode a checkpoint: (fingerprint, tensors, metadata)."""
    if len(blob) < len(MAGIC) + 4 + 32 + 4 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("checkpoint checksum mismatch (file corrupted)")
    fingerprint = r.take(32)
    (count,) = r.unpack("<I")
    tensors = {}
    try:
        for _ in range(count):
            (n,) = r.unpack("<I")
            name = r.take(n).decode("utf-8")
            (rank,) = r.unpack("<I")
            shape = r.unpack(f"<{rank}Q")
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        (n,) = r.unpack("<I")
        meta = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint payload unreadable: {exc}") from None
    if r.pos != len(body):
        raise FormatError("trailing bytes after checkpoint payload")
    return fingerprint, tensors, meta


def _targets(model) -> dict[str, np.ndarray]:
    """Live arrays to overwrite in place (parameter data or registered buffers)."""
    out = {n: p.data for n, p in model.named_parameters()}
    out.update(dict(model.named_buffers()))
    return out


def loads(blob: bytes, model, partial: bool = False, prefix: str = "") -> LoadReport:
    """Restore tensors into ``model``; nothing is assigned unless validation passes.

    A full load needs a matching architecture fingerprint and an identical
    tensor directory.  ``partial=True`` loads every tensor whose name (after
    prepending ``prefix``) and shape match, reporting the rest as skipped.
    """
    fingerprint, tensors, meta = parse(blob)
    targets = _targets(model)
    report = LoadReport(metadata=meta)
    plan = []
    if not partial:
        if fingerprint != model.fingerprint():
            raise CompatibilityError("architecture fingerprint mismatch; use a partial load for transfer")
        if set(tensors) != set(targets):
            raise CompatibilityError("tensor directory differs from the model")
    for name, arr in tensors.items():
        dest = targets.get(prefix + name)
        if dest is None or dest.shape != arr.shape:
            if not partial:
                raise CompatibilityError(f"tensor {name!r} does not fit the model")
            report.skipped.append(name)
            continue
        plan.append((dest, arr))
        report.loaded.append(prefix + name)
    got = set(report.loaded)
    report.missing = [n for n in targets if n not in got]
    for dest, arr in plan:
        dest[...] = arr
    return report


def load_checkpoint(path, model, partial: bool = False, prefix: str = "") -> LoadReport:
    return loads(Path(path).read_bytes(), model, partial, prefix)


def read_metadata(path) -> dict:
    return parse(Path(path).read_bytes())[2]
