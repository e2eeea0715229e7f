"""Artifact persistence: atomic writes, versioned CSV and JSON, run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import platform
import tempfile
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInputError

CSV_VERSION = 1
JSON_VERSION = 1


class SchemaError(InvalidInputError):
    """An input artifact does not follow its schema."""


def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(v) -> str:
    """Shortest round-tripping text for numbers; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, kind: str, header, rows, meta=None) -> Path:
    """CSV with a leading ``# agglo <kind> v<version> key=value ...`` line."""
    buf = io.StringIO()
    extra = "".join(f" {k}={v}" for k, v in sorted((meta or {}).items()))
    buf.write(f"# agglo {kind} v{CSV_VERSION}{extra}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return atomic_write(path, buf.getvalue())


def read_csv(path, kind: str, required=()):
    """Return ``(meta, header, rows)``; rows are lists of strings."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        parts = first.split()
        if len(parts) < 4 or parts[:2] != ["#", "agglo"] or parts[2] != kind:
            raise SchemaError(f"{path}: expected an agglo {kind} CSV header line, got {first[:60]!r}")
        if parts[3] != f"v{CSV_VERSION}":
            raise SchemaError(f"{path}: unsupported {kind} schema version {parts[3]}")
        meta = dict(p.split("=", 1) for p in parts[4:] if "=" in p)
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing column header") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}")
    return meta, header, rows


def column(path, header, rows, name, conv=float):
    j = header.index(name)
    try:
        return [conv(r[j]) for r in rows]
    except ValueError as exc:
        raise SchemaError(f"{path}: bad value in column {name!r}: {exc}") from None


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps(obj))


def read_json(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise SchemaError(f"{path}: missing field 'schema_version'")
    if kind is not None and doc.get("kind") != kind:
        raise SchemaError(f"{path}: field 'kind' is {doc.get('kind')!r}, expected {kind!r}")
    return doc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def child_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed derived from the global one."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    import scipy

    return {"agglo": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, command: str, config: dict, seed: int, inputs, outputs) -> Path:
    """Run record; ``timestamp`` is the only field that varies between identical runs."""
    def entry(p):
        p = Path(p)
        return {"path": str(p), "sha256": sha256_file(p) if p.is_file() else None}

    doc = {"schema_version": JSON_VERSION, "kind": "run_manifest", "command": command,
           "config": config, "config_hash": config_hash(config), "seed": int(seed),
           "inputs": [entry(p) for p in sorted(map(str, inputs))],
           "outputs": [entry(p) for p in sorted(map(str, outputs))],
           "versions": versions(),
           "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    return write_json(path, doc)
