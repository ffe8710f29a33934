"""Bit-stable CSV/text output and atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def format_float(x) -> str:
    """17 significant digits, '.' decimal point."""
    return f"{float(x):.17g}"


def format_cell(x) -> str:
    if isinstance(x, (bool,)):
        return "1" if x else "0"
    if isinstance(x, (int,)):
        return str(x)
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    try:
        return format_float(x)
    except (TypeError, ValueError):
        return str(x)


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_bytes_atomic(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence], footer: Sequence[str] = ()) -> str:
    lines = [",".join(header)]
    lines += [",".join(format_cell(c) for c in row) for row in rows]
    lines += [f"# {line}" for line in footer]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, footer=()) -> Path:
    return write_text_atomic(path, csv_text(header, rows, footer))


def report_text(items: dict) -> str:
    """``key = value`` per line, insertion order."""
    return "".join(f"{k} = {format_cell(v)}\n" for k, v in items.items())


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, artifacts: Sequence[Path], provenance: dict) -> Path:
    out_dir = Path(out_dir)
    entries = [{"path": str(Path(p).relative_to(out_dir)), "sha256": sha256_file(p)}
               for p in sorted(artifacts)]
    doc = dict(provenance)
    doc["artifacts"] = entries
    return write_text_atomic(out_dir / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
