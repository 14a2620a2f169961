"""Whole-state JSON snapshots with atomic replace."""

from __future__ import annotations

import json
import os
from pathlib import Path

from ..errors import ZtpomError


class SnapshotError(ZtpomError):
    code = "snapshot-error"


def canonical_json(doc: dict) -> str:
    # stable bytes: same state always serializes identically
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_snapshot(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    try:
        tmp.write_text(canonical_json(doc), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise SnapshotError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path: Path) -> dict:
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise SnapshotError(f"snapshot not found: {path}") from exc
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"corrupt snapshot {path}: bad JSON at line {exc.lineno}") from exc
    if not isinstance(doc, dict) or doc.get("format") != 1:
        raise SnapshotError(f"corrupt snapshot {path}: unknown format")
    return doc
