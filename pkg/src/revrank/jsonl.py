"""JSON Lines helpers. An optional first line ``{"_meta": {...}}`` carries
the settings that produced the file; readers skip it."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping


def dumps(row) -> str:
    return json.dumps(row, sort_keys=True, ensure_ascii=False)


def write_jsonl(path, rows: Iterable, meta: Mapping | None = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(dumps({"_meta": dict(meta)}) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")
            n += 1
    return n


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                from .errors import DataError
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if isinstance(row, dict) and "_meta" in row:
                continue
            yield row


def read_meta(path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        row = json.loads(first)
    except ValueError:
        return None
    return row.get("_meta") if isinstance(row, dict) else None


def exists(path) -> bool:
    return Path(path).is_file()
