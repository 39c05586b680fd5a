"""Line-delimited JSON dataset files: one request record per line."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .datagen import RequestRecord
from .errors import ValidationError


def dumps_record(rec: RequestRecord) -> str:
    return json.dumps(rec.to_dict(), separators=(",", ":"), ensure_ascii=False)


def write_jsonl(records: Iterable[RequestRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[RequestRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield RequestRecord.from_dict(json.loads(line))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record ({exc})") from exc


def read_jsonl(path: str | Path, labeled: bool = False) -> list[RequestRecord]:
    records = list(iter_jsonl(path))
    if labeled:
        for rec in records:
            rec.validate_labels()
    return records
