#!/usr/bin/env python3
"""Validate EnergyRank dataset files against a JSON Schema.

Deliberately independent of the ``energyrank`` package: it only knows the
on-disk format, so a bug in the package's reader cannot hide a bad file.

    python tools/validate_dataset.py data/train.jsonl data/val.jsonl [--labeled]

Exit status is 0 when every line of every file validates, 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import sys

from jsonschema import Draft202012Validator

N_SCORES = 11
N_ATTRIBUTES = 114

INTENT = {
    "type": "object",
    "required": ["scores", "tokens", "slot_labels", "relevance"],
    "additionalProperties": False,
    "properties": {
        "scores": {"type": "array", "minItems": N_SCORES, "maxItems": N_SCORES,
                   "items": {"type": "number", "minimum": 0.0, "maximum": 1.0}},
        "tokens": {"type": "array", "items": {"type": "string"}},
        "slot_labels": {"type": "array", "items": {"type": "string"}},
        "relevance": {"type": "integer", "minimum": 0},
    },
}

RECORD = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["request_id", "intents", "info_state"],
    "additionalProperties": False,
    "properties": {
        "request_id": {"type": "string", "minLength": 1},
        "intents": {"type": "array", "minItems": 1, "items": INTENT},
        "info_state": {"type": "object", "minProperties": N_ATTRIBUTES, "maxProperties": N_ATTRIBUTES,
                       "additionalProperties": {"type": "string"}},
    },
}


def semantic_errors(rec: dict, labeled: bool) -> list[str]:
    """Checks a schema cannot express: token/label alignment and a unique gold intent."""
    errs = []
    for i, it in enumerate(rec["intents"]):
        if len(it["tokens"]) != len(it["slot_labels"]):
            errs.append(f"intent {i}: {len(it['tokens'])} tokens but {len(it['slot_labels'])} slot labels")
    if labeled:
        rel = [it["relevance"] for it in rec["intents"]]
        if rel.count(max(rel)) != 1:
            errs.append("no unique most-relevant intent")
    return errs


def validate_file(path: str, labeled: bool, out=sys.stderr) -> int:
    validator = Draft202012Validator(RECORD)
    bad, seen = 0, set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                print(f"{path}:{lineno}: not JSON ({exc.msg})", file=out)
                bad += 1
                continue
            errs = [e.message for e in validator.iter_errors(rec)]
            if not errs:
                errs = semantic_errors(rec, labeled)
                if rec["request_id"] in seen:
                    errs.append(f"duplicate request_id {rec['request_id']!r}")
                seen.add(rec["request_id"])
            for e in errs:
                print(f"{path}:{lineno}: {e}", file=out)
            bad += bool(errs)
    return bad


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("files", nargs="+")
    ap.add_argument("--labeled", action="store_true", help="also require a unique gold intent per request")
    args = ap.parse_args(argv)
    total = 0
    for path in args.files:
        bad = validate_file(path, args.labeled)
        print(f"{path}: {'ok' if bad == 0 else f'{bad} invalid line(s)'}")
        total += bad
    return 0 if total == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
