"""JSONL readers and writers for streams, synthetic worlds and result files."""
from __future__ import annotations

import json
from typing import Iterable, Iterator

from .backend import ImageRef, SyntheticItem
from .errors import InputError, MalformedRecordError
from .pipeline import QueryResult


def dumps(rec) -> str:
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)``; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                raise MalformedRecordError(lineno, "truncated record (no trailing newline)")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise MalformedRecordError(lineno, "record is not an object")
            yield lineno, rec


def load_stream(path) -> tuple[list[ImageRef], list[float | None]]:
    """Query or labeled-set records ``{id, payload, gt?}``."""
    refs, gts, seen = [], [], set()
    for lineno, rec in read_jsonl(path):
        if "id" not in rec:
            raise MalformedRecordError(lineno, "missing 'id'")
        ref = ImageRef(str(rec["id"]), str(rec.get("payload", rec["id"])))
        if ref.id in seen:
            raise MalformedRecordError(lineno, f"duplicate id {ref.id!r}")
        seen.add(ref.id)
        refs.append(ref)
        gt = rec.get("gt")
        gts.append(None if gt is None else float(gt))
    if not refs:
        raise InputError(f"{path}: no records")
    return refs, gts


def save_stream(path, refs: Iterable[ImageRef], gts: Iterable[float | None]) -> None:
    recs = []
    for ref, gt in zip(refs, gts):
        rec = {"id": ref.id, "payload": ref.payload}
        if gt is not None:
            rec["gt"] = gt
        recs.append(rec)
    write_jsonl(path, recs)


def load_world(path) -> list[SyntheticItem]:
    items = []
    for lineno, rec in read_jsonl(path):
        try:
            items.append(SyntheticItem.from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(lineno, f"bad synthetic item: {exc}") from None
    return items


def save_results(path, results: Iterable[QueryResult]) -> None:
    write_jsonl(path, (r.to_record() for r in results))


def load_results(path) -> list[QueryResult]:
    out = []
    for lineno, rec in read_jsonl(path):
        try:
            out.append(QueryResult.from_record(rec))
        except TypeError as exc:
            raise MalformedRecordError(lineno, f"bad result record: {exc}") from None
    return out
