"""Hybrid memory bank: immutable anchor store plus a capacity-bounded contrast store."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backend import Embedding, ImageRef
from .errors import (ChecksumError, DuplicateIdError, ImmutableAnchorError, InputError,
                     MalformedRecordError, VersionMismatchError)
from .scale_map import SCORE_RANGE, LogisticParams

FORMAT_VERSION = 1
DEFAULT_CAPACITY = 1024
AM, CM = "AM", "CM"


@dataclass(frozen=True)
class MemoryItem:
    id: str
    image_ref: ImageRef
    description: str
    embedding: Embedding
    score: float
    reflected: bool = False
    origin: str = AM
    insert_seq: int = -1

    def to_record(self) -> dict:
        return {
            "type": "item",
            "id": self.id,
            "image_ref": self.image_ref.to_dict(),
            "description": self.description,
            "embedding": self.embedding.values.tolist(),
            "score": self.score,
            "reflected": self.reflected,
            "origin": self.origin,
            "insert_seq": self.insert_seq,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MemoryItem":
        return cls(
            id=str(rec["id"]),
            image_ref=ImageRef.from_dict(rec["image_ref"]),
            description=str(rec["description"]),
            embedding=Embedding(np.asarray(rec["embedding"], dtype=float)),
            score=float(rec["score"]),
            reflected=bool(rec["reflected"]),
            origin=str(rec["origin"]),
            insert_seq=int(rec["insert_seq"]),
        )


class _Store:
    """Ordered items with a cached embedding matrix for linear scans."""

    def __init__(self):
        self.items: list[MemoryItem] = []
        self.index: dict[str, int] = {}
        self._matrix: np.ndarray | None = None
        self.next_seq = 0

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def append(self, item: MemoryItem) -> None:
        self.index[item.id] = len(self.items)
        self.items.append(item)
        self.next_seq = max(self.next_seq, item.insert_seq + 1)
        self._matrix = None

    def remove_at(self, pos: int) -> MemoryItem:
        item = self.items.pop(pos)
        self.index = {it.id: k for k, it in enumerate(self.items)}
        self._matrix = None
        return item

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.items:
                self._matrix = np.vstack([it.embedding.values for it in self.items])
            else:
                self._matrix = np.zeros((0, 0))
        return self._matrix


class MemoryBank:
    """Anchor memory (sealed once built or loaded) and contrast memory.

    The bank is mutated in place; the ``insert_*`` functions return it for
    chaining.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, logistic: LogisticParams | None = None,
                 score_range: tuple[float, float] = SCORE_RANGE, embed_dim: int | None = None):
        if capacity < 1:
            raise InputError("capacity must be a positive integer")
        self.capacity = int(capacity)
        self.logistic = logistic
        self.score_range = (float(score_range[0]), float(score_range[1]))
        self.embed_dim = embed_dim
        self.sealed = False
        self._anchors = _Store()
        self._contrasts = _Store()

    @property
    def anchors(self) -> list[MemoryItem]:
        return self._anchors.items

    @property
    def contrasts(self) -> list[MemoryItem]:
        return self._contrasts.items

    def anchor_matrix(self) -> np.ndarray:
        return self._anchors.matrix

    def contrast_matrix(self) -> np.ndarray:
        return self._contrasts.matrix

    def get(self, item_id: str) -> MemoryItem:
        for store in (self._anchors, self._contrasts):
            if item_id in store.index:
                return store.items[store.index[item_id]]
        raise KeyError(item_id)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._anchors.index or item_id in self._contrasts.index

    def seal(self) -> None:
        self.sealed = True

    def _validate(self, item: MemoryItem) -> None:
        lo, hi = self.score_range
        if not (math.isfinite(item.score) and lo <= item.score <= hi):
            raise InputError(f"item {item.id!r}: score {item.score} outside {self.score_range}")
        if self.embed_dim is None:
            self.embed_dim = item.embedding.dim
        elif item.embedding.dim != self.embed_dim:
            raise InputError(f"item {item.id!r}: embedding dim {item.embedding.dim} != {self.embed_dim}")
        if item.id in self:
            raise DuplicateIdError(f"duplicate memory id {item.id!r}")

    def structurally_equal(self, other: "MemoryBank") -> bool:
        return (self.capacity == other.capacity and self.logistic == other.logistic
                and self.score_range == other.score_range and self.embed_dim == other.embed_dim
                and self.anchors == other.anchors and self.contrasts == other.contrasts)


def insert_anchor(bank: MemoryBank, item: MemoryItem) -> MemoryBank:
    if bank.sealed:
        raise ImmutableAnchorError("anchor memory is sealed")
    bank._validate(item)
    bank._anchors.append(replace(item, origin=AM, insert_seq=bank._anchors.next_seq))
    return bank


def insert_contrast(bank: MemoryBank, item: MemoryItem) -> MemoryBank:
    bank._validate(item)
    bank._contrasts.append(replace(item, origin=CM, insert_seq=bank._contrasts.next_seq))
    if len(bank._contrasts) > bank.capacity:
        prune_contrast(bank)
    return bank


def eviction_order(embeddings: np.ndarray, seqs, capacity: int) -> list[int]:
    """Positions removed, in order, to shrink the set to ``capacity``.

    Each step drops the item whose highest cosine to any other remaining item
    is largest, never the most recent one (largest seq); ties go to the
    older item.
    """
    seqs = np.asarray(seqs)
    gram = embeddings @ embeddings.T
    gram = 0.5 * (gram + gram.T)
    np.fill_diagonal(gram, -np.inf)
    alive = np.ones(len(seqs), dtype=bool)
    newest = int(np.argmax(seqs))
    removed = []
    while alive.sum() > capacity:
        sub = gram[np.ix_(alive, alive)]
        idx = np.flatnonzero(alive)
        max_sim = sub.max(axis=1) if len(idx) > 1 else np.full(1, -np.inf)
        best = None
        for k, pos in enumerate(idx):
            if pos == newest:
                continue
            key = (-max_sim[k], seqs[pos])
            if best is None or key < best[0]:
                best = (key, pos)
        removed.append(int(best[1]))
        alive[best[1]] = False
    return removed


def prune_contrast(bank: MemoryBank) -> MemoryBank:
    store = bank._contrasts
    if len(store) <= bank.capacity:
        return bank
    order = eviction_order(store.matrix, [it.insert_seq for it in store], bank.capacity)
    doomed = {store.items[p].id for p in order}
    for pos in sorted((store.index[i] for i in doomed), reverse=True):
        store.remove_at(pos)
    return bank


# --- persistence ------------------------------------------------------------

def _dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def bank_header(bank: MemoryBank, checksum: str, n_items: int) -> dict:
    lp = bank.logistic
    return {
        "type": "header",
        "format_version": FORMAT_VERSION,
        "score_range": list(bank.score_range),
        "embed_dim": bank.embed_dim,
        "capacity": bank.capacity,
        "beta": list(lp.betas) if lp else None,
        "raw_lo": lp.raw_lo if lp else None,
        "raw_hi": lp.raw_hi if lp else None,
        "n_items": n_items,
        "checksum": checksum,
    }


def save_bank(bank: MemoryBank, path, include_anchors: bool = True,
              include_contrasts: bool = True) -> None:
    items = (bank.anchors if include_anchors else []) + (bank.contrasts if include_contrasts else [])
    lines = [_dumps(it.to_record()) for it in items]
    body = "".join(line + "\n" for line in lines)
    digest = hashlib.sha256(body.encode()).hexdigest()
    header = _dumps(bank_header(bank, digest, len(lines)))
    Path(path).write_text(header + "\n" + body, encoding="utf-8")


def _parse_line(text: str, lineno: int) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(rec, dict):
        raise MalformedRecordError(lineno, "record is not an object")
    return rec


def load_bank(path) -> MemoryBank:
    """Read a bank file; the anchor memory comes back sealed."""
    raw = Path(path).read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise MalformedRecordError(len(lines), "truncated record (no trailing newline)")
    if not lines:
        raise MalformedRecordError(1, "missing header")
    head = _parse_line(lines[0], 1)
    if head.get("type") != "header":
        raise MalformedRecordError(1, "first record is not a header")
    if head.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"bank format version {head.get('format_version')!r}, "
                                   f"expected {FORMAT_VERSION}")
    try:
        beta = head["beta"]
        logistic = None if beta is None else LogisticParams(*map(float, beta), float(head["raw_lo"]),
                                                            float(head["raw_hi"]))
        bank = MemoryBank(int(head["capacity"]), logistic, tuple(head["score_range"]), head["embed_dim"])
        n_items = int(head["n_items"])
        checksum = str(head["checksum"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecordError(1, f"bad header field: {exc}") from None

    body = lines[1:]
    if len(body) != n_items:
        raise MalformedRecordError(len(lines) + 1, f"expected {n_items} item records, found {len(body)}")
    if hashlib.sha256("".join(line + "\n" for line in body).encode()).hexdigest() != checksum:
        raise ChecksumError(f"{path}: checksum mismatch")

    for k, text in enumerate(body, start=2):
        rec = _parse_line(text, k)
        if rec.get("type") != "item":
            raise MalformedRecordError(k, "expected an item record")
        try:
            item = MemoryItem.from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(k, f"bad item field: {exc}") from None
        if item.origin not in (AM, CM):
            raise MalformedRecordError(k, f"unknown origin {item.origin!r}")
        try:
            bank._validate(item)
        except (InputError, DuplicateIdError) as exc:
            raise MalformedRecordError(k, str(exc)) from None
        store = bank._anchors if item.origin == AM else bank._contrasts
        if store.items and item.insert_seq <= store.items[-1].insert_seq:
            raise MalformedRecordError(k, "insert_seq not strictly increasing")
        store.append(item)
    bank.seal()
    return bank


def load_contrasts_into(bank: MemoryBank, path) -> MemoryBank:
    """Append the contrast items of a saved bank file to ``bank``'s contrast memory."""
    other = load_bank(path)
    for item in other.contrasts:
        bank._validate(item)
        bank._contrasts.append(item)
    if len(bank._contrasts) > bank.capacity:
        prune_contrast(bank)
    return bank
