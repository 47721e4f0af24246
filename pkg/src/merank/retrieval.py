"""Neighborhood construction: budget split, GT-stratified anchor search, top-k contrast search.

Every search is an exact linear scan. Results are ordered by descending
cosine similarity with ties going to the smaller item id.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import Embedding, derived_rng
from .errors import InputError
from .memory import AM, CM, MemoryBank, MemoryItem


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 32
    bins: int = 5
    score_range: tuple[float, float] = (1.0, 5.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise InputError("K must be non-negative")
        if self.bins < 1:
            raise InputError("B must be >= 1")
        if not self.score_range[0] < self.score_range[1]:
            raise InputError("score range must satisfy lo < hi")


@dataclass
class Neighborhood:
    items: list[MemoryItem] = field(default_factory=list)
    similarities: list[float] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]


def split_budget(k: int) -> tuple[int, int]:
    if k < 1:
        raise InputError("budget K must be >= 1")
    k_a = k // 2
    return k_a, k - k_a


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))


def _similarities(items: list[MemoryItem], matrix: np.ndarray, query: Embedding) -> np.ndarray:
    if not items:
        return np.zeros(0)
    if matrix.shape[1] != query.dim:
        raise InputError(f"dimension mismatch: {matrix.shape[1]} vs {query.dim}")
    return matrix @ query.values


def _ranked(positions, sims, items) -> list[int]:
    return sorted(positions, key=lambda p: (-sims[p], items[p].id))


def score_bin(score: float, bins: int, score_range: tuple[float, float]) -> int:
    """Equal-width bin index; the last bin is closed on the right."""
    lo, hi = score_range
    k = int(np.floor((score - lo) / (hi - lo) * bins))
    return min(max(k, 0), bins - 1)


def retrieve_stratified(anchors: list[MemoryItem], query: Embedding, k_a: int, cfg: RetrievalConfig,
                        rng: np.random.Generator | None = None, exclude_id: str | None = None,
                        matrix: np.ndarray | None = None) -> list[tuple[MemoryItem, float]]:
    """Per-bin nearest anchors, ``k_a // B`` from each bin plus the remainder
    spread over randomly chosen distinct bins; shortfalls are backfilled with
    the globally nearest unselected anchors."""
    if k_a < 0:
        raise InputError("K_A must be non-negative")
    if k_a == 0 or not anchors:
        return []
    if matrix is None:
        matrix = np.vstack([it.embedding.values for it in anchors])
    sims = _similarities(anchors, matrix, query)
    eligible = [p for p, it in enumerate(anchors) if it.id != exclude_id]

    B = cfg.bins
    per_bin: list[list[int]] = [[] for _ in range(B)]
    for p in eligible:
        per_bin[score_bin(anchors[p].score, B, cfg.score_range)].append(p)

    base, rem = divmod(k_a, B)
    quota = [base] * B
    if rem:
        rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        for b in rng.choice(B, size=rem, replace=False):
            quota[int(b)] += 1

    chosen: list[int] = []
    for b in range(B):
        chosen.extend(_ranked(per_bin[b], sims, anchors)[:quota[b]])
    deficit = k_a - len(chosen)
    if deficit > 0:
        taken = set(chosen)
        rest = [p for p in eligible if p not in taken]
        chosen.extend(_ranked(rest, sims, anchors)[:deficit])
    return [(anchors[p], float(sims[p])) for p in _ranked(chosen, sims, anchors)]


def retrieve_topk(contrasts: list[MemoryItem], query: Embedding, k_c: int, exclude_id: str | None = None,
                  matrix: np.ndarray | None = None) -> list[tuple[MemoryItem, float]]:
    if k_c < 0:
        raise InputError("K_C must be non-negative")
    if k_c == 0 or not contrasts:
        return []
    if matrix is None:
        matrix = np.vstack([it.embedding.values for it in contrasts])
    sims = _similarities(contrasts, matrix, query)
    eligible = [p for p, it in enumerate(contrasts) if it.id != exclude_id]
    return [(contrasts[p], float(sims[p])) for p in _ranked(eligible, sims, contrasts)[:k_c]]


def retrieve_neighborhood(bank: MemoryBank, query: Embedding, query_id: str | None,
                          cfg: RetrievalConfig) -> Neighborhood:
    """Anchor part then contrast part; a store that cannot fill its half of
    the budget hands the unused slots to the other store."""
    if cfg.k == 0:
        return Neighborhood()
    k_a, k_c = split_budget(cfg.k)
    rng = derived_rng(cfg.rng_seed, "stratify", query_id)
    am_mat, cm_mat = bank.anchor_matrix(), bank.contrast_matrix()

    from_cm = retrieve_topk(bank.contrasts, query, k_c, query_id, cm_mat)
    k_a += k_c - len(from_cm)
    from_am = retrieve_stratified(bank.anchors, query, k_a, cfg, rng, query_id, am_mat)
    short = k_a - len(from_am)
    if short > 0 and len(from_cm) == k_c:
        from_cm = retrieve_topk(bank.contrasts, query, k_c + short, query_id, cm_mat)

    hood = Neighborhood()
    for part, label in ((from_am, AM), (from_cm, CM)):
        for item, sim in part:
            hood.items.append(item)
            hood.similarities.append(sim)
            hood.sources.append(label)
    return hood
