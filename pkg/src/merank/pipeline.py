"""Online re-ranking loop and offline anchor-memory construction."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .backend import ImageRef, QualityBackend
from .errors import BackendError, InputError, MerankError
from .fusion import FusionConfig, PreferenceEvidence, fuse
from .memory import DEFAULT_CAPACITY, MemoryBank, MemoryItem, insert_anchor, insert_contrast
from .retrieval import RetrievalConfig, retrieve_neighborhood
from .scale_map import fit_logistic, logistic_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    epsilon: float = 0.75
    capacity: int = DEFAULT_CAPACITY
    score_range: tuple[float, float] = (1.0, 5.0)
    compare_workers: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError("reflection gate epsilon must be > 0")
        if self.capacity < 1:
            raise InputError("capacity must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NeighborEvidence:
    id: str
    origin: str
    insert_seq: int
    similarity: float
    score: float
    preference: float | None  # None when the comparison failed


@dataclass
class QueryResult:
    id: str
    raw_score: float | None = None
    mapped_score: float | None = None
    refined_score: float | None = None
    neighbors: list[NeighborEvidence] = field(default_factory=list)
    reflected: bool = False
    description: str = ""
    cm_insert_seq: int | None = None
    error: str | None = None
    wall_time: float = 0.0
    gt: float | None = None  # carried through from the stream for evaluation only

    def to_record(self) -> dict:
        """Serializable form; wall time is left out so reruns are byte-identical."""
        rec = asdict(self)
        rec.pop("wall_time")
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "QueryResult":
        rec = dict(rec)
        rec["neighbors"] = [NeighborEvidence(**n) for n in rec.get("neighbors", [])]
        return cls(**rec)


def build_anchor_memory(labeled: Sequence[tuple[ImageRef, float]], backend: QualityBackend,
                        cfg: PipelineConfig, fit_seed: int = 0) -> tuple[MemoryBank, list[dict]]:
    """Assess, calibrate, describe and embed a labeled set into a sealed anchor memory.

    Returns the bank and a per-item trace (raw, mapped, gt, reflected).
    """
    if len(labeled) < 10:
        raise InputError("anchor memory needs at least 10 labeled items")
    assessments = [backend.assess(ref) for ref, _ in labeled]
    params = fit_logistic([(a.raw_score, g) for a, (_, g) in zip(assessments, labeled)],
                          cfg.score_range, seed=fit_seed)
    bank = MemoryBank(cfg.capacity, params, cfg.score_range)
    trace = []
    for (ref, gt), a in zip(labeled, assessments):
        mapped = logistic_map(a.raw_score, params, cfg.score_range)
        reflected = abs(gt - mapped) > cfg.epsilon
        if reflected:
            desc = backend.reflect(ref, a.reasoning, mapped, gt)
        else:
            desc = backend.summarize(a.reasoning)
        item = MemoryItem(ref.id, ref, desc, backend.embed(desc), float(gt), reflected)
        insert_anchor(bank, item)
        trace.append({"id": ref.id, "raw_score": a.raw_score, "mapped_score": mapped,
                      "gt": float(gt), "reflected": reflected})
    bank.seal()
    return bank, trace


def _compare_all(backend: QualityBackend, query: ImageRef, refs: list[ImageRef],
                 workers: int) -> list[float | None]:
    def one(ref):
        try:
            return backend.compare(query, ref)
        except MerankError as exc:
            log.warning("query %s: comparison with %s failed (%s); dropping neighbor", query.id, ref.id, exc)
            return None

    if workers > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, refs))  # map keeps neighbor order
    return [one(r) for r in refs]


def process_query(query: ImageRef, bank: MemoryBank, backend: QualityBackend,
                  cfg: PipelineConfig) -> QueryResult:
    """Score one query and consolidate it into contrast memory (mutates ``bank``)."""
    if bank.logistic is None:
        raise InputError("memory bank carries no fitted logistic mapping")
    t0 = time.perf_counter()
    result = QueryResult(query.id)
    try:
        assessment = backend.assess(query)
        result.raw_score = assessment.raw_score
        s_init = logistic_map(assessment.raw_score, bank.logistic, cfg.score_range)
        result.mapped_score = s_init
        desc = backend.summarize(assessment.reasoning)
        emb = backend.embed(desc)

        hood = retrieve_neighborhood(bank, emb, query.id, cfg.retrieval)
        prefs = _compare_all(backend, query, [it.image_ref for it in hood.items], cfg.compare_workers)
        evidence = []
        for item, sim, origin, p in zip(hood.items, hood.similarities, hood.sources, prefs):
            result.neighbors.append(NeighborEvidence(item.id, origin, item.insert_seq, sim, item.score, p))
            if p is not None:
                evidence.append(PreferenceEvidence(item.score, p))

        if evidence or cfg.fusion.lam > 0:
            refined = fuse(s_init, evidence, cfg.fusion)
        else:
            refined = s_init
        result.refined_score = refined

        if abs(refined - s_init) > cfg.epsilon:
            result.reflected = True
            desc = backend.reflect(query, assessment.reasoning, s_init, refined)
            emb = backend.embed(desc)
        result.description = desc
    except BackendError as exc:
        raise type(exc)(f"query {query.id}: {exc}") from exc

    insert_contrast(bank, MemoryItem(query.id, query, desc, emb, refined, result.reflected))
    result.cm_insert_seq = bank.get(query.id).insert_seq
    result.wall_time = time.perf_counter() - t0
    return result


def run_stream(queries: Iterable[ImageRef], bank: MemoryBank, backend: QualityBackend,
               cfg: PipelineConfig) -> list[QueryResult]:
    """Process queries strictly in arrival order; a failing query is recorded
    in its row and the stream carries on."""
    queries = list(queries)
    if not queries:
        raise InputError("query stream is empty")
    results = []
    for q in queries:
        try:
            results.append(process_query(q, bank, backend, cfg))
        except MerankError as exc:
            log.error("query %s failed: %s", q.id, exc)
            results.append(QueryResult(q.id, error=f"{type(exc).__name__}: {exc}"))
    return results
