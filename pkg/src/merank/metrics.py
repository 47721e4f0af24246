"""Correlation and distribution-collapse metrics."""
from __future__ import annotations

import copy
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedCorrelationError

log = logging.getLogger(__name__)

NORM_TOL = 1e-9


@dataclass(frozen=True)
class HistogramSpec:
    bins: int = 100
    lo: float = 1.0
    hi: float = 5.0

    def __post_init__(self):
        if self.bins < 2:
            raise InputError("histogram needs at least 2 bins")
        if not self.lo < self.hi:
            raise InputError("histogram range must satisfy lo < hi")


@dataclass
class EvalReport:
    n: int
    plcc: float
    srcc: float
    js: float
    entropy: float
    effective_bins: float
    pred_hist: list[float] = field(default_factory=list)
    ref_hist: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("inputs must be 1-D and of equal length")
    if len(x) < 3:
        raise InputError("correlation needs at least 3 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    return min(max(r, -1.0), 1.0)


def plcc(x, y) -> float:
    return _pearson(*_pair(x, y))


def srcc(x, y) -> float:
    """Spearman correlation: Pearson on tie-averaged ranks."""
    x, y = _pair(x, y)
    return _pearson(rankdata(x), rankdata(y))


def wavg(values: Sequence[float], sizes: Sequence[float]) -> float:
    if len(values) == 0 or len(values) != len(sizes):
        raise InputError("wavg needs equal-length, nonempty inputs")
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes <= 0):
        raise InputError("dataset sizes must be positive")
    return float(np.dot(np.asarray(values, dtype=float), sizes) / sizes.sum())


def histogram(values, spec: HistogramSpec = HistogramSpec()) -> np.ndarray:
    """Normalised counts over shared equal-width bins (last bin right-closed)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InputError("histogram of empty input")
    outside = (v < spec.lo) | (v > spec.hi)
    if outside.any():
        log.warning("%d values outside [%g, %g] clamped into range", int(outside.sum()), spec.lo, spec.hi)
        v = np.clip(v, spec.lo, spec.hi)
    counts, _ = np.histogram(v, bins=spec.bins, range=(spec.lo, spec.hi))
    return counts / counts.sum()


def _prob(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise InputError("expected a normalised probability vector")
    return p


def _kl2(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def js_divergence(p, q) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1]."""
    p, q = _prob(p), _prob(q)
    if p.shape != q.shape:
        raise InputError("probability vectors differ in length")
    m = 0.5 * (p + q)
    js = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return min(max(js, 0.0), 1.0)


def entropy_and_effective_bins(p) -> tuple[float, float]:
    """Shannon entropy in nats and its exponential (effective number of bins)."""
    p = _prob(p)
    nz = p[p > 0]
    h = float(-np.sum(nz * np.log(nz)))
    h = max(h, 0.0)
    return h, math.exp(h)


def evaluate(pred, ref, spec: HistogramSpec = HistogramSpec()) -> EvalReport:
    """Full report for predictions against reference scores."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    hp, hr = histogram(pred, spec), histogram(ref, spec)
    h, eff = entropy_and_effective_bins(hp)
    return EvalReport(len(pred), plcc(pred, ref), srcc(pred, ref), js_divergence(hp, hr), h, eff,
                      hp.tolist(), hr.tolist())


def order_robustness(queries, gt, bank, backend, cfg, n_runs: int = 5, seed: int = 0,
                     spec: HistogramSpec = HistogramSpec()) -> dict:
    """Re-run the stream under ``n_runs`` seeded permutations.

    Each run starts from a copy of ``bank`` (sealed anchors, initial contrast
    memory). Returns ``{metric: {"mean", "std", "runs"}}`` with the sample std.
    """
    from .pipeline import run_stream

    if n_runs < 2:
        raise InputError("order robustness needs n_runs >= 2")
    queries = list(queries)
    gt_by_id = dict(zip((q.id for q in queries), map(float, gt)))
    rng = np.random.default_rng(seed)
    per_run: dict[str, list[float]] = {"plcc": [], "srcc": [], "js": [], "entropy": [], "effective_bins": []}
    for _ in range(n_runs):
        order = rng.permutation(len(queries))
        results = run_stream([queries[k] for k in order], copy.deepcopy(bank), backend, cfg)
        # canonical order, so that runs differing only by permutation sum identically
        ok = sorted((r for r in results if r.error is None), key=lambda r: r.id)
        report = evaluate([r.refined_score for r in ok], [gt_by_id[r.id] for r in ok], spec)
        for key in per_run:
            per_run[key].append(getattr(report, key))
    # statistics computes exactly, so identical runs give a std of exactly 0
    return {key: {"mean": statistics.fmean(v), "std": statistics.stdev(v), "runs": v}
            for key, v in per_run.items()}
