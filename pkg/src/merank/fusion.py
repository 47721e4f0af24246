"""Thurstone Case V fusion of a mapped initial score with pairwise preferences.

Each neighbor j contributes a soft preference y_j = P(query beats j) and a
fixed stored score s_j. The refined score minimises

    sum_j BCE(Phi(s - s_j), y_j) + lam * (s - s_init)**2

exactly (``fuse_exact``), or its probit-linearised ridge surrogate in closed
form (``fuse_closed_form``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConvergenceError, InputError

EXACT, CLOSED_FORM = "exact", "closed_form"


@dataclass(frozen=True)
class PreferenceEvidence:
    neighbor_score: float
    preference: float

    def __post_init__(self):
        if not 0.0 < self.preference < 1.0:
            raise InputError(f"preference must lie strictly inside (0, 1), got {self.preference!r}")
        if not math.isfinite(self.neighbor_score):
            raise InputError("neighbor score must be finite")


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.01
    prob_clip: float = 1e-6
    mode: str = EXACT
    score_range: tuple[float, float] = (1.0, 5.0)
    tol: float = 1e-10
    maxiter: int = 200

    # Case V dispersion; fixed by the model, not a tuning knob.
    sigma = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise InputError("lambda must be >= 0")
        if self.mode not in (EXACT, CLOSED_FORM):
            raise InputError(f"unknown fusion mode {self.mode!r}")
        if not 0.0 < self.prob_clip < 0.5:
            raise InputError("prob_clip must lie in (0, 0.5)")


def normal_cdf(x: float) -> float:
    return kernels.ndtr(x)


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InputError(f"quantile needs p strictly inside (0, 1), got {p!r}")
    return kernels.ndtri(p)


def _arrays(evidence: Sequence[PreferenceEvidence]):
    scores = np.fromiter((e.neighbor_score for e in evidence), dtype=float, count=len(evidence))
    prefs = np.fromiter((e.preference for e in evidence), dtype=float, count=len(evidence))
    return scores, prefs


def _check(evidence, lam) -> None:
    if not evidence and lam <= 0:
        raise InputError("fusion needs evidence or a positive lambda")


def objective(s: float, s_init: float, evidence: Sequence[PreferenceEvidence], lam: float) -> float:
    _check(evidence, lam)
    return kernels.objective(s, s_init, *_arrays(evidence), lam)


def gradient(s: float, s_init: float, evidence: Sequence[PreferenceEvidence], lam: float) -> float:
    return kernels.gradient(s, s_init, *_arrays(evidence), lam)


def _clamp(x: float, score_range) -> float:
    return min(max(x, score_range[0]), score_range[1])


def minimize_exact(s_init: float, evidence: Sequence[PreferenceEvidence], cfg: FusionConfig) -> float:
    """Unclamped global minimiser of the BCE-plus-tether objective."""
    _check(evidence, cfg.lam)
    if not evidence:
        return s_init
    lo, hi = cfg.score_range
    s, iters = kernels.solve_exact(s_init, *_arrays(evidence), cfg.lam, lo - 2.0, hi + 2.0,
                                   cfg.tol, cfg.maxiter)
    if iters < 0:
        raise ConvergenceError(f"exact fusion did not converge in {cfg.maxiter} iterations")
    return s


def fuse_exact(s_init: float, evidence: Sequence[PreferenceEvidence], cfg: FusionConfig) -> float:
    return _clamp(minimize_exact(s_init, evidence, cfg), cfg.score_range)


def closed_form_unclamped(s_init: float, evidence: Sequence[PreferenceEvidence], cfg: FusionConfig) -> float:
    _check(evidence, cfg.lam)
    return kernels.closed_form(s_init, *_arrays(evidence), cfg.lam)


def fuse_closed_form(s_init: float, evidence: Sequence[PreferenceEvidence], cfg: FusionConfig) -> float:
    """Ridge solution over pseudo-observations s_j + Phi^-1(y_j); the
    denominator counts the evidence actually present."""
    return _clamp(closed_form_unclamped(s_init, evidence, cfg), cfg.score_range)


def fuse(s_init: float, evidence: Sequence[PreferenceEvidence], cfg: FusionConfig) -> float:
    if cfg.mode == EXACT:
        return fuse_exact(s_init, evidence, cfg)
    return fuse_closed_form(s_init, evidence, cfg)
