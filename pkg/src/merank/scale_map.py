"""Five-parameter logistic mapping from raw backend scores to the target scale."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import FitError, InputError

log = logging.getLogger(__name__)

SCORE_RANGE = (1.0, 5.0)
MONOTONE_GRID = 1000
MIN_PAIRS = 10
N_RESTARTS = 5
PENALTY_GRID = 200
PENALTY_WEIGHT = 1e4


@dataclass(frozen=True)
class LogisticParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float
    raw_lo: float
    raw_hi: float

    @property
    def betas(self) -> tuple[float, float, float, float, float]:
        return (self.beta1, self.beta2, self.beta3, self.beta4, self.beta5)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def identity(cls, raw_lo: float = 1.0, raw_hi: float = 5.0) -> "LogisticParams":
        return cls(0.0, 1.0, 0.0, 1.0, 0.0, raw_lo, raw_hi)


def _logistic_term(z):
    # 1/2 - 1/(1 + e^z), written so neither branch overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = 0.5 - ez / (1.0 + ez)
    ez = np.exp(z[~pos])
    out[~pos] = 0.5 - 1.0 / (1.0 + ez)
    return out


def evaluate(raw, betas) -> np.ndarray:
    """Unclamped mapping for an array of raw scores."""
    b1, b2, b3, b4, b5 = betas
    raw = np.asarray(raw, dtype=float)
    return b1 * _logistic_term(b2 * (raw - b3)) + b4 * raw + b5


def slope_of(raw, betas) -> np.ndarray:
    """Derivative of the unclamped mapping with respect to the raw score."""
    b1, b2, b3, b4, _ = betas
    z = np.clip(b2 * (np.asarray(raw, dtype=float) - b3), -700.0, 700.0)
    sig = 1.0 / (1.0 + np.exp(-z))
    return b1 * b2 * sig * (1.0 - sig) + b4


def logistic_map(raw: float, params: LogisticParams,
                 score_range: tuple[float, float] = SCORE_RANGE) -> float:
    if not math.isfinite(raw):
        raise InputError(f"raw score must be finite, got {raw!r}")
    value = float(evaluate(np.array([raw]), params.betas)[0])
    lo, hi = score_range
    return min(max(value, lo), hi)


def is_monotone(params: LogisticParams) -> bool:
    grid = np.linspace(params.raw_lo, params.raw_hi, MONOTONE_GRID)
    values = evaluate(grid, params.betas)
    if not np.all(np.isfinite(values)):
        return False
    return bool(np.all(np.diff(values) >= -1e-12))


def _linear_fit(raw: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(raw, gt, 1)
    if slope < 0:
        # a decreasing line is never an acceptable fallback
        return 0.0, float(gt.mean())
    return float(slope), float(intercept)


def fit_logistic(pairs, score_range: tuple[float, float] = SCORE_RANGE,
                 seed: int = 0) -> LogisticParams:
    """Least-squares fit of the five coefficients to ``(raw, gt)`` pairs.

    Nelder-Mead is restarted from the linear-fit initialisation and four
    perturbations of it; the linear fit itself is kept as a candidate. The
    best candidate that passes the monotonicity grid check wins, so the
    returned map is always non-decreasing over the fitted raw range.
    """
    data = np.asarray(list(pairs), dtype=float)
    if data.ndim != 2 or data.shape[0] < MIN_PAIRS:
        raise FitError(f"need at least {MIN_PAIRS} (raw, gt) pairs, got {len(data)}")
    raw, gt = data[:, 0], data[:, 1]
    if not (np.all(np.isfinite(raw)) and np.all(np.isfinite(gt))):
        raise FitError("non-finite value in fitting pairs")
    if np.ptp(raw) == 0:
        raise FitError("degenerate raw column: all raw scores identical")
    lo, hi = score_range
    if np.any(gt < lo) or np.any(gt > hi):
        raise FitError(f"ground-truth values outside score range {score_range}")

    raw_lo, raw_hi = float(raw.min()), float(raw.max())
    slope, intercept = _linear_fit(raw, gt)

    penalty_grid = np.linspace(raw_lo, raw_hi, PENALTY_GRID)

    def mse(b):
        if b[1] == 0.0:
            return np.inf
        r = evaluate(raw, b) - gt
        return float(np.dot(r, r) / len(r))

    def penalised(b):
        # steer the simplex away from non-monotone optima
        value = mse(b)
        drops = np.minimum(slope_of(penalty_grid, b), 0.0)
        return value + PENALTY_WEIGHT * float(np.mean(drops * drops))

    linear = np.array([0.0, 1.0, 0.0, slope, intercept])
    start = np.array([float(np.ptp(gt)), 1.0, float(np.median(raw)), slope, intercept])
    rng = np.random.default_rng(seed)
    candidates = [(mse(linear), linear)]
    for k in range(N_RESTARTS):
        x0 = start if k == 0 else start * (1.0 + 0.2 * rng.standard_normal(5)) + 0.05 * rng.standard_normal(5)
        res = minimize(penalised, x0, method="Nelder-Mead",
                       options={"maxiter": 2000, "xatol": 1e-10, "fatol": 1e-12, "adaptive": True})
        candidates.append((mse(res.x), res.x))

    candidates.sort(key=lambda c: c[0])
    for value, b in candidates:
        if not np.isfinite(value) or b[1] == 0.0 or not np.all(np.isfinite(b)):
            continue
        params = LogisticParams(*map(float, b), raw_lo, raw_hi)
        if is_monotone(params):
            return params
        log.debug("discarding non-monotone candidate %s", b)
    return LogisticParams(0.0, 1.0, 0.0, slope, intercept, raw_lo, raw_hi)
