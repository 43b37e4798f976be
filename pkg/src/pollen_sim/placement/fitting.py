"""Per-GPU-type training time model ``y = a*m + b*log(c*m) + d``.

The solver is a small Levenberg-Marquardt loop over ``(a, b, log c, d)``.
Working in ``log c`` keeps ``c > 0`` without constraints. Note the model is
over-parametrised: ``b*log(c*m) + d == b*log(m) + (b*log(c) + d)``, so only the
predictions (not the individual b, c, d) are identifiable. Marquardt damping
copes with the resulting rank-deficient normal equations.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import FitError, InsufficientDataError

MIN_RECORDS = 4
PREDICT_EPS = 1e-6
B_STARTS = (0.1, 1.0, 10.0)
MAX_ITER = 200
G_LIMIT = 50.0  # |log c| bound; only b*log(c) + d is identifiable anyway


@dataclass(frozen=True)
class TrainingRecord:
    client_id: int
    m: int
    observed_time: float
    gpu_type: str
    round_index: int
    worker_id: int = -1


@dataclass(frozen=True)
class TimeModelFit:
    gpu_type: str
    a: float
    b: float
    c: float
    d: float
    mse: float
    num_points: int
    max_m: float = math.inf
    fallback: str = ""  # "" for a full fit, "linear", "proportional" or "batches"
    min_m: float = 1.0  # with max_m, the range on which positivity was enforced

    def predict(self, m):
        return predict_time(self, m)

    def to_row(self) -> dict:
        return {
            "gpu_type": self.gpu_type, "a": self.a, "b": self.b, "c": self.c, "d": self.d,
            "mse": self.mse, "num_points": self.num_points, "fallback": self.fallback,
        }


def batch_count_fit(gpu_type: str) -> TimeModelFit:
    """Proxy used before any data exists: predicted time equals ``m``."""
    return TimeModelFit(gpu_type, 1.0, 0.0, 1.0, 0.0, math.nan, 0, fallback="batches")


def _raw(a, b, c, d, m):
    return a * m + b * np.log(c * m) + d


def predict_time(fit: TimeModelFit, m):
    """Predicted seconds; scalars in, float out; arrays in, array out.

    Values that would fall below a tiny positive epsilon are clamped (this only
    happens outside the range the fit was validated on).
    """
    arr = np.asarray(m, dtype=float)
    y = np.maximum(_raw(fit.a, fit.b, fit.c, fit.d, arr), PREDICT_EPS)
    return float(y) if y.ndim == 0 else y


def min_on_range(a: float, b: float, c: float, d: float, lo: float, hi: float) -> float:
    """Exact minimum of ``a*m + b*log(c*m) + d`` over ``[lo, hi]``."""
    candidates = [lo, hi]
    # derivative a + b/m vanishes at m = -b/a, a minimum when b < 0 < a
    if a > 0 and b < 0:
        crit = -b / a
        if lo < crit < hi:
            candidates.append(crit)
    return min(float(_raw(a, b, c, d, x)) for x in candidates)


def _lm(m: np.ndarray, logm: np.ndarray, y: np.ndarray, p0: np.ndarray):
    """Levenberg-Marquardt on params (a, b, g=log c, d). Returns (p, sse)."""

    def residual(p):
        return p[0] * m + p[1] * (logm + p[2]) + p[3] - y

    p = p0.astype(float).copy()
    r = residual(p)
    sse = float(r @ r)
    lam = 1e-3
    ones = np.ones_like(m)
    for _ in range(MAX_ITER):
        J = np.column_stack((m, logm + p[2], np.full_like(m, p[1]), ones))
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        improved = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            q = p + step
            rq = residual(q)
            sq = float(rq @ rq)
            if math.isfinite(sq) and sq <= sse:
                improved = True
                rel = (sse - sq) / max(sse, 1e-300)
                p, r, sse = q, rq, sq
                lam = max(lam / 3, 1e-12)
                break
            lam *= 4
        if not improved or rel < 1e-14 or np.max(np.abs(step)) < 1e-12 * (1 + np.max(np.abs(p))):
            break
    return p, sse


def _polish(m: np.ndarray, logm: np.ndarray, y: np.ndarray, p: np.ndarray):
    """Re-solve (a, b, d) exactly for the converged log c; the model is linear in them."""
    g = float(np.clip(p[2], -G_LIMIT, G_LIMIT))
    A = np.column_stack((m, logm + g, np.ones_like(m)))
    (a, b, d), *_ = np.linalg.lstsq(A, y, rcond=None)
    r = a * m + b * (logm + g) + d - y
    return np.array([a, b, g, d]), float(r @ r)


def _line(m: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    A = np.column_stack((m, np.ones_like(m)))
    (slope, icept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(icept)


def _fallback_fit(gpu_type: str, m: np.ndarray, y: np.ndarray, max_m: float) -> TimeModelFit:
    """Linear ``y = a*m + d`` with ``a >= 0``, positive on the observed range."""
    a, d = _line(m, y)
    if a < 0:
        a, d = 0.0, float(np.mean(y))
    if min(a + d, a * max_m + d) > 0:
        mse = float(np.mean((a * m + d - y) ** 2))
        return TimeModelFit(gpu_type, a, 0.0, 1.0, d, mse, len(m), max_m, "linear")
    a = float(m @ y / (m @ m))
    mse = float(np.mean((a * m - y) ** 2))
    return TimeModelFit(gpu_type, a, 0.0, 1.0, 0.0, mse, len(m), max_m, "proportional")


def fit_arrays(gpu_type: str, m, y) -> TimeModelFit:
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(m) < MIN_RECORDS:
        raise InsufficientDataError(
            f"{gpu_type}: need at least {MIN_RECORDS} records to fit, got {len(m)}")
    if np.any(m < 1) or np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise FitError(f"{gpu_type}: records need m >= 1 and finite positive times")
    min_m, max_m = float(m.min()), float(m.max())
    logm = np.log(m)
    slope, icept = _line(m, y)
    best = None
    for b0 in B_STARTS:
        p, sse = _lm(m, logm, y, np.array([slope, b0, 0.0, icept]))
        if np.all(np.isfinite(p)):
            p, sse = _polish(m, logm, y, p)
        if not (math.isfinite(sse) and np.all(np.isfinite(p))):
            continue
        if best is None or sse < best[1]:
            best = (p, sse)
    if best is None:
        return _fallback_fit(gpu_type, m, y, max_m)
    (a, b, g, d), sse = best
    c = math.exp(g)
    if not (math.isfinite(c) and c > 0) or min_on_range(a, b, c, d, min_m, max_m) <= 0:
        return _fallback_fit(gpu_type, m, y, max_m)
    return TimeModelFit(gpu_type, float(a), float(b), c, float(d), sse / len(m), len(m), max_m,
                        min_m=min_m)


def fit_time_model(records: Sequence[TrainingRecord]) -> TimeModelFit:
    if not records:
        raise InsufficientDataError("no records to fit")
    gpu_type = records[0].gpu_type
    if any(r.gpu_type != gpu_type for r in records):
        raise FitError("records for fit_time_model must share one gpu_type")
    return fit_arrays(gpu_type, [r.m for r in records], [r.observed_time for r in records])


class RecordStore:
    """Observed (m, time) pairs grouped per pool key.

    The pool key is the GPU type by default; with ``pool="gpu"`` it is
    ``"<gpu_type>@<node>:<index>"`` so identical GPUs get separate curves.
    ``window`` keeps only the most recent W rounds (None keeps everything).
    """

    def __init__(self, window: int | None = None):
        self.window = window
        self._m: dict[str, list[int]] = defaultdict(list)
        self._t: dict[str, list[float]] = defaultdict(list)
        self._round: dict[str, list[int]] = defaultdict(list)

    def add(self, key: str, records: Iterable[TrainingRecord]) -> None:
        for r in records:
            self._m[key].append(r.m)
            self._t[key].append(r.observed_time)
            self._round[key].append(r.round_index)

    def keys(self):
        return list(self._m)

    def arrays(self, key: str, current_round: int | None = None):
        m = np.asarray(self._m.get(key, ()), dtype=float)
        t = np.asarray(self._t.get(key, ()), dtype=float)
        if self.window is not None and current_round is not None and len(m):
            rounds = np.asarray(self._round[key])
            keep = rounds >= current_round - self.window
            m, t = m[keep], t[keep]
        return m, t

    def fit(self, key: str, current_round: int | None = None) -> TimeModelFit:
        m, t = self.arrays(key, current_round)
        if len(m) < MIN_RECORDS:
            return batch_count_fit(key)
        return fit_arrays(key, m, t)
