"""Worker-side partial aggregation and server-side final aggregation.

A worker keeps a running sample-weighted mean of the models it has trained
together with the number of samples folded so far; the server combines these
partial means weighted by their sample counts. For FedAvg-style weighted
averaging this is exactly equal to averaging all client models at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import AggregationError, DomainError

DEFAULT_DIM = 64


@dataclass(frozen=True)
class PartialAggregate:
    params: np.ndarray
    total_samples: int = 0

    @classmethod
    def empty(cls, dim: int = DEFAULT_DIM) -> "PartialAggregate":
        return cls(np.zeros(dim), 0)

    @property
    def dim(self) -> int:
        return self.params.shape[0]


def _as_params(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise AggregationError(f"model params must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise AggregationError("model params contain non-finite values")
    return arr


def fold_client(agg: PartialAggregate, client_params, n: int) -> PartialAggregate:
    """Fold one trained client (``n`` samples) into a running weighted mean."""
    if n < 1:
        raise DomainError(f"client sample count must be >= 1, got {n}")
    theta = _as_params(client_params)
    if theta.shape != agg.params.shape:
        raise AggregationError(f"dimension mismatch: aggregate {agg.params.shape}, client {theta.shape}")
    total = agg.total_samples + n
    new = (agg.params * agg.total_samples + theta * n) / total
    return PartialAggregate(new, total)


class RunningSum:
    """Alternative accumulator: keep sum(theta*n) and divide once at the end."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.weighted = np.zeros(dim)
        self.total_samples = 0

    def fold(self, client_params, n: int) -> "RunningSum":
        if n < 1:
            raise DomainError(f"client sample count must be >= 1, got {n}")
        theta = _as_params(client_params)
        if theta.shape != self.weighted.shape:
            raise AggregationError("dimension mismatch")
        self.weighted += theta * n
        self.total_samples += n
        return self

    def to_partial(self) -> PartialAggregate:
        if self.total_samples == 0:
            return PartialAggregate(np.zeros_like(self.weighted), 0)
        return PartialAggregate(self.weighted / self.total_samples, self.total_samples)


class IncrementalMean:
    """Stateful wrapper around ``fold_client`` with the same interface as RunningSum."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.agg = PartialAggregate.empty(dim)

    def fold(self, client_params, n: int) -> "IncrementalMean":
        self.agg = fold_client(self.agg, client_params, n)
        return self

    def to_partial(self) -> PartialAggregate:
        return self.agg


ACCUMULATORS = {"incremental": IncrementalMean, "running_sum": RunningSum}


def final_aggregate(partials: Iterable[PartialAggregate]) -> np.ndarray:
    partials = [p for p in partials if p.total_samples > 0]
    if not partials:
        raise AggregationError("nothing to aggregate: every partial is empty")
    dim = partials[0].params.shape
    if any(p.params.shape != dim for p in partials):
        raise AggregationError("partials have mismatched dimensions")
    total = sum(p.total_samples for p in partials)
    out = np.zeros(dim)
    for p in partials:
        out += p.params * p.total_samples
    return out / total


def weighted_mean(params, counts) -> np.ndarray:
    """Flat FedAvg over individual clients."""
    P = np.asarray(params, dtype=np.float64)
    w = np.asarray(counts, dtype=np.float64)
    return (w @ P) / w.sum()
