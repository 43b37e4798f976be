"""Client placement policies: RR, SRR, BU and LB."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from ..cluster import WorkerSpec
from ..errors import PlacementError
from ..population import ClientProfile, Cohort
from .fitting import TimeModelFit, predict_time

POLICIES = ("rr", "srr", "bu", "lb")


@dataclass
class PlacementPlan:
    round_index: int
    assignments: dict[int, list[int]] = field(default_factory=dict)

    def validate(self, cohort: Cohort, workers: Sequence[WorkerSpec]) -> None:
        ids = {w.worker_id for w in workers}
        unknown = set(self.assignments) - ids
        if unknown:
            raise PlacementError(f"plan references unknown workers {sorted(unknown)}")
        placed = sorted(c for lst in self.assignments.values() for c in lst)
        if placed != sorted(cohort.client_ids):
            raise PlacementError("plan does not cover the cohort exactly once")

    def loads(self, weight: Callable[[int, int], float]) -> dict[int, float]:
        """Per-worker sum of ``weight(worker_id, client_id)``."""
        return {w: sum(weight(w, c) for c in lst) for w, lst in self.assignments.items()}


def _check_workers(workers: Sequence[WorkerSpec]) -> None:
    if not workers:
        raise PlacementError("no workers to place clients on")


def _sorted_by_batches(cohort: Cohort, profiles: Mapping[int, ClientProfile]) -> list[int]:
    try:
        return sorted(cohort.client_ids, key=lambda c: (-profiles[c].num_batches, c))
    except KeyError as e:
        raise PlacementError(f"no profile for client {e.args[0]}") from None


def _round_robin(round_index: int, order: Sequence[int], workers: Sequence[WorkerSpec]) -> PlacementPlan:
    k = len(workers)
    plan = PlacementPlan(round_index, {w.worker_id: [] for w in workers})
    for i, c in enumerate(order):
        plan.assignments[workers[i % k].worker_id].append(c)
    return plan


def assign_round_robin(cohort: Cohort, workers: Sequence[WorkerSpec]) -> PlacementPlan:
    _check_workers(workers)
    return _round_robin(cohort.round_index, cohort.client_ids, workers)


def assign_sorted_round_robin(cohort: Cohort, profiles: Mapping[int, ClientProfile],
                              workers: Sequence[WorkerSpec]) -> PlacementPlan:
    _check_workers(workers)
    return _round_robin(cohort.round_index, _sorted_by_batches(cohort, profiles), workers)


def _greedy(round_index, order, ranked_workers, cost) -> PlacementPlan:
    # heap entries are (load, rank) so equal loads fall back to the rank order
    plan = PlacementPlan(round_index, {w.worker_id: [] for w in ranked_workers})
    k = len(ranked_workers)
    heap: list[tuple[float, int]] = []
    for i, c in enumerate(order):
        # the first k clients go one per worker, in rank order
        load, rank = (0.0, i) if i < k else heapq.heappop(heap)
        w = ranked_workers[rank]
        plan.assignments[w.worker_id].append(c)
        heapq.heappush(heap, (load + cost(w, c), rank))
    return plan


def assign_batch_uniform(cohort: Cohort, profiles: Mapping[int, ClientProfile],
                         workers: Sequence[WorkerSpec]) -> PlacementPlan:
    _check_workers(workers)
    order = _sorted_by_batches(cohort, profiles)
    ranked = sorted(workers, key=lambda w: w.worker_id)
    return _greedy(cohort.round_index, order, ranked,
                   lambda w, c: float(profiles[c].num_batches))


def assign_learning_based(cohort: Cohort, profiles: Mapping[int, ClientProfile],
                          workers: Sequence[WorkerSpec], fits: Mapping[str, TimeModelFit] | None,
                          round_index: int | None = None,
                          fit_key: Callable[[WorkerSpec], str] | None = None) -> PlacementPlan:
    """Greedy placement on predicted time; round 0 is plain round-robin.

    ``fit_key`` maps a worker to its entry in ``fits`` (GPU type by default).
    """
    _check_workers(workers)
    round_index = cohort.round_index if round_index is None else round_index
    if round_index == 0:
        return assign_round_robin(cohort, workers)
    fit_key = fit_key or (lambda w: w.gpu_type)
    fits = fits or {}
    missing = {fit_key(w) for w in workers} - set(fits)
    if missing:
        raise PlacementError(f"no time model for {sorted(missing)}")
    order = _sorted_by_batches(cohort, profiles)
    largest_m = profiles[order[0]].num_batches
    ranked = sorted(workers, key=lambda w: (predict_time(fits[fit_key(w)], largest_m), w.worker_id))
    # predictions per (fit, client), computed once per fit
    batches = [profiles[c].num_batches for c in order]
    pred: dict[str, dict[int, float]] = {}
    for key in {fit_key(w) for w in workers}:
        values = predict_time(fits[key], batches)
        pred[key] = dict(zip(order, (float(v) for v in values)))
    return _greedy(round_index, order, ranked, lambda w, c: pred[fit_key(w)][c])


def place(policy: str, cohort: Cohort, profiles: Mapping[int, ClientProfile],
          workers: Sequence[WorkerSpec], fits: Mapping[str, TimeModelFit] | None = None,
          fit_key: Callable[[WorkerSpec], str] | None = None) -> PlacementPlan:
    if policy == "rr":
        return assign_round_robin(cohort, workers)
    if policy == "srr":
        return assign_sorted_round_robin(cohort, profiles, workers)
    if policy == "bu":
        return assign_batch_uniform(cohort, profiles, workers)
    if policy == "lb":
        return assign_learning_based(cohort, profiles, workers, fits, fit_key=fit_key)
    raise PlacementError(f"unknown policy {policy!r}")
