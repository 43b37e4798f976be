"""Virtual-time execution of FL rounds under push and pull protocols.

Push: the server sends each worker its whole client list in one message; the
worker trains the list sequentially, partially aggregates, and answers with
one result message.

Pull: workers loop over a server-side FIFO queue. Per client a worker reads
the head of the queue, trains, pings the server, waits for the server's
go-ahead and uploads the result. The server is a single serial resource: it
serves one queue read or one reply+upload at a time.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .aggregation import ACCUMULATORS, PartialAggregate, final_aggregate
from .cluster import Cluster, WorkerSpec, allocate_workers, sample_training_time
from .errors import ConfigError, EngineError, PollenSimError
from .placement import PlacementPlan, RecordStore, TrainingRecord, place
from .population import ClientProfile, Cohort, generate_population, sample_cohort

if TYPE_CHECKING:
    from .config import ExperimentConfig

log = logging.getLogger(__name__)

PUSH, PULL = "push", "pull"
# relative slack for the floating-point consistency checks on RoundMetrics
_REL_TOL = 1e-9


@dataclass(frozen=True)
class ProtocolConfig:
    mode: str = PUSH
    per_message_latency: float = 0.05
    result_payload_latency: float = 0.2
    final_aggregation_time: float = 0.5
    include_aggregation_in_duration: bool = True

    def __post_init__(self):
        if self.mode not in (PUSH, PULL):
            raise ConfigError("protocol.mode", f"must be 'push' or 'pull', got {self.mode!r}")
        for name in ("per_message_latency", "result_payload_latency", "final_aggregation_time"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"protocol.{name}", "must be a finite number >= 0")


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    round_duration: float
    throughput: float
    timedelta_workers: float
    per_worker_finish: Mapping[int, float]
    messages_sent: int
    clients_trained: int

    def __post_init__(self):
        finishes = list(self.per_worker_finish.values())
        if self.round_duration <= 0:
            raise EngineError(f"round {self.round_index}: non-positive duration")
        if not math.isclose(self.throughput, self.clients_trained / self.round_duration,
                            rel_tol=_REL_TOL):
            raise EngineError(f"round {self.round_index}: throughput inconsistent")
        if finishes:
            delta = max(finishes) - min(finishes)
            if not math.isclose(self.timedelta_workers, delta, rel_tol=_REL_TOL, abs_tol=1e-12):
                raise EngineError(f"round {self.round_index}: timedelta inconsistent")
            if self.round_duration < max(finishes) * (1 - _REL_TOL):
                raise EngineError(f"round {self.round_index}: duration below slowest worker")

    @classmethod
    def build(cls, round_index, finishes: Mapping[int, float], duration, messages, clients):
        values = list(finishes.values())
        delta = max(values) - min(values) if values else 0.0
        return cls(round_index, duration, clients / duration, delta, dict(finishes), messages, clients)


@dataclass
class RoundOutcome:
    metrics: RoundMetrics
    records: list[TrainingRecord]
    partials: list[PartialAggregate]
    model: np.ndarray | None = None


@dataclass
class ExperimentResult:
    policy: str
    mode: str
    seed: int
    fingerprint: str
    rounds: list[RoundMetrics]
    final_params: np.ndarray
    fits: list[tuple[int, list[dict]]] = field(default_factory=list)

    def _series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rounds], dtype=float)

    @property
    def stats(self) -> dict[str, float]:
        thr = self._series("throughput")
        td = self._series("timedelta_workers")
        return {
            "throughput_mean": float(thr.mean()),
            "throughput_std": float(thr.std()),
            "timedelta_mean": float(td.mean()),
            "timedelta_std": float(td.std()),
        }

    @property
    def clients_trained(self) -> int:
        return sum(r.clients_trained for r in self.rounds)

    @property
    def model_checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.final_params).tobytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ExperimentResult):
            return NotImplemented
        return (self.policy == other.policy and self.mode == other.mode and self.seed == other.seed
                and self.fingerprint == other.fingerprint and self.rounds == other.rounds
                and self.fits == other.fits
                and np.array_equal(self.final_params, other.final_params))


def client_update(global_params: np.ndarray, client_id: int, round_index: int, seed: int,
                  bound: float = 0.01) -> np.ndarray:
    """Stand-in for local training: a seeded perturbation of norm <= ``bound``."""
    if bound == 0:
        return global_params
    gen = rngmod.generator(seed, rngmod.STREAM_CLIENT_UPDATE, round_index, client_id)
    v = gen.standard_normal(global_params.shape[0])
    norm = np.linalg.norm(v)
    scale = bound * gen.random() / norm if norm > 0 else 0.0
    return global_params + v * scale


def training_time(cluster: Cluster, worker: WorkerSpec, profile: ClientProfile,
                  round_index: int, seed: int) -> float:
    # keyed by (round, client) only, so a client's noise draw does not depend
    # on which worker trains it or when
    stream = rngmod.CounterStream(seed, rngmod.STREAM_TRAINING, round_index, profile.client_id)
    return sample_training_time(cluster.gpu_of(worker), profile.num_batches,
                                cluster.co_resident(worker.worker_id), stream, cluster.contention)


def _accumulator(kind: str, global_params):
    if kind not in ACCUMULATORS:
        raise ConfigError("model.accumulator", f"must be one of {sorted(ACCUMULATORS)}, got {kind!r}")
    return ACCUMULATORS[kind](global_params.shape[0]) if global_params is not None else None


def _duration(last_finish: float, protocol: ProtocolConfig) -> float:
    if protocol.include_aggregation_in_duration:
        return last_finish + protocol.final_aggregation_time
    return last_finish


def run_round_push(cohort: Cohort, plan: PlacementPlan, cluster: Cluster, protocol: ProtocolConfig,
                   profiles: Mapping[int, ClientProfile], seed: int,
                   global_params: np.ndarray | None = None, update_bound: float = 0.0,
                   durations: Mapping[int, float] | None = None,
                   accumulator: str = "incremental") -> RoundOutcome:
    """Execute one push round.

    ``durations`` (client_id -> seconds) overrides sampled training times,
    which is handy for hand-checkable scenarios. ``accumulator`` picks the
    partial-aggregation form ("incremental" or "running_sum").
    """
    if protocol.mode != PUSH:
        raise EngineError("run_round_push needs protocol.mode == 'push'")
    try:
        plan.validate(cohort, cluster.workers)
    except PollenSimError as e:
        raise EngineError(f"round {cohort.round_index}: {e}") from e
    r = cohort.round_index
    by_id = {w.worker_id: w for w in cluster.workers}
    finishes: dict[int, float] = {}
    records: list[TrainingRecord] = []
    partials: list[PartialAggregate] = []
    messages = 0
    for wid in sorted(plan.assignments):
        clients = plan.assignments[wid]
        if not clients:
            continue
        worker = by_id[wid]
        t = protocol.per_message_latency  # allocation message
        messages += 1
        agg = _accumulator(accumulator, global_params)
        for c in clients:
            prof = profiles[c]
            dt = durations[c] if durations is not None else training_time(cluster, worker, prof, r, seed)
            t += dt
            records.append(TrainingRecord(c, prof.num_batches, dt, worker.gpu_type, r, wid))
            if agg is not None:
                agg.fold(client_update(global_params, c, r, seed, update_bound), prof.num_samples)
        t += protocol.result_payload_latency  # result message
        messages += 1
        finishes[wid] = t
        if agg is not None:
            partials.append(agg.to_partial())
    if not finishes:
        raise EngineError(f"round {r}: empty cohort")
    duration = _duration(max(finishes.values()), protocol)
    metrics = RoundMetrics.build(r, finishes, duration, messages, len(cohort))
    model = final_aggregate(partials) if partials else None
    return RoundOutcome(metrics, records, partials, model)


def run_round_pull(cohort: Cohort, workers: Sequence[WorkerSpec], cluster: Cluster,
                   protocol: ProtocolConfig, profiles: Mapping[int, ClientProfile], seed: int,
                   global_params: np.ndarray | None = None, update_bound: float = 0.0,
                   durations: Mapping[int, float] | None = None,
                   trace: list | None = None, accumulator: str = "incremental") -> RoundOutcome:
    """Execute one pull round as a discrete-event simulation.

    If ``trace`` is a list, ``(worker_id, client_id)`` pairs are appended in the
    order clients are dequeued.
    """
    if protocol.mode != PULL:
        raise EngineError("run_round_pull needs protocol.mode == 'pull'")
    if not workers:
        raise EngineError("no workers")
    missing = [c for c in cohort.client_ids if c not in profiles]
    if missing:
        raise EngineError(f"round {cohort.round_index}: no profile for clients {missing[:5]}")
    r = cohort.round_index
    pml = protocol.per_message_latency
    rpl = protocol.result_payload_latency
    queue = deque(cohort.client_ids)
    server_free = 0.0
    messages = 0
    finishes: dict[int, float] = {}
    records: list[TrainingRecord] = []
    agg = _accumulator(accumulator, global_params)

    # events: (time, seq, kind, worker_id, client_id); seq keeps FIFO on ties
    READ, TRAINED, PING = 0, 1, 2
    events: list[tuple[float, int, int, int, int]] = []
    seq = 0
    for w in workers:
        events.append((0.0, seq, READ, w.worker_id, -1))
        seq += 1
    heapq.heapify(events)
    by_id = {w.worker_id: w for w in workers}
    now = 0.0
    while events:
        t, _, kind, wid, c = heapq.heappop(events)
        if t < now:
            raise EngineError("virtual time went backwards")
        now = t
        if kind == READ:
            if not queue:
                continue
            start = max(t, server_free)
            c = queue.popleft()
            server_free = start + pml
            messages += 1
            if trace is not None:
                trace.append((wid, c))
            prof = profiles[c]
            dt = durations[c] if durations is not None else training_time(cluster, by_id[wid], prof, r, seed)
            records.append(TrainingRecord(c, prof.num_batches, dt, by_id[wid].gpu_type, r, wid))
            heapq.heappush(events, (server_free + dt, seq, TRAINED, wid, c))
        elif kind == TRAINED:
            messages += 1  # ping
            heapq.heappush(events, (t + pml, seq, PING, wid, c))
        else:
            start = max(t, server_free)
            done = start + pml + rpl  # reply, then the upload occupies the server
            server_free = done
            messages += 2
            finishes[wid] = done
            if agg is not None:
                agg.fold(client_update(global_params, c, r, seed, update_bound), profiles[c].num_samples)
            heapq.heappush(events, (done, seq, READ, wid, -1))
        seq += 1
    if not finishes:
        raise EngineError(f"round {r}: empty cohort")
    duration = _duration(max(finishes.values()), protocol)
    metrics = RoundMetrics.build(r, finishes, duration, messages, len(cohort))
    partials = [agg.to_partial()] if agg is not None else []
    model = final_aggregate(partials) if partials else None
    return RoundOutcome(metrics, records, partials, model)


def round_sizes(clients_per_round: int, num_rounds: int, total_clients: int | None) -> list[int]:
    if total_clients is None:
        return [clients_per_round] * num_rounds
    full, rem = divmod(total_clients, clients_per_round)
    return [clients_per_round] * full + ([rem] if rem else [])


def config_fingerprint(config_dict: dict) -> str:
    import json
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(config: "ExperimentConfig") -> ExperimentResult:
    seed = config.seed
    profiles_list = generate_population(config.population_spec())
    profiles = {p.client_id: p for p in profiles_list}
    catalog = config.gpu_catalog()
    workers = allocate_workers(config.nodes, catalog, config.workers_per_gpu)
    cluster = Cluster(tuple(workers), catalog, config.contention)
    protocol = config.protocol
    policy = config.policy
    lb = config.lb

    def fit_key(w: WorkerSpec) -> str:
        if lb.pool == "gpu":
            return f"{w.gpu_type}@{w.node_id}:{w.gpu_index}"
        return w.gpu_type

    store = RecordStore(window=lb.window)
    init = rngmod.generator(seed, rngmod.STREAM_MODEL_INIT)
    model = init.standard_normal(config.model_dim)
    metrics: list[RoundMetrics] = []
    fit_log: list[tuple[int, list[dict]]] = []
    sizes = round_sizes(config.clients_per_round, config.num_rounds, config.total_clients)
    for r, n in enumerate(sizes):
        try:
            cohort = sample_cohort(profiles_list, n, r,
                                   rngmod.generator(seed, rngmod.STREAM_COHORT, r))
            if protocol.mode == PUSH:
                fits = None
                if policy == "lb" and r > 0:
                    keys = sorted({fit_key(w) for w in workers})
                    fits = {k: store.fit(k, r) for k in keys}
                    fit_log.append((r, [fits[k].to_row() for k in keys]))
                plan = place(policy, cohort, profiles, workers, fits, fit_key=fit_key)
                out = run_round_push(cohort, plan, cluster, protocol, profiles, seed,
                                     model, config.update_bound, accumulator=config.accumulator)
            else:
                out = run_round_pull(cohort, workers, cluster, protocol, profiles, seed,
                                     model, config.update_bound, accumulator=config.accumulator)
        except ConfigError as e:
            raise ConfigError(e.field, f"round {r}: {e.message}", e.source) from e
        except PollenSimError as e:
            raise type(e)(f"round {r}: {e}") from e
        by_key: dict[str, list[TrainingRecord]] = {}
        wmap = {w.worker_id: w for w in workers}
        for rec in out.records:
            by_key.setdefault(fit_key(wmap[rec.worker_id]), []).append(rec)
        for k, recs in by_key.items():
            store.add(k, recs)
        model = out.model
        metrics.append(out.metrics)
        log.debug("round %d: %.3fs, %.3f clients/s", r, out.metrics.round_duration,
                  out.metrics.throughput)
    return ExperimentResult(policy, protocol.mode, seed, config.fingerprint(), metrics, model, fit_log)
