"""GPU cost models and the resource allocator.

A :class:`GpuModel` is the simulator's hidden ground truth: how long a client
with ``m`` batches takes on one GPU type. Placement policies never read it
directly; the learning-based policy only sees observed times.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConfigError, DomainError

VALIDATION_MAX_M = 10**6
# Draws of the noise factor are retried this many times before clamping.
MAX_NOISE_REDRAWS = 64
MIN_NOISE_FACTOR = 1e-3


@dataclass(frozen=True)
class GpuModel:
    gpu_type: str
    latency_linear: float
    latency_log_coeff: float
    latency_log_scale: float
    latency_offset: float
    noise_sigma_small: float = 0.0
    noise_sigma_large: float = 0.0
    small_client_threshold: int = 1
    max_workers: int = 1
    # Optional extra q*m^2 term, to stress a learner whose model class lacks it.
    mismatch_quadratic: float = 0.0

    def __post_init__(self):
        f = f"gpu_catalog.{self.gpu_type}"
        for name in ("latency_linear", "latency_log_coeff", "latency_log_scale", "latency_offset",
                     "noise_sigma_small", "noise_sigma_large", "mismatch_quadratic"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{f}.{name}", "must be finite")
        if self.latency_linear < 0:
            raise ConfigError(f"{f}.latency_linear", "must be >= 0")
        if self.latency_log_coeff < 0:
            raise ConfigError(f"{f}.latency_log_coeff", "must be >= 0")
        if self.latency_log_scale <= 0:
            raise ConfigError(f"{f}.latency_log_scale", "must be > 0")
        if self.mismatch_quadratic < 0:
            raise ConfigError(f"{f}.mismatch_quadratic", "must be >= 0")
        if self.noise_sigma_small < 0 or self.noise_sigma_large < 0:
            raise ConfigError(f"{f}.noise_sigma", "must be >= 0")
        if self.max_workers < 1:
            raise ConfigError(f"{f}.max_workers", "must be >= 1")
        # All terms are non-decreasing in m, so the curve's minimum on
        # [1, VALIDATION_MAX_M] sits at m = 1.
        if self._curve(1.0) <= 0:
            raise ConfigError(f"{f}.latency_offset",
                              "expected time must be positive for every m >= 1")

    def _curve(self, m: float) -> float:
        return (self.latency_linear * m
                + self.latency_log_coeff * math.log(self.latency_log_scale * m)
                + self.latency_offset
                + self.mismatch_quadratic * m * m)

    def noise_sigma(self, m: float) -> float:
        return self.noise_sigma_small if m < self.small_client_threshold else self.noise_sigma_large

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ContentionModel:
    slowdown_per_extra_worker: float = 0.0

    def __post_init__(self):
        if not (self.slowdown_per_extra_worker >= 0 and math.isfinite(self.slowdown_per_extra_worker)):
            raise ConfigError("contention.slowdown_per_extra_worker", "must be finite and >= 0")

    def factor(self, co_resident_workers: int) -> float:
        if co_resident_workers < 1:
            raise DomainError(f"co_resident_workers must be >= 1, got {co_resident_workers}")
        return 1.0 + self.slowdown_per_extra_worker * (co_resident_workers - 1)


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    gpus: tuple[tuple[str, int], ...]
    cpu_cores: int = 1

    def __post_init__(self):
        if self.cpu_cores < 1:
            raise ConfigError(f"nodes[{self.node_id}].cpu_cores", "must be >= 1")
        for gpu_type, count in self.gpus:
            if count < 1:
                raise ConfigError(f"nodes[{self.node_id}].gpus.{gpu_type}", "count must be >= 1")


@dataclass(frozen=True)
class WorkerSpec:
    worker_id: int
    node_id: int
    gpu_type: str
    gpu_index: int

    @property
    def physical_gpu(self) -> tuple[int, int]:
        return (self.node_id, self.gpu_index)


@dataclass(frozen=True)
class Cluster:
    """Allocated workers plus everything needed to time them."""

    workers: tuple[WorkerSpec, ...]
    gpu_catalog: Mapping[str, GpuModel]
    contention: ContentionModel = field(default_factory=ContentionModel)

    def __post_init__(self):
        counts = Counter(w.physical_gpu for w in self.workers)
        object.__setattr__(self, "_co_resident",
                           {w.worker_id: counts[w.physical_gpu] for w in self.workers})

    def co_resident(self, worker_id: int) -> int:
        return self._co_resident[worker_id]

    def gpu_of(self, worker: WorkerSpec) -> GpuModel:
        return self.gpu_catalog[worker.gpu_type]


def expected_time(gpu: GpuModel, m: float) -> float:
    """Noise-free single-worker time for a client with ``m`` batches."""
    if m < 1:
        raise DomainError(f"batch count must be >= 1, got {m}")
    return gpu._curve(float(m))


def sample_training_time(gpu: GpuModel, m: float, co_resident_workers: int, rng,
                         contention: ContentionModel | None = None) -> float:
    """Noisy, contended training time.

    ``rng`` is anything with a ``standard_normal()`` method (a numpy Generator
    or :class:`pollen_sim.rng.CounterStream`).
    """
    mean = expected_time(gpu, m)
    if contention is not None:
        mean *= contention.factor(co_resident_workers)
    elif co_resident_workers < 1:
        raise DomainError(f"co_resident_workers must be >= 1, got {co_resident_workers}")
    sigma = gpu.noise_sigma(m)
    if sigma == 0:
        return mean
    for _ in range(MAX_NOISE_REDRAWS):
        factor = 1.0 + sigma * float(rng.standard_normal())
        if factor > 0:
            return mean * factor
    return mean * MIN_NOISE_FACTOR


def allocate_workers(
    nodes: Sequence[NodeSpec],
    gpu_catalog: Mapping[str, GpuModel],
    workers_per_gpu_override: Mapping[str, int] | None = None,
) -> list[WorkerSpec]:
    """Fill every physical GPU with workers, ordered node → GPU index → slot."""
    overrides = dict(workers_per_gpu_override or {})
    for gpu_type, n in overrides.items():
        if gpu_type not in gpu_catalog:
            raise ConfigError(f"cluster.workers_per_gpu.{gpu_type}", "unknown gpu_type")
        if n < 1:
            raise ConfigError(f"cluster.workers_per_gpu.{gpu_type}", "must be >= 1")
        if n > gpu_catalog[gpu_type].max_workers:
            raise ConfigError(
                f"cluster.workers_per_gpu.{gpu_type}",
                f"override {n} exceeds capacity {gpu_catalog[gpu_type].max_workers}",
            )
    workers: list[WorkerSpec] = []
    for node in sorted(nodes, key=lambda n: n.node_id):
        gpu_index = 0
        for gpu_type, count in node.gpus:
            if gpu_type not in gpu_catalog:
                raise ConfigError(f"cluster.nodes[{node.node_id}].gpus", f"unknown gpu_type {gpu_type!r}")
            gpu = gpu_catalog[gpu_type]
            per_gpu = min(gpu.max_workers, overrides.get(gpu_type, gpu.max_workers))
            for _ in range(count):
                for _slot in range(per_gpu):
                    workers.append(WorkerSpec(len(workers), node.node_id, gpu_type, gpu_index))
                gpu_index += 1
    return workers
