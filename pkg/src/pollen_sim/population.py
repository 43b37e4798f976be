"""Synthetic client populations and cohort sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CohortError, ConfigError
from . import rng as rngmod

# Redraw budget for clients drawn below one batch; survivors are clamped.
MAX_REDRAWS = 100

DISTRIBUTION_KINDS = ("constant", "uniform", "lognormal", "zipf")


def batches_for(num_samples: int, batch_size: int) -> int:
    """Number of mini-batches needed for ``num_samples`` (ceil division)."""
    return -(-num_samples // batch_size)


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    num_samples: int
    num_batches: int


@dataclass(frozen=True)
class SizeDistribution:
    """Tagged descriptor of the per-client sample-count distribution.

    ``params`` meaning depends on ``kind``:
      constant  -> (value,)
      uniform   -> (lo, hi)       inclusive integer bounds
      lognormal -> (mu, sigma)    of the underlying normal
      zipf      -> (s, max)       exponent > 1, samples truncated at max
    """

    kind: str
    params: tuple[float, ...]

    def validate(self, field: str = "size_distribution") -> None:
        if self.kind not in DISTRIBUTION_KINDS:
            raise ConfigError(f"{field}.kind", f"unknown distribution {self.kind!r}")
        p = self.params
        expected = {"constant": 1, "uniform": 2, "lognormal": 2, "zipf": 2}[self.kind]
        if len(p) != expected:
            raise ConfigError(f"{field}.params", f"{self.kind} takes {expected} parameters, got {len(p)}")
        if not all(math.isfinite(v) for v in p):
            raise ConfigError(f"{field}.params", "parameters must be finite")
        if self.kind == "constant" and p[0] < 1:
            raise ConfigError(f"{field}.value", "must be >= 1")
        if self.kind == "uniform":
            if p[0] < 1:
                raise ConfigError(f"{field}.lo", "must be >= 1")
            if p[0] > p[1]:
                raise ConfigError(f"{field}.lo", "must be <= hi")
        if self.kind == "lognormal" and p[1] <= 0:
            raise ConfigError(f"{field}.sigma", "must be > 0")
        if self.kind == "zipf":
            if p[0] <= 1:
                raise ConfigError(f"{field}.s", "must be > 1")
            if p[1] < 1:
                raise ConfigError(f"{field}.max", "must be >= 1")

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Raw real-valued draws (before the one-batch floor)."""
        p = self.params
        if self.kind == "constant":
            return np.full(size, float(p[0]))
        if self.kind == "uniform":
            return gen.integers(int(p[0]), int(p[1]), endpoint=True, size=size).astype(float)
        if self.kind == "lognormal":
            return gen.lognormal(p[0], p[1], size=size)
        out = gen.zipf(p[0], size=size).astype(float)
        return np.minimum(out, p[1])

    def to_dict(self) -> dict:
        names = {
            "constant": ("value",),
            "uniform": ("lo", "hi"),
            "lognormal": ("mu", "sigma"),
            "zipf": ("s", "max"),
        }[self.kind]
        return {"kind": self.kind, **dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, d: dict, field: str = "size_distribution") -> "SizeDistribution":
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"{field}.kind", "distribution needs a 'kind'")
        kind = d["kind"]
        names = {
            "constant": ("value",),
            "uniform": ("lo", "hi"),
            "lognormal": ("mu", "sigma"),
            "zipf": ("s", "max"),
        }.get(kind)
        if names is None:
            raise ConfigError(f"{field}.kind", f"unknown distribution {kind!r}")
        try:
            params = tuple(float(d[n]) for n in names)
        except KeyError as e:
            raise ConfigError(f"{field}.{e.args[0]}", "missing") from None
        except (TypeError, ValueError):
            raise ConfigError(field, "parameters must be numbers") from None
        dist = cls(kind, params)
        dist.validate(field)
        return dist


@dataclass(frozen=True)
class PopulationSpec:
    num_clients: int
    batch_size: int
    size_distribution: SizeDistribution
    seed: int = 0

    def validate(self) -> None:
        if not isinstance(self.num_clients, int) or self.num_clients < 1:
            raise ConfigError("num_clients", "must be a positive integer")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("batch_size", "must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        self.size_distribution.validate()


@dataclass(frozen=True)
class Cohort:
    round_index: int
    client_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.client_ids)


def generate_population(spec: PopulationSpec) -> list[ClientProfile]:
    spec.validate()
    gen = rngmod.generator(spec.seed, rngmod.STREAM_POPULATION)
    dist = spec.size_distribution
    floor = spec.batch_size
    draws = dist.draw(gen, spec.num_clients)
    for _ in range(MAX_REDRAWS):
        low = np.flatnonzero(draws < floor)
        if low.size == 0:
            break
        draws[low] = dist.draw(gen, low.size)
    samples = np.maximum(np.rint(draws), floor).astype(np.int64)
    return [
        ClientProfile(i, int(n), batches_for(int(n), spec.batch_size))
        for i, n in enumerate(samples)
    ]


def sample_cohort(
    population: Sequence[ClientProfile],
    n: int,
    round_index: int,
    rng: np.random.Generator,
) -> Cohort:
    """Uniform draw of ``n`` distinct clients without replacement."""
    if n < 1:
        raise CohortError(f"cohort size must be >= 1, got {n}")
    if n > len(population):
        raise CohortError(f"cannot sample {n} clients from a population of {len(population)}")
    idx = rng.choice(len(population), size=n, replace=False)
    return Cohort(round_index, tuple(population[i].client_id for i in idx))


def write_population(profiles: Iterable[ClientProfile], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["client_id", "num_samples", "num_batches"])
        for p in profiles:
            w.writerow([p.client_id, p.num_samples, p.num_batches])


def read_population(path: str | Path) -> list[ClientProfile]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for row in rows:
        p = ClientProfile(int(row["client_id"]), int(row["num_samples"]), int(row["num_batches"]))
        if p.num_batches < 1:
            raise ConfigError("num_batches", f"client {p.client_id} has fewer than one batch")
        out.append(p)
    return out
