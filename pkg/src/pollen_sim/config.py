"""Experiment and sweep configuration.

Config files are YAML (JSON is accepted too, being a YAML subset). Every
section is optional; see README.md for the full schema. Validation errors are
:class:`~pollen_sim.errors.ConfigError` with a dotted ``field`` path.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from . import presets
from .cluster import ContentionModel, GpuModel, NodeSpec
from .aggregation import ACCUMULATORS
from .engine import ProtocolConfig, config_fingerprint
from .errors import ConfigError
from .placement import POLICIES
from .population import PopulationSpec, SizeDistribution

OUT_ENV = "POLLEN_SIM_OUT"
DEFAULT_POPULATION = "openimage-like"
DEFAULT_TOPOLOGY = "hetero-1-1"
SWEEP_AXES = ("clients_per_round", "policy", "gpu_counts", "protocol")

_TOP_KEYS = {"seed", "policy", "clients_per_round", "num_rounds", "total_clients", "output_dir",
             "population", "cluster", "protocol", "model", "lb"}


def default_output_dir() -> str:
    return os.environ.get(OUT_ENV, "runs")


@dataclass(frozen=True)
class LbOptions:
    window: int | None = None  # rounds of history kept; None keeps all
    pool: str = "type"  # "type": one curve per GPU type; "gpu": per physical GPU


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSpec = None  # type: ignore[assignment]
    nodes: tuple[NodeSpec, ...] = ()
    catalog: tuple[GpuModel, ...] = ()
    workers_per_gpu: dict[str, int] = field(default_factory=dict)
    contention: ContentionModel = presets.DEFAULT_CONTENTION
    policy: str = "rr"
    protocol: ProtocolConfig = ProtocolConfig()
    clients_per_round: int = 100
    num_rounds: int = 100
    total_clients: int | None = None
    seed: int = 0
    output_dir: str = field(default_factory=default_output_dir)
    model_dim: int = 64
    update_bound: float = 0.01
    accumulator: str = "incremental"
    lb: LbOptions = LbOptions()

    def __post_init__(self):
        if self.population is None:
            object.__setattr__(self, "population", presets.population_spec(DEFAULT_POPULATION, self.seed))
        if not self.nodes:
            object.__setattr__(self, "nodes", presets.TOPOLOGY_PRESETS[DEFAULT_TOPOLOGY])
        if not self.catalog:
            used = sorted({t for n in self.nodes for t, _ in n.gpus})
            missing = [t for t in used if t not in presets.GPU_PRESETS]
            if missing:
                raise ConfigError("cluster.gpu_catalog", f"no model for gpu types {missing}")
            object.__setattr__(self, "catalog", tuple(presets.GPU_PRESETS[t] for t in used))
        self.validate()

    def validate(self) -> None:
        _int(self.clients_per_round, "clients_per_round", 1)
        _int(self.num_rounds, "num_rounds", 1)
        if self.total_clients is not None:
            _int(self.total_clients, "total_clients", 1)
        _int(self.seed, "seed", 0)
        _int(self.model_dim, "model.dim", 1)
        if not (math.isfinite(self.update_bound) and self.update_bound >= 0):
            raise ConfigError("model.update_bound", "must be finite and >= 0")
        if self.accumulator not in ACCUMULATORS:
            raise ConfigError("model.accumulator", f"must be one of {sorted(ACCUMULATORS)}")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {', '.join(POLICIES)}; got {self.policy!r}")
        if self.lb.pool not in ("type", "gpu"):
            raise ConfigError("lb.pool", "must be 'type' or 'gpu'")
        if self.lb.window is not None:
            _int(self.lb.window, "lb.window", 1)
        self.population.validate()
        if self.clients_per_round > self.population.num_clients:
            raise ConfigError("clients_per_round", "exceeds population size")
        names = [g.gpu_type for g in self.catalog]
        if len(set(names)) != len(names):
            raise ConfigError("cluster.gpu_catalog", "duplicate gpu types")
        for n in self.nodes:
            for t, _ in n.gpus:
                if t not in names:
                    raise ConfigError(f"cluster.nodes[{n.node_id}].gpus", f"unknown gpu_type {t!r}")
        catalog = self.gpu_catalog()
        for t, n in self.workers_per_gpu.items():
            if t not in catalog:
                raise ConfigError(f"cluster.workers_per_gpu.{t}", "unknown gpu_type")
            _int(n, f"cluster.workers_per_gpu.{t}", 1)
            if n > catalog[t].max_workers:
                raise ConfigError(f"cluster.workers_per_gpu.{t}",
                                  f"exceeds max_workers {catalog[t].max_workers}")

    @property
    def rounds(self) -> int:
        if self.total_clients is None:
            return self.num_rounds
        return -(-self.total_clients // self.clients_per_round)

    def population_spec(self) -> PopulationSpec:
        return self.population

    def gpu_catalog(self) -> dict[str, GpuModel]:
        return {g.gpu_type: g for g in self.catalog}

    def to_dict(self, with_output_dir: bool = True) -> dict:
        """Plain-data form. Without the output dir it describes only the experiment."""
        pop = self.population
        d = {
            "seed": self.seed,
            "policy": self.policy,
            "clients_per_round": self.clients_per_round,
            "num_rounds": self.num_rounds,
            "total_clients": self.total_clients,
            "output_dir": self.output_dir,
            "population": {
                "num_clients": pop.num_clients,
                "batch_size": pop.batch_size,
                "distribution": pop.size_distribution.to_dict(),
                "seed": pop.seed,
            },
            "cluster": {
                "nodes": [
                    {"node_id": n.node_id, "cpu_cores": n.cpu_cores,
                     "gpus": [{"type": t, "count": c} for t, c in n.gpus]}
                    for n in self.nodes
                ],
                "gpu_catalog": {g.gpu_type: {k: v for k, v in g.to_dict().items() if k != "gpu_type"}
                                for g in self.catalog},
                "workers_per_gpu": dict(self.workers_per_gpu),
                "contention": {"slowdown_per_extra_worker": self.contention.slowdown_per_extra_worker},
            },
            "protocol": {
                "mode": self.protocol.mode,
                "per_message_latency": self.protocol.per_message_latency,
                "result_payload_latency": self.protocol.result_payload_latency,
                "final_aggregation_time": self.protocol.final_aggregation_time,
                "include_aggregation_in_duration": self.protocol.include_aggregation_in_duration,
            },
            "model": {"dim": self.model_dim, "update_bound": self.update_bound,
                      "accumulator": self.accumulator},
            "lb": {"window": self.lb.window, "pool": self.lb.pool},
        }
        if not with_output_dir:
            del d["output_dir"]
        return d

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict(with_output_dir=False))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _int(v, name: str, lo: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"must be an integer, got {v!r}")
    if v < lo:
        raise ConfigError(name, f"must be >= {lo}, got {v}")
    return v


def _num(v, name: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"must be a number, got {v!r}")
    return float(v)


def _section(d: dict, key: str) -> dict:
    v = d.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(key, "must be a mapping")
    return v


def _check_keys(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}{sorted(extra)[0]}" if where else sorted(extra)[0], "unknown key")


def _population(d: dict, seed: int) -> PopulationSpec:
    _check_keys(d, {"preset", "num_clients", "batch_size", "distribution", "seed"}, "population.")
    pop_seed = _int(d.get("seed", seed), "population.seed", 0)
    if "preset" in d:
        if d["preset"] not in presets.POPULATION_PRESETS:
            raise ConfigError("population.preset", f"unknown preset {d['preset']!r}; "
                              f"choose from {sorted(presets.POPULATION_PRESETS)}")
        base = presets.population_spec(d["preset"], pop_seed)
    elif not d:
        base = presets.population_spec(DEFAULT_POPULATION, pop_seed)
    else:
        base = None
    num_clients = d.get("num_clients", base.num_clients if base else None)
    batch_size = d.get("batch_size", base.batch_size if base else None)
    if num_clients is None:
        raise ConfigError("population.num_clients", "required without a preset")
    if batch_size is None:
        raise ConfigError("population.batch_size", "required without a preset")
    if "distribution" in d:
        dist = SizeDistribution.from_dict(d["distribution"], "population.distribution")
    elif base is not None:
        dist = base.size_distribution
    else:
        raise ConfigError("population.distribution", "required without a preset")
    spec = PopulationSpec(_int(num_clients, "population.num_clients", 1),
                          _int(batch_size, "population.batch_size", 1), dist, pop_seed)
    spec.validate()
    return spec


_GPU_FIELDS = set(GpuModel.__dataclass_fields__) - {"gpu_type"}


def _gpu(name: str, d: dict) -> GpuModel:
    where = f"cluster.gpu_catalog.{name}"
    if not isinstance(d, dict):
        raise ConfigError(where, "must be a mapping")
    _check_keys(d, _GPU_FIELDS | {"preset"}, where + ".")
    preset = d.get("preset", name if name in presets.GPU_PRESETS else None)
    fields: dict[str, Any] = {}
    if preset is not None:
        if preset not in presets.GPU_PRESETS:
            raise ConfigError(where + ".preset", f"unknown GPU preset {preset!r}")
        fields = presets.GPU_PRESETS[preset].to_dict()
    for k in _GPU_FIELDS:
        if k in d:
            if k in ("max_workers", "small_client_threshold"):
                fields[k] = _int(d[k], f"{where}.{k}", 1)
            else:
                fields[k] = _num(d[k], f"{where}.{k}")
    missing = _GPU_FIELDS - set(fields) - {"noise_sigma_small", "noise_sigma_large",
                                           "small_client_threshold", "mismatch_quadratic"}
    if missing:
        raise ConfigError(f"{where}.{sorted(missing)[0]}", "required (no preset to inherit from)")
    fields["gpu_type"] = name
    return GpuModel(**fields)


def _nodes(c: dict) -> tuple[NodeSpec, ...]:
    if "topology" in c and "nodes" in c:
        raise ConfigError("cluster.topology", "give either topology or nodes, not both")
    if "nodes" not in c:
        name = c.get("topology", DEFAULT_TOPOLOGY)
        if name not in presets.TOPOLOGY_PRESETS:
            raise ConfigError("cluster.topology", f"unknown topology {name!r}")
        return presets.TOPOLOGY_PRESETS[name]
    raw = c["nodes"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("cluster.nodes", "must be a non-empty list")
    nodes = []
    for i, n in enumerate(raw):
        where = f"cluster.nodes[{i}]"
        if not isinstance(n, dict):
            raise ConfigError(where, "must be a mapping")
        _check_keys(n, {"node_id", "cpu_cores", "gpus"}, where + ".")
        gpus = n.get("gpus")
        if not isinstance(gpus, list) or not gpus:
            raise ConfigError(where + ".gpus", "must be a non-empty list")
        pairs = []
        for j, g in enumerate(gpus):
            if not isinstance(g, dict) or "type" not in g:
                raise ConfigError(f"{where}.gpus[{j}].type", "required")
            pairs.append((str(g["type"]), _int(g.get("count", 1), f"{where}.gpus[{j}].count", 1)))
        nodes.append(NodeSpec(_int(n.get("node_id", i), where + ".node_id", 0), tuple(pairs),
                              _int(n.get("cpu_cores", 1), where + ".cpu_cores", 1)))
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ConfigError("cluster.nodes", "duplicate node_id")
    return tuple(nodes)


def config_from_dict(d: dict | None) -> ExperimentConfig:
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _check_keys(d, _TOP_KEYS, "")
    seed = _int(d.get("seed", 0), "seed", 0)
    if seed >= 2**64:
        raise ConfigError("seed", "must fit in 64 bits")

    population = _population(_section(d, "population"), seed)

    c = _section(d, "cluster")
    _check_keys(c, {"topology", "nodes", "gpu_catalog", "workers_per_gpu", "contention"}, "cluster.")
    nodes = _nodes(c)
    raw_catalog = c.get("gpu_catalog") or {}
    if not isinstance(raw_catalog, dict):
        raise ConfigError("cluster.gpu_catalog", "must be a mapping")
    catalog = {name: _gpu(name, spec or {}) for name, spec in raw_catalog.items()}
    for n in nodes:
        for t, _ in n.gpus:
            if t not in catalog:
                if t not in presets.GPU_PRESETS:
                    raise ConfigError(f"cluster.nodes[{n.node_id}].gpus",
                                      f"unknown gpu_type {t!r}: not in gpu_catalog or presets")
                catalog[t] = presets.GPU_PRESETS[t]
    wpg = c.get("workers_per_gpu") or {}
    if not isinstance(wpg, dict):
        raise ConfigError("cluster.workers_per_gpu", "must be a mapping")
    cont = c.get("contention") or {}
    _check_keys(cont, {"slowdown_per_extra_worker"}, "cluster.contention.")
    contention = (ContentionModel(_num(cont["slowdown_per_extra_worker"],
                                       "cluster.contention.slowdown_per_extra_worker"))
                  if "slowdown_per_extra_worker" in cont else presets.DEFAULT_CONTENTION)

    p = _section(d, "protocol")
    _check_keys(p, set(ProtocolConfig.__dataclass_fields__), "protocol.")
    proto_kw = {}
    for k, v in p.items():
        if k == "mode":
            proto_kw[k] = v
        elif k == "include_aggregation_in_duration":
            if not isinstance(v, bool):
                raise ConfigError(f"protocol.{k}", "must be true or false")
            proto_kw[k] = v
        else:
            proto_kw[k] = _num(v, f"protocol.{k}")
    protocol = ProtocolConfig(**proto_kw)

    m = _section(d, "model")
    _check_keys(m, {"dim", "update_bound", "accumulator"}, "model.")
    lb = _section(d, "lb")
    _check_keys(lb, {"window", "pool"}, "lb.")

    return ExperimentConfig(
        population=population,
        nodes=nodes,
        catalog=tuple(catalog[k] for k in sorted(catalog)),
        workers_per_gpu={str(k): v for k, v in wpg.items()},
        contention=contention,
        policy=d.get("policy", "rr"),
        protocol=protocol,
        clients_per_round=d.get("clients_per_round", 100),
        num_rounds=d.get("num_rounds", 100),
        total_clients=d.get("total_clients"),
        seed=seed,
        output_dir=str(d.get("output_dir") or default_output_dir()),
        model_dim=m.get("dim", 64),
        update_bound=_num(m.get("update_bound", 0.01), "model.update_bound"),
        accumulator=m.get("accumulator", "incremental"),
        lb=LbOptions(window=lb.get("window"), pool=lb.get("pool", "type")),
    )


def _read_yaml(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read config: {e.strerror}", source=str(path)) from e
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"parse error: {e}", source=str(path)) from e


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        return config_from_dict(_read_yaml(path))
    except ConfigError as e:
        raise ConfigError(e.field, e.message, source=str(path)) from e


def dump_config(config: ExperimentConfig, path: str | Path, with_output_dir: bool = True) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(with_output_dir), sort_keys=False))


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: tuple
    seeds: tuple[int, ...]

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError("axis", f"must be one of {', '.join(SWEEP_AXES)}")
        if not self.values:
            raise ConfigError("values", "must be non-empty")
        if not self.seeds:
            raise ConfigError("seeds", "must be non-empty")

    def cell_config(self, value, seed: int) -> ExperimentConfig:
        base = self.base
        d = base.to_dict()
        d["seed"] = seed
        # a population seed that merely followed the base seed follows the cell seed
        if base.population.seed == base.seed:
            d["population"]["seed"] = seed
        if self.axis == "clients_per_round":
            d["clients_per_round"] = value
        elif self.axis == "policy":
            d["policy"] = value
        elif self.axis == "protocol":
            d["protocol"]["mode"] = value
        else:
            counts = list(value)
            slots = [(i, j) for i, n in enumerate(d["cluster"]["nodes"]) for j in range(len(n["gpus"]))]
            if len(counts) != len(slots):
                raise ConfigError("values", f"gpu_counts entries need {len(slots)} counts, got {len(counts)}")
            for (i, j), cnt in zip(slots, counts):
                d["cluster"]["nodes"][i]["gpus"][j]["count"] = cnt
        return config_from_dict(d)


def sweep_from_dict(d: dict) -> SweepSpec:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "sweep spec must be a mapping")
    _check_keys(d, {"base", "axis", "values", "seeds"}, "")
    base = config_from_dict(d.get("base") or {})
    values = d.get("values")
    if not isinstance(values, list):
        raise ConfigError("values", "must be a list")
    seeds = d.get("seeds", [base.seed])
    if not isinstance(seeds, list):
        raise ConfigError("seeds", "must be a list")
    for i, s in enumerate(seeds):
        _int(s, f"seeds[{i}]", 0)
    return SweepSpec(base, d.get("axis", ""), tuple(tuple(v) if isinstance(v, list) else v for v in values),
                     tuple(seeds))


def load_sweep(path: str | Path) -> SweepSpec:
    return sweep_from_dict(_read_yaml(path))
