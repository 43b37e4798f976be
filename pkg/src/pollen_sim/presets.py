"""Built-in calibration presets.

Population presets use a lognormal sample-count law. ``mu`` is chosen so that
the mean of the lognormal *conditioned on at least one batch* hits the target
mean samples per client (see ``tests/test_population.py`` for the derivation).

GPU presets share the learner's model family. The "a40-like" curve is below
the "rtx2080ti-like" one at every batch count, and the A40 hosts 13 workers
against 4 for the 2080.
"""

from .cluster import ContentionModel, GpuModel, NodeSpec
from .population import PopulationSpec, SizeDistribution

POPULATION_PRESETS = {
    # 1.6e6 samples over 13771 clients, batch 20
    "openimage-like": dict(num_clients=13771, batch_size=20, target_mean=1.6e6 / 13771,
                           mu=4.135468, sigma=1.0),
    # 157k clips over 2168 speakers, batch 20
    "speech-like": dict(num_clients=2168, batch_size=20, target_mean=157000 / 2168,
                        mu=3.836477, sigma=0.8),
    # 648 characters, batch 4; mean of 60 samples is a free choice
    "shakespeare-like": dict(num_clients=648, batch_size=4, target_mean=60.0,
                             mu=3.321958, sigma=1.2),
}

GPU_PRESETS = {
    "a40-like": GpuModel(
        gpu_type="a40-like",
        latency_linear=0.06,
        latency_log_coeff=0.25,
        latency_log_scale=1.0,
        latency_offset=0.4,
        noise_sigma_small=0.3,
        noise_sigma_large=0.08,
        small_client_threshold=3,
        max_workers=13,
    ),
    "rtx2080ti-like": GpuModel(
        gpu_type="rtx2080ti-like",
        latency_linear=0.3,
        latency_log_coeff=0.6,
        latency_log_scale=1.0,
        latency_offset=1.0,
        noise_sigma_small=0.3,
        noise_sigma_large=0.08,
        small_client_threshold=3,
        max_workers=4,
    ),
}

DEFAULT_CONTENTION = ContentionModel(slowdown_per_extra_worker=0.1)

TOPOLOGY_PRESETS = {
    # one A40 node plus one 2080 node
    "hetero-1-1": (NodeSpec(0, (("a40-like", 1),), 11), NodeSpec(1, (("rtx2080ti-like", 1),), 8)),
    "hetero-1-2": (NodeSpec(0, (("a40-like", 1),), 11), NodeSpec(1, (("rtx2080ti-like", 2),), 16)),
    "hetero-1-3": (NodeSpec(0, (("a40-like", 1),), 11), NodeSpec(1, (("rtx2080ti-like", 3),), 24)),
    "hetero-1-4": (NodeSpec(0, (("a40-like", 1),), 11), NodeSpec(1, (("rtx2080ti-like", 4),), 32)),
    "homo-1xa40": (NodeSpec(0, (("a40-like", 1),), 11),),
    "homo-2xa40": (NodeSpec(0, (("a40-like", 2),), 22),),
    "homo-4xa40": (NodeSpec(0, (("a40-like", 4),), 44),),
}


def population_spec(name: str, seed: int = 0) -> PopulationSpec:
    p = POPULATION_PRESETS[name]
    return PopulationSpec(
        num_clients=p["num_clients"],
        batch_size=p["batch_size"],
        size_distribution=SizeDistribution("lognormal", (p["mu"], p["sigma"])),
        seed=seed,
    )
