import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pollen_sim import presets
from pollen_sim.cluster import (
    Cluster,
    ContentionModel,
    GpuModel,
    NodeSpec,
    allocate_workers,
    expected_time,
    sample_training_time,
)
from pollen_sim.errors import ConfigError, DomainError

CATALOG = presets.GPU_PRESETS


def gpu(a=0.1, b=0.0, c=1.0, d=0.5, **kw):
    return GpuModel("g", a, b, c, d, **kw)


def test_single_a40_gets_13_workers():
    ws = allocate_workers([NodeSpec(0, (("a40-like", 1),))], CATALOG)
    assert len(ws) == 13
    assert {w.gpu_type for w in ws} == {"a40-like"}


def test_single_2080_gets_4_workers():
    ws = allocate_workers([NodeSpec(0, (("rtx2080ti-like", 1),))], CATALOG)
    assert len(ws) == 4


def test_two_node_allocation_order():
    ws = allocate_workers(presets.TOPOLOGY_PRESETS["hetero-1-1"], CATALOG)
    assert [w.worker_id for w in ws] == list(range(17))
    assert [w.gpu_type for w in ws] == ["a40-like"] * 13 + ["rtx2080ti-like"] * 4
    assert [w.node_id for w in ws] == [0] * 13 + [1] * 4


def test_multi_gpu_node_indexes():
    ws = allocate_workers([NodeSpec(0, (("a40-like", 2), ("rtx2080ti-like", 1)))], CATALOG,
                          {"a40-like": 2})
    assert [(w.gpu_type, w.gpu_index) for w in ws] == [
        ("a40-like", 0), ("a40-like", 0), ("a40-like", 1), ("a40-like", 1),
        ("rtx2080ti-like", 2), ("rtx2080ti-like", 2), ("rtx2080ti-like", 2), ("rtx2080ti-like", 2)]
    cl = Cluster(tuple(ws), CATALOG)
    assert cl.co_resident(0) == 2 and cl.co_resident(7) == 4


def test_allocation_errors():
    with pytest.raises(ConfigError, match="unknown gpu_type"):
        allocate_workers([NodeSpec(0, (("h100", 1),))], CATALOG)
    with pytest.raises(ConfigError, match="exceeds capacity"):
        allocate_workers([NodeSpec(0, (("rtx2080ti-like", 1),))], CATALOG, {"rtx2080ti-like": 5})


def test_expected_time_examples():
    g = gpu(a=0.5, b=1.0, c=1.0, d=2.0)
    assert expected_time(g, 1) == 2.5
    assert expected_time(g, math.e) == pytest.approx(0.5 * math.e + 3)
    assert expected_time(g, math.e) == pytest.approx(4.359, abs=1e-3)


def test_expected_time_monotone_scan():
    g = gpu(a=0.05, b=2.0, c=0.5, d=3.0)
    vals = [expected_time(g, m) for m in range(1, 1001)]
    assert all(y1 > y0 for y0, y1 in zip(vals, vals[1:]))


def test_sample_training_time_noise_free():
    g = gpu(a=0.1, b=0.0, c=1.0, d=0.5)
    rng = np.random.default_rng(0)
    assert sample_training_time(g, 10, 1, rng) == pytest.approx(1.5)
    assert sample_training_time(g, 1, 1, rng) == pytest.approx(0.6)


def test_contention_is_linear_in_extra_workers():
    g = gpu(a=0.1, d=0.5)
    cm = ContentionModel(0.25)
    assert sample_training_time(g, 10, 5, None, cm) == pytest.approx(1.5 * 2.0)
    assert cm.factor(1) == 1.0


def test_small_client_noise_monte_carlo():
    g = gpu(a=0.1, d=0.5, noise_sigma_small=0.3, noise_sigma_large=0.0, small_client_threshold=5)
    rng = np.random.default_rng(42)
    x = np.array([sample_training_time(g, 2, 1, rng) for _ in range(10_000)])
    assert 0.25 <= x.std() / x.mean() <= 0.35
    # large clients use the other sigma
    assert sample_training_time(g, 5, 1, rng) == pytest.approx(expected_time(g, 5))


def test_domain_errors():
    g = gpu()
    with pytest.raises(DomainError):
        expected_time(g, 0)
    with pytest.raises(DomainError):
        sample_training_time(g, 0.5, 1, np.random.default_rng())


@pytest.mark.parametrize("kw,field", [
    (dict(a=-1.0), "latency_linear"),
    (dict(b=-1.0), "latency_log_coeff"),
    (dict(c=0.0), "latency_log_scale"),
    (dict(a=0.1, d=-0.2), "latency_offset"),
    (dict(noise_sigma_small=-0.1), "noise_sigma"),
    (dict(max_workers=0), "max_workers"),
])
def test_gpu_validation(kw, field):
    with pytest.raises(ConfigError, match=field):
        gpu(**kw)


def test_negative_offset_allowed_when_curve_stays_positive():
    g = gpu(a=1.0, d=-0.5)
    assert expected_time(g, 1) == pytest.approx(0.5)


gpu_params = st.tuples(
    st.floats(0, 5), st.floats(0, 5), st.floats(0.01, 10), st.floats(-3, 5),
    st.floats(0, 2), st.floats(0, 2), st.integers(1, 10),
)


@given(p=gpu_params, m=st.integers(1, 10**6), workers=st.integers(1, 16), seed=st.integers(0, 2**32))
def test_sample_time_always_positive(p, m, workers, seed):
    a, b, c, d, s1, s2, thr = p
    try:
        g = GpuModel("g", a, b, c, d, s1, s2, thr, 16)
    except ConfigError:
        return
    t = sample_training_time(g, m, workers, np.random.default_rng(seed), ContentionModel(0.1))
    assert t > 0


@given(p=gpu_params, m=st.integers(1, 10**5))
def test_zero_noise_zero_contention_is_expected_time(p, m):
    a, b, c, d, *_ = p
    try:
        g = GpuModel("g", a, b, c, d)
    except ConfigError:
        return
    assert sample_training_time(g, m, 7, np.random.default_rng(0), ContentionModel(0.0)) == expected_time(g, m)


@given(a=st.floats(0.001, 5), extra=st.floats(0.001, 5), b=st.floats(0, 3), d=st.floats(0.01, 5),
       m=st.integers(1, 10**6))
def test_faster_linear_term_dominates(a, extra, b, d, m):
    fast = GpuModel("f", a, b, 1.0, d)
    slow = GpuModel("s", a + extra, b, 1.0, d)
    assert expected_time(fast, m) < expected_time(slow, m)


def test_a40_preset_faster_than_2080_preset_everywhere():
    a40, rtx = CATALOG["a40-like"], CATALOG["rtx2080ti-like"]
    ms = np.unique(np.geomspace(1, 1e6, 5000).round())
    assert all(expected_time(a40, m) < expected_time(rtx, m) for m in ms)
