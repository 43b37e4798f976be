import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from pollen_sim import presets
from pollen_sim.errors import CohortError, ConfigError
from pollen_sim.population import (
    PopulationSpec,
    SizeDistribution,
    batches_for,
    generate_population,
    read_population,
    sample_cohort,
    write_population,
)


def spec(kind, params, n=100, batch_size=20, seed=0):
    return PopulationSpec(n, batch_size, SizeDistribution(kind, tuple(params)), seed)


def test_constant_population():
    pop = generate_population(spec("constant", [40], n=3))
    assert [p.num_batches for p in pop] == [2, 2, 2]
    assert [p.client_id for p in pop] == [0, 1, 2]


def test_lognormal_determinism():
    s = spec("lognormal", [3, 1.5], n=2000, seed=1234)
    a = np.array([p.num_samples for p in generate_population(s)])
    b = np.array([p.num_samples for p in generate_population(s)])
    assert a.tobytes() == b.tobytes()
    c = np.array([p.num_samples for p in generate_population(spec("lognormal", [3, 1.5], n=2000, seed=1))])
    assert not np.array_equal(a, c)


def _truncated_lognormal_mean(mu, sigma, lower):
    z = (math.log(lower) - mu) / sigma
    return math.exp(mu + sigma**2 / 2) * stats.norm.sf(z - sigma) / stats.norm.sf(z)


@pytest.mark.parametrize("name", sorted(presets.POPULATION_PRESETS))
def test_preset_mu_matches_truncated_moment(name):
    p = presets.POPULATION_PRESETS[name]
    mu = optimize.brentq(
        lambda mu: _truncated_lognormal_mean(mu, p["sigma"], p["batch_size"]) - p["target_mean"], -5, 10)
    assert p["mu"] == pytest.approx(mu, abs=1e-5)


def test_openimage_like_total_samples():
    pop = generate_population(presets.population_spec("openimage-like", seed=7))
    assert len(pop) == 13771
    total = sum(p.num_samples for p in pop)
    assert abs(total - 1.6e6) / 1.6e6 < 0.05


@pytest.mark.parametrize("name,count", [("openimage-like", 13771), ("speech-like", 2168),
                                        ("shakespeare-like", 648)])
def test_preset_client_counts(name, count):
    assert presets.population_spec(name).num_clients == count


@given(batch_size=st.integers(1, 64), data=st.data())
def test_batches_for_matches_brute_force(batch_size, data):
    n = data.draw(st.integers(1, 10 * batch_size))
    k = 0
    while k * batch_size < n:
        k += 1
    assert batches_for(n, batch_size) == k


def test_lognormal_right_skew():
    pop = generate_population(spec("lognormal", [3, 1.0], n=1000, batch_size=1, seed=3))
    x = np.array([p.num_samples for p in pop])
    assert x.mean() > np.median(x)


def test_below_one_batch_is_redrawn_or_clamped():
    # every draw lies below one batch, so all clients end up clamped
    pop = generate_population(spec("uniform", [1, 5], n=50, batch_size=20))
    assert {p.num_samples for p in pop} == {20}
    assert all(p.num_batches == 1 for p in pop)
    pop = generate_population(spec("lognormal", [2.0, 1.5], n=3000, batch_size=20, seed=5))
    assert min(p.num_samples for p in pop) >= 20


def test_zipf_capped():
    pop = generate_population(spec("zipf", [1.5, 500], n=1000, batch_size=1))
    assert max(p.num_samples for p in pop) <= 500


@pytest.mark.parametrize("kind,params,field", [
    ("lognormal", [3, 0], "sigma"),
    ("lognormal", [3, -1], "sigma"),
    ("zipf", [1.0, 100], "s"),
    ("uniform", [10, 5], "lo"),
    ("constant", [0], "value"),
    ("weird", [1], "kind"),
])
def test_invalid_distribution_names_field(kind, params, field):
    with pytest.raises(ConfigError) as e:
        generate_population(spec(kind, params))
    assert field in e.value.field


def test_invalid_counts():
    with pytest.raises(ConfigError, match="num_clients"):
        generate_population(spec("constant", [20], n=0))
    with pytest.raises(ConfigError, match="batch_size"):
        generate_population(spec("constant", [20], batch_size=0))


def test_cohort_exhaustive_draw_is_permutation():
    pop = generate_population(spec("constant", [20], n=10))
    c = sample_cohort(pop, 10, 0, np.random.default_rng(1))
    assert sorted(c.client_ids) == list(range(10))
    assert c.round_index == 0


def test_cohort_depends_on_seed():
    pop = generate_population(spec("constant", [20], n=13771))
    a = sample_cohort(pop, 100, 0, np.random.default_rng(1))
    b = sample_cohort(pop, 100, 0, np.random.default_rng(2))
    assert a.client_ids != b.client_ids
    again = sample_cohort(pop, 100, 0, np.random.default_rng(1))
    assert a == again


def test_cohort_too_large():
    pop = generate_population(spec("constant", [20], n=5))
    with pytest.raises(CohortError):
        sample_cohort(pop, 6, 0, np.random.default_rng(0))


@settings(max_examples=50)
@given(n_pop=st.integers(1, 60), data=st.data(), seed=st.integers(0, 2**32))
def test_cohort_never_has_duplicates(n_pop, data, seed):
    pop = generate_population(spec("constant", [20], n=n_pop))
    n = data.draw(st.integers(1, n_pop))
    c = sample_cohort(pop, n, 0, np.random.default_rng(seed))
    assert len(set(c.client_ids)) == n
    assert set(c.client_ids) <= {p.client_id for p in pop}


def test_cohort_inclusion_frequency_binomial():
    n_pop, n, rounds = 13771, 100, 100
    pop = generate_population(spec("constant", [20], n=n_pop))
    counts = np.zeros(n_pop, dtype=int)
    for r in range(rounds):
        c = sample_cohort(pop, n, r, np.random.default_rng([99, r]))
        counts[list(c.client_ids)] += 1
    p = n / n_pop
    mean, sd = rounds * p, math.sqrt(rounds * p * (1 - p))
    # brute-force binomial tail mass beyond 3 standard deviations
    pmf = [math.comb(rounds, k) * p**k * (1 - p) ** (rounds - k) for k in range(rounds + 1)]
    tail = sum(q for k, q in enumerate(pmf) if abs(k - mean) > 3 * sd)
    expected_out = n_pop * tail
    observed_out = int(np.sum(np.abs(counts - mean) > 3 * sd))
    assert abs(observed_out - expected_out) <= 4 * math.sqrt(expected_out) + 1
    assert abs(counts.mean() - mean) < 1e-12
    assert abs(counts.std() - sd) / sd < 0.05


def test_population_csv_round_trip(tmp_path):
    pop = generate_population(spec("lognormal", [4, 1], n=50, seed=2))
    path = tmp_path / "pop.csv"
    write_population(pop, path)
    assert path.read_text().splitlines()[0] == "client_id,num_samples,num_batches"
    assert read_population(path) == pop
