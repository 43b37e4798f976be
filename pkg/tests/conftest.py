import pytest

from pollen_sim.cluster import Cluster, ContentionModel, GpuModel, WorkerSpec
from pollen_sim.population import ClientProfile, Cohort


def linear_gpu(name="g", a=0.1, d=0.5, max_workers=16, **kw):
    return GpuModel(name, a, 0.0, 1.0, d, max_workers=max_workers, **kw)


def make_workers(types):
    """One worker per physical GPU, ids in order."""
    return [WorkerSpec(i, 0, t, i) for i, t in enumerate(types)]


def make_profiles(batches):
    """``batches`` is a sequence of m; client ids are positions, samples = 10*m."""
    return {i: ClientProfile(i, 10 * m, m) for i, m in enumerate(batches)}


def cohort_of(ids, round_index=1):
    return Cohort(round_index, tuple(ids))


@pytest.fixture
def two_gpu_cluster():
    cat = {"fast": linear_gpu("fast", 1.0, 0.0 + 1e-9), "slow": linear_gpu("slow", 2.0, 1e-9)}
    workers = make_workers(["fast", "slow"])
    return Cluster(tuple(workers), cat, ContentionModel(0.0))


# acceptance criteria append (name, passed, detail) here; printed after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0][1:].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
