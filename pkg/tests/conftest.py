import random

import pytest

from geofindr.catalog import Catalog, Landmark
from geofindr.geodesy import GeoPoint
from geofindr.world import EVRY, DensitySpec, generate_world


def make_catalog(points, prefix="lm"):
    return Catalog(tuple(Landmark(f"{prefix}{i:04d}", p) for i, p in enumerate(points)))


def random_points(n, seed, lat=(40.0, 55.0), lon=(-5.0, 15.0)):
    rng = random.Random(seed)
    return [GeoPoint(rng.uniform(*lat), rng.uniform(*lon)) for _ in range(n)]


@pytest.fixture(scope="session")
def small_world():
    """A 120-landmark world around Evry with default noise."""
    spec = DensitySpec(uniform_count=80, clusters=DensitySpec().clusters[:1], seed=3)
    return generate_world(spec)


@pytest.fixture(scope="session")
def small_mesh(small_world):
    return small_world.build_mesh()


@pytest.fixture(scope="session")
def quiet_world():
    """Zero jitter, zero offsets: RTT is exactly distance / speed."""
    spec = DensitySpec(uniform_count=80, clusters=DensitySpec().clusters[:1], seed=5,
                       jitter_fraction=0.0, offset_mean_ms=0.0, offset_spread_ms=0.0)
    return generate_world(spec)


@pytest.fixture
def evry():
    return EVRY


# --- acceptance summary -----------------------------------------------------

ACCEPTANCE_DETAILS: dict[str, str] = {}
_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or "::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance_outcomes[name] = "SKIP" if report.skipped else report.outcome.upper().replace("ED", "")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance_outcomes.items(), key=lambda kv: int(kv[0].split("_")[2])):
        detail = ACCEPTANCE_DETAILS.get(name, "")
        terminalreporter.write_line(f"{outcome:5s} {name}  {detail}")
