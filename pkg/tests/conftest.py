import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cyclharm.eigen import Catalog, CatalogError, enumerate_eigen  # noqa: E402
from cyclharm.geometry import Params  # noqa: E402

DEFAULT_A = (0.0, 1.0, 2.0, 3.0)
CATALOG_ORDER = 4


@pytest.fixture(scope="session")
def params():
    return Params(DEFAULT_A)


@pytest.fixture(scope="session")
def catalog(params, request):
    """Records of all kinds up to order 4, kept warm across runs in the pytest cache."""
    path = Path(request.config.cache.mkdir("cyclharm")) / "catalog.json"
    cat = None
    if path.exists():
        try:
            cat = Catalog.load(path, params)
        except CatalogError:
            cat = None
    if cat is None:
        cat = Catalog(params)
    for kind in (1, 2, 3):
        enumerate_eigen(kind, CATALOG_ORDER, params, catalog=cat)
    if cat.solves:
        cat.save(path)
    cat.solves = 0
    return cat


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def region_points(rng, n, radius=1.0, positive=True):
    """Random points of the positive octant inside the ball (the region R), or anywhere."""
    out = []
    while len(out) < n:
        p = rng.uniform(0 if positive else -radius, radius, 3)
        if positive and np.dot(p, p) >= 1:
            continue
        if np.min(np.abs(p)) < 1e-3:
            continue
        out.append(p)
    return np.array(out)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and fail the test if it did not pass."""

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
