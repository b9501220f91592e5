import numpy as np
import pytest

from probebake.fixtures import cube_mesh, grid_quad
from probebake.mesh import Mesh
from probebake.sh import make_direction_set


@pytest.fixture(scope="session")
def ds960():
    return make_direction_set(960)


@pytest.fixture(scope="session")
def ds120():
    return make_direction_set(120)


@pytest.fixture
def unit_quad():
    return grid_quad((0, 0, 0), (1, 0, 0), (0, 1, 0), 4, 4, name="unit_quad")


@pytest.fixture
def cube():
    return cube_mesh()


def right_triangle():
    return Mesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], name="tri")


def random_rigid(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    t = np.eye(4)
    t[:3, :3] = rot
    t[:3, 3] = rng.uniform(-5, 5, size=3)
    return t


# ---------------------------------------------------------------------------
# One PASS/FAIL line per acceptance criterion in the terminal summary.

_CRITERIA = {}
_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERIA[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    if report.when == "call" or report.failed:
        if _OUTCOMES.get(report.nodeid) != "FAIL":
            _OUTCOMES[report.nodeid] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (number, title) in sorted(_CRITERIA.items(), key=lambda kv: kv[1][0]):
        if nodeid in _OUTCOMES:
            terminalreporter.write_line(f"criterion {number:2d} {_OUTCOMES[nodeid]}  {title}")
