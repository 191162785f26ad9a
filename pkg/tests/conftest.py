import math

import numpy as np
import pytest

from rodlimit import beam1d, correctors, geometry, rod3d


@pytest.fixture(scope="session")
def disk():
    return geometry.section_from_config({"shape": "disk", "resolution": 0.2})


@pytest.fixture(scope="session")
def disk_moments(disk):
    return geometry.section_moments(disk)


@pytest.fixture(scope="session")
def grid(disk):
    return rod3d.assemble_grid(disk, 1.0, 8)


@pytest.fixture(scope="session")
def square():
    m = geometry.build_cross_section({"shape": "rectangle", "width": 1.0, "height": 1.0}, 0.2)
    return geometry.normalize_section(m)[0]


@pytest.fixture(scope="session")
def square_grid(square):
    return rod3d.assemble_grid(square, 1.0, 8)


@pytest.fixture(scope="session")
def disk_correctors(disk, disk_moments):
    return correctors.solve_correctors(disk, disk_moments)


@pytest.fixture(scope="session")
def whirl_traj(disk_moments):
    """Mode-1 beam data with a whirling velocity, scaled to smallness 0.05."""
    K = 3
    w3 = math.sqrt(disk_moments.I3) * (2 * math.pi) ** 2
    v0 = beam1d.single_mode(1, 1.0, 2, K)
    v1 = w3 * beam1d.single_mode(1, 1.0, 3, K, phase=-0.5 * math.pi)
    sn = beam1d.smallness_norms(v0, v1, beam1d.zero_forcing(), 1.0, K)
    a = 0.05 / max(sn["v0_H8"], sn["v1_H5"])
    return beam1d.solve_beam(None, a * v0, a * v1, disk_moments, 1.0, 0.5, K, 0.005)


def random_field(grid, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * grid.filter(rng.standard_normal((grid.n1, grid.N, 3)))


@pytest.fixture(scope="session")
def ref_problem():
    """Reference configuration on a coarse section mesh."""
    from rodlimit.harness.config import load_config
    from rodlimit.harness.sweep import build_problem
    return build_problem(load_config(overrides={"section.resolution": 0.2}))


@pytest.fixture(scope="session")
def ref_initial(ref_problem):
    from rodlimit.harness.sweep import construct_initial
    return construct_initial(ref_problem, 0.1)


# one summary line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
