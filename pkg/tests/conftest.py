import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffuserscope import design, surface, wavesim

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DESK_GRID = wavesim.SimulationGrid(n=2304, oversample=3, sensor_shape=(512, 512))


@pytest.fixture(scope="session")
def desk():
    return design.desk_system()


@pytest.fixture(scope="session")
def desk_grid():
    return DESK_GRID


@pytest.fixture(scope="session")
def desk_surfaces(desk):
    dx = DESK_GRID.sample_pitch_um(desk)
    shape = DESK_GRID.mask_shape(desk)
    return {kind: surface.generate_surface(desk, kind, 0, dx, shape) for kind in ("MLA", "RUM", "RMM")}


@pytest.fixture(scope="session")
def desk_simulators(desk, desk_surfaces):
    return {
        kind: wavesim.PSFSimulator(desk, surf, DESK_GRID, dtype=np.complex64)
        for kind, surf in desk_surfaces.items()
    }


# -- acceptance summary ---------------------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def criterion_log(request):
    """``log(n, ok, detail)`` records one line per acceptance criterion."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def log(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        lines[n] = line
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
