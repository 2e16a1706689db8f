import json
import math
import time

import numpy as np
import pytest

from inls.grid import RadialField, make_grid
from inls.groundstate import ground_state, solve_profile_shooting
from inls.model import ModelParams
from oracles import GOLDEN

POHOZAEV_CASES = [(3, 1, 2.5), (3, 1, 4), (2, 1, 3.5)]
DYN_M = 4096
BLOWUP_R = 14.0


@pytest.fixture(scope="session")
def golden():
    return json.loads(GOLDEN.read_text())


@pytest.fixture(scope="session")
def gs_cache():
    return {}


@pytest.fixture(scope="session")
def solve(gs_cache):
    """Memoised ground state at the default (fine) resolution."""

    def _solve(N, b, p, omega=1.0):
        key = (N, b, p, omega)
        if key not in gs_cache:
            gs_cache[key] = ground_state(ModelParams(N, b, p, omega))
        return gs_cache[key]

    return _solve


@pytest.fixture(scope="session")
def dyn_gs():
    """Ground states polished on the dynamics grid (R = 12, M = 4096)."""
    cache = {}

    def _get(N, b, p, omega=1.0, R=12.0):
        key = (N, b, p, omega, R)
        if key not in cache:
            cache[key] = solve_profile_shooting(ModelParams(N, b, p, omega), make_grid(N, R, DYN_M), check=False)
        return cache[key]

    return _get


@pytest.fixture(scope="session")
def gaussian_fixture():
    """u = exp(-r^2/2), N = 3, b = 1, p = 3, omega = 1 on R = 12, M = 4096."""
    grid = make_grid(3, 12.0, 4096)
    return RadialField.from_function(grid, lambda r: np.exp(-0.5 * r * r)), ModelParams(3, 1, 3, 1.0)


def random_fields(grid, n, seed, complex_=False):
    rng = np.random.default_rng(seed)
    r = np.asarray(grid.nodes)
    out = []
    for _ in range(n):
        a, w, k = rng.uniform(0.2, 2.0), rng.uniform(0.7, 3.0), rng.uniform(0.0, 2.0)
        v = a * np.exp(-(r / w) ** 2) * (1.0 + 0.5 * np.cos(k * r + rng.uniform(0, math.pi)))
        if complex_:
            v = v * np.exp(1j * rng.uniform(0, 1) * r)
        out.append(RadialField(grid, v))
    return out


# --------------------------------------------------------------------- acceptance summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def run_timings():
    return {}


# --------------------------------------------------------------------- shared evolutions
@pytest.fixture(scope="session")
def gaussian_run():
    """exp(-r^2/2) at (3,1,2.5) to T = 20 with adaptive steps."""
    from inls.dynamics import evolve

    prm = ModelParams(3, 1, 2.5, 1.0)
    u0 = RadialField.from_function(make_grid(3, 12.0, DYN_M), lambda r: np.exp(-0.5 * r * r))
    return u0, prm, evolve(u0, prm, 20.0, 0.1)


@pytest.fixture(scope="session")
def stationary_run(dyn_gs):
    from inls.dynamics import evolve

    Q = dyn_gs(3, 1, 2.5)
    return Q, evolve(Q.profile, Q.params, 1.0, 0.05, reference=Q.profile)


@pytest.fixture(scope="session")
def small_gaussian_run():
    """Nearly linear Gaussian on a wide ball, so the variance is never truncated."""
    from inls.dynamics import evolve

    prm = ModelParams(3, 1, 2.5, 1.0)
    u0 = RadialField.from_function(make_grid(3, 20.0, 8192), lambda r: 1e-3 * np.exp(-0.5 * r * r))
    return u0, prm, evolve(u0, prm, 1.0, 0.05)


@pytest.fixture(scope="session")
def blowup_run(dyn_gs, run_timings):
    """phi^0.2 at (3,1,4): a K- datum, on a ball wide enough that it lies in the variance space."""
    from inls.dynamics import classify_initial_data, evolve, instability_family

    t0 = time.perf_counter()
    Q = dyn_gs(3, 1, 4, R=BLOWUP_R)
    u0 = instability_family(Q, 0.2, grid=Q.grid)
    cl = classify_initial_data(u0, Q.params, Q.action_value)
    tr = evolve(u0, Q.params, 5.0, 0.01)
    run_timings["blowup"] = time.perf_counter() - t0
    return Q, u0, cl, tr


@pytest.fixture(scope="session")
def kplus_run(dyn_gs, run_timings):
    """0.5 Q at (3,1,4): a K+ datum."""
    from inls.dynamics import classify_initial_data, evolve

    t0 = time.perf_counter()
    Q = dyn_gs(3, 1, 4)
    u0 = 0.5 * Q.profile
    cl = classify_initial_data(u0, Q.params, Q.action_value)
    tr = evolve(u0, Q.params, 10.0, 0.05)
    run_timings["kplus"] = time.perf_counter() - t0
    return Q, u0, cl, tr


@pytest.fixture(scope="session")
def stability_runs(dyn_gs):
    """max distance for seeds 0..4, eps = 1e-2, T = 20 at (3,1,2.5)."""
    from inls.dynamics import stability_experiment

    Q = dyn_gs(3, 1, 2.5)
    return {seed: stability_experiment(Q, 1e-2, 20.0, seed)[0] for seed in range(5)}
