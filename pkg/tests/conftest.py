import pytest
from hypothesis import settings

from divfbp.boundary import boundary_from_surface
from divfbp.fbp import Grid2D, solve_value_surface
from divfbp.full_info import solve_full_info
from divfbp.params import ModelParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

CASES = {
    "zero_drift_sum": ModelParams(-1.0, 1.0, 1.0, 0.5),
    "positive_drift_sum": ModelParams(-0.5, 1.0, 1.0, 0.5),
    "negative_drift_sum": ModelParams(-1.0, 0.5, 1.0, 0.5),
}


class Solved:
    def __init__(self, params, n):
        self.params = params
        self.full_info = solve_full_info(params)
        self.grid = Grid2D.default(params, self.full_info.a_star, n, n)
        self.surface = solve_value_surface(params, self.grid, self.full_info)
        self.boundary = boundary_from_surface(self.surface, self.full_info.a_star)


_cache = {}


def solved(name, n=81):
    key = (name, n)
    if key not in _cache:
        _cache[key] = Solved(CASES[name], n)
    return _cache[key]


@pytest.fixture(scope="session", params=list(CASES))
def small_case(request):
    return solved(request.param)


@pytest.fixture(scope="session")
def zero_case():
    return solved("zero_drift_sum")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
