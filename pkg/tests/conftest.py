import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure the numerics only."""
    from coupled_meanfield import constraints as C, dynamics as D, forces as F, transport

    for model in (C.shift(), C.warped(0.5, [[1.0, 0.0], [0.0, 1.0]], "tanh", 2, 2)):
        f = D.packed_rhs(model, F.soft(), np.array([1.0]))
        f(np.zeros(2 * model.dim_y + model.dim_x))
    transport.assignment(np.ones((2, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``.

    Lines are printed immediately and repeated in the terminal summary.
    """
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.setdefault(number, []).append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            for line in _CRITERIA[number]:
                terminalreporter.write_line(line)
