import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shortfall.market import ModelParams
from shortfall.payoff import PayoffSpec

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def one_step():
    """d=1, b=0, sigma=0.2, T=1, S0=K=100 put."""
    return ModelParams.single(1.0, 100.0, 0.0, 0.2), PayoffSpec("put_on_asset", 100.0)


@pytest.fixture
def two_asset():
    return ModelParams(1.0, [100.0, 90.0], [0.1, -0.05], [[0.2, 0.05], [0.0, 0.3]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number: int, ok: bool, detail: str):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
