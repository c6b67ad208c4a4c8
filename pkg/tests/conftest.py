import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def observed_panel():
    from gnnload.synthgen import reference_observed_panel

    return reference_observed_panel()


@pytest.fixture(scope="session")
def small_synthetic(observed_panel):
    from gnnload.synthgen import SynthConfig, make_synthetic_panel

    return make_synthetic_panel(observed_panel, SynthConfig(T=2400, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Call with (criterion, ok, detail); the line is printed now and again in the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(num, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
