import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("recast", deadline=None, max_examples=60)
settings.load_profile("recast")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, m, scale=1.0):
    A = rng.standard_normal((m, m))
    return scale * (A @ A.T / m + 0.5 * np.eye(m))


def random_corr(rng, m):
    S = random_spd(rng, m)
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
