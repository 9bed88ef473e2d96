import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sym(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) * scale
    return 0.5 * (a + a.T)


def random_psd(rng, d):
    b = rng.normal(size=(d, d))
    a = b @ b.T
    return 0.5 * (a + a.T)


# acceptance criteria append (name, passed, detail) here; printed after the run
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
