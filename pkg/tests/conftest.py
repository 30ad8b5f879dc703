import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

SEED = 12345


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


# one line per acceptance criterion, printed at the end of the session
CRITERIA = {}


def _order(key):
    tag = key.split()[0]
    return int(tag.rstrip("abcd")), tag


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=_order):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"Criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
