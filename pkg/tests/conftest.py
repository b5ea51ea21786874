import numpy as np
import pytest

# one line per acceptance criterion, echoed in the terminal summary
VERDICTS = []


def record(criterion: int, ok: bool, detail: str):
    VERDICTS.append((criterion, ok, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale training runs (minutes)")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
