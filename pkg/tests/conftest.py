import numpy as np
import pytest

from isinglab.model import CouplingModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def symmetric_model(L, g, seed, theta_range=0.3):
    rng = np.random.default_rng(seed)
    J = np.triu(rng.normal(0.0, g / np.sqrt(L), (L, L)), 1)
    J = J + J.T
    return CouplingModel(rng.uniform(-theta_range, theta_range, L), J)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
