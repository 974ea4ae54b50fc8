import numpy as np
import pytest

from edlm_mpc.edlm import PJM


def random_pjm(rng, Ly, Lu, My, Mu, scale=1.0):
    blocks = [scale * rng.uniform(-1, 1, (My, My)) for _ in range(Ly)]
    blocks += [scale * rng.uniform(-1, 1, (My, Mu)) for _ in range(Lu)]
    return PJM(blocks, Ly, Lu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
