import numpy as np
import pytest

from cstr.channel import Cir


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cir(rng, n, id="0"):
    taps = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return Cir(taps=taps, id=id)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        ok, text = RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {text}")
