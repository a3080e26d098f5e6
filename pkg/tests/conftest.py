import numpy as np
import pytest

from sheetwkb.amplitude import TorusSpectrum, hj_solve
from sheetwkb.mhd_algebra import canon_config

CRITERIA = {}


@pytest.fixture(scope="session")
def canon():
    return canon_config()


@pytest.fixture(scope="session")
def cos_trajectory(canon):
    """Amplitude trajectory from cos(theta) on the canonical sheet (K = 8, J = 0)."""
    return hj_solve(TorusSpectrum.cos_theta(0, 8), canon, 0.005, 0.2)


@pytest.fixture
def record_criterion():
    """Record the outcome of an acceptance criterion for the terminal summary."""
    def record(number: int, ok: bool, detail: str):
        CRITERIA.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        entries = CRITERIA[number]
        ok = all(e[0] for e in entries)
        detail = "; ".join(e[1] for e in entries)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_spectrum(rng, J, K, scale=1.0):
    c = rng.normal(size=(2 * J + 1, 2 * J + 1, 2 * K + 1)) \
        + 1j * rng.normal(size=(2 * J + 1, 2 * J + 1, 2 * K + 1))
    return TorusSpectrum(scale * c, J, K).symmetrize().sharpen()
