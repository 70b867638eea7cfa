import numpy as np
import pytest

from isac_chest.grid import OfdmConfig, dmrs_pattern
from isac_chest.sensing import SensingConfig

THREE_PATH = ([0.0, -5.0, -8.0], [100e-9, 200e-9, 400e-9], [0.0, -1.87e3, 3.73e3])

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def desk_cfg():
    return OfdmConfig.table1(256)


@pytest.fixture
def desk_pat(desk_cfg):
    return dmrs_pattern(desk_cfg, 8, 8)


@pytest.fixture
def desk_sensing():
    return SensingConfig(256, 256, slots_combined=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""
    def _report(tag: str, ok: bool, detail: str) -> None:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)


def random_psd(rng, n, rank=None):
    """Random Hermitian PSD matrix with unit average diagonal."""
    rank = n if rank is None else rank
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    r = a @ a.conj().T
    return r * n / np.trace(r).real
