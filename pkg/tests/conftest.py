"""Shared fixtures.

Large batches are session-scoped so the acceptance and unit tests reuse them.
"""

import pytest

from bb84time.bb84_analysis import analysis
from bb84time.config import baseline
from bb84time.sim_full import simulate_batch
from bb84time.sim_synth import SynthModel, synth_batch

SEED = 20240611
BIG = 100_000

ACCEPTANCE = {}


def record(num: int, ok: bool, detail: str):
    ACCEPTANCE[num] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def cfg_1():
    return baseline(0.1)


@pytest.fixture(scope="session")
def cfg_2():
    return baseline(0.01)


@pytest.fixture(scope="session")
def an_1(cfg_1):
    return analysis(cfg_1)


@pytest.fixture(scope="session")
def an_2(cfg_2):
    return analysis(cfg_2)


@pytest.fixture(scope="session")
def full_1(cfg_1):
    return simulate_batch(cfg_1, SEED, BIG)


@pytest.fixture(scope="session")
def full_2(cfg_2):
    return simulate_batch(cfg_2, SEED, BIG)


@pytest.fixture(scope="session")
def model_1(cfg_1):
    return SynthModel.build(cfg_1)


@pytest.fixture(scope="session")
def model_2(cfg_2):
    return SynthModel.build(cfg_2)


@pytest.fixture(scope="session")
def synth_2(model_2, cfg_2):
    return synth_batch(model_2, cfg_2, SEED + 1, BIG)
