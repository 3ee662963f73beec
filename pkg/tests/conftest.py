import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ruinlab.ladder_calculus import ladder_system
from ruinlab.risk_model import Exponential, RiskModel, TiltedPareto

SEED = 20261016


def make_m1() -> RiskModel:
    return RiskModel(2.0, 1.0, Exponential(1.0))


def make_m2() -> RiskModel:
    return RiskModel(0.5, 1.0, TiltedPareto(1.0, 3.0, scale=0.5))


@pytest.fixture(scope="session")
def m1():
    return make_m1()


@pytest.fixture(scope="session")
def m2():
    return make_m2()


@pytest.fixture(scope="session")
def s1(m1):
    return ladder_system(m1)


@pytest.fixture(scope="session")
def s2(m2):
    return ladder_system(m2)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
