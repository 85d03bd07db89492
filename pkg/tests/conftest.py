from __future__ import annotations

import pytest

from sarv import CORPORA, load_facts, load_program, saturate

RESCUE = CORPORA / "rescue"
SHAMS = CORPORA / "shams"
RESCUE_FILES = [RESCUE / f"{g}.sarv" for g in ("protocol", "compliance", "obligation", "counting", "deontic")]


def rescue_program():
    return load_program(*RESCUE_FILES)


def run_rescue(facts_name: str):
    return saturate(rescue_program(), load_facts(RESCUE / f"{facts_name}.facts"))


def run_shams():
    return saturate(load_program(SHAMS / "shams.sarv"), load_facts(SHAMS / "input.facts"))


@pytest.fixture(scope="session")
def rescue3():
    return run_rescue("requests3")


@pytest.fixture(scope="session")
def rescue_dc():
    return run_rescue("doublecheck")


@pytest.fixture(scope="session")
def rescue2():
    return run_rescue("requests2")


@pytest.fixture(scope="session")
def rescue1():
    return run_rescue("requests1")


@pytest.fixture(scope="session")
def shams():
    return run_shams()
