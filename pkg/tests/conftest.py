import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qleak.text import parse_model

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name: str):
    return parse_model((FIXTURES / name).read_text())


@pytest.fixture
def crowds():
    return load_fixture("crowds.ihs")


@pytest.fixture
def crowds_var():
    return load_fixture("crowds_var.ihs")


@pytest.fixture
def ebay():
    return load_fixture("ebay.ihs")


@pytest.fixture
def ebay_uniform():
    return load_fixture("ebay_uniform.ihs")


@pytest.fixture
def intro_mc():
    return load_fixture("intro.mc")


@pytest.fixture
def scc_mc():
    return load_fixture("scc_example.mc")


@pytest.fixture
def cp_instance():
    return load_fixture("cp_instance.mc")
