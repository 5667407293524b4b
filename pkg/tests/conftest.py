import os
import sys
from fractions import Fraction

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hypdr.formulas import Const, Var, substitute  # noqa: E402
from hypdr.model import load_model  # noqa: E402
from hypdr.smt import SmtSession  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def circle():
    return load_model(fixture_path("circle.hha"))


@pytest.fixture(scope="session")
def sum_model():
    return load_model(fixture_path("sum.dtsts"))


@pytest.fixture(scope="session")
def smt():
    with SmtSession() as session:
        yield session


def ground(phi, sigma, level=0):
    """Substitute a valuation's numbers for its variables at ``level``."""
    mapping = {
        Var(v.name, level): Const(Fraction(x))
        for v, x in sigma.items()
    }
    return substitute(phi, mapping)
