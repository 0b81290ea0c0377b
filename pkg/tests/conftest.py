import numpy as np
import pytest

from droc.ambiguity import AmbiguitySpec, characteristic_grid
from droc.bench import load_case
from droc.control import uniform_grid
from droc.dynamics import ControlBox


@pytest.fixture(scope="session")
def case():
    return load_case()


@pytest.fixture(scope="session")
def fb_model(case):
    return case.model()


@pytest.fixture(scope="session")
def fb_spec():
    return AmbiguitySpec(2.2, 0.2, 1.76, 2.64)


@pytest.fixture(scope="session")
def fb_support(fb_spec):
    return characteristic_grid(fb_spec, 10)


@pytest.fixture(scope="session")
def table1_grid(case):
    return case.reference_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_grid(n, lo=-1.0, hi=1.0, values=None):
    return uniform_grid(n, ControlBox([lo], [hi]), values)
