import numpy as np
import pytest
from hypothesis import settings

from intmed.core import Contrast
from intmed.dgp import DgpSpec

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

C10 = Contrast(1, 0)
C11 = Contrast(1, 1)
C00 = Contrast(0, 0)


@pytest.fixture(scope="session")
def dgp():
    return DgpSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
