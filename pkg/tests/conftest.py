import numpy as np
import pytest
from hypothesis import settings

from physarum.mesh import refine_uniform, structured_rect_mesh

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def pair2():
    return refine_uniform(structured_rect_mesh(2, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
