import numpy as np
import pytest

from stargen.elements import AlgebraShape, BlockShape, Element


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


@pytest.fixture
def m2_shape():
    return AlgebraShape([BlockShape(2, 1)])


def random_element(rng, shape, scale=1.0):
    data = []
    for b in shape.blocks:
        a = rng.standard_normal((b.samples, b.size, b.size))
        a = a + 1j * rng.standard_normal((b.samples, b.size, b.size))
        data.append(scale * a)
    return Element(shape, data)


def random_selfadjoint(rng, shape, scale=1.0):
    e = random_element(rng, shape, scale)
    return 0.5 * (e + e.adjoint())
