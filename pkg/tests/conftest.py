import pytest

from pnpkit import Rng


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture
def rng2():
    return Rng(98765)


def random_image(rng, shape, lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, shape)
