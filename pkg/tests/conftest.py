import pytest

from kac.kernels import KernelSpec, build_rate_table
from kac.rng import make_rng


@pytest.fixture(scope="session")
def spec():
    return KernelSpec(d=3, gamma=0.5, nu=0.5)


@pytest.fixture(scope="session")
def table(spec):
    return build_rate_table(spec)


@pytest.fixture
def rng():
    return make_rng(20240607)
