import numpy as np
import pytest

from bench import SpinGlassConfig, generate_spin_glass
from gumbel import RngStream
from model import DiscreteModel


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale run (minutes); needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def binary_chain(fields, couplings):
    """Binary chain with theta_i(x_i) = fields[i] * x_i and theta_i,i+1 = couplings[i] * x_i * x_{i+1}, x in {0, 1}"""
    n = len(fields)
    unary = [np.array([0.0, h]) for h in fields]
    pairwise = {(i, i + 1): np.array([[0.0, 0.0], [0.0, w]]) for i, w in enumerate(couplings)}
    return DiscreteModel(domains=[(0, 1)] * n, unary=unary, pairwise=pairwise)


def random_model(seed, sizes, pairwise_scale=1.0, edges=None):
    """Dense random model; every pair is coupled unless `edges` is given"""
    gen = np.random.default_rng(seed)
    n = len(sizes)
    unary = [gen.normal(size=k) for k in sizes]
    if edges is None:
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairwise = {(i, j): pairwise_scale * gen.normal(size=(sizes[i], sizes[j])) for i, j in edges}
    return DiscreteModel(domains=[tuple(range(k)) for k in sizes], unary=unary, pairwise=pairwise)


@pytest.fixture
def rng():
    return RngStream(20240601)


@pytest.fixture
def three_var_model():
    return random_model(11, (2, 3, 2))


@pytest.fixture
def grid_2x2():
    return generate_spin_glass(SpinGlassConfig(rows=2, cols=2, coupling=1.0, seed=5))


@pytest.fixture
def grid_3x3():
    return generate_spin_glass(SpinGlassConfig(rows=3, cols=3, coupling=2.0, seed=9))
