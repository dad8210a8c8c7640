import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helpers import MAP_ITERS

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_tree():
    from gphlvm.graphtax import synthetic_tree

    return synthetic_tree(2, 2, 2, 6, 0.1, np.random.default_rng(3))


@pytest.fixture(scope="session")
def tree30():
    # 15-node binary tree, 2 points per node, D = 8
    from gphlvm.graphtax import synthetic_tree

    return synthetic_tree(3, 2, 2, 8, 0.1, np.random.default_rng(0))


@pytest.fixture(scope="session")
def tree30_stress_model(tree30):
    from gphlvm.gplvm import TrainConfig, train_map

    graph, ds = tree30
    return train_map(ds, graph, TrainConfig(regularizer="stress", gamma=1000.0, iterations=MAP_ITERS, seed=0))


def pytest_terminal_summary(terminalreporter):
    from helpers import acceptance_lines

    lines = acceptance_lines()
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
