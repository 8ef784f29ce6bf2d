import numpy as np
import pytest

from tdm.skeleton import SkeletonTopology, default_topology


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def topo():
    return default_topology()


@pytest.fixture
def tiny_topo():
    # neck -> shoulder -> elbow body chain plus one face landmark
    return SkeletonTopology(("neck", "shoulder", "elbow", "nose"), ((0, 1), (1, 2), (0, 3)),
                            frozenset({3}), name="tiny")
