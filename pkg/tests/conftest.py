import numpy as np
import pytest

from models.configs import ForestParams
from models.matching import DistanceMatrix, Match, Pair
from services.simulation_service import generate_scenario, scenario_config


@pytest.fixture
def two_cluster_distances() -> DistanceMatrix:
    # t1, t2 sit next to c1; t3 sits between c2 and c3
    return DistanceMatrix.from_values([[2, 3, 3], [2, 3, 3], [3, 2, 2]])


@pytest.fixture
def chain_match() -> Match:
    """t1-c1-t2-c2-t3-c3 with the middle edge the most expensive removable one."""
    pairs = (Pair(0, 0, 4.0), Pair(1, 0, 1.0), Pair(1, 1, 2.0), Pair(2, 1, 1.0), Pair(2, 2, 4.0))
    return Match(pairs=pairs, treated_count=3, control_count=3)


@pytest.fixture
def small_forest() -> ForestParams:
    return ForestParams(n_trees=20, seed=0)


@pytest.fixture
def small_scenario():
    return generate_scenario(scenario_config("I", n=90, seed=3))


def random_distances(rng: np.random.Generator, n_t: int, n_c: int) -> np.ndarray:
    return rng.integers(0, 10, size=(n_t, n_c)).astype(float)
