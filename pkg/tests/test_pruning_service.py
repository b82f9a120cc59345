import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.errors import InfeasibleSpecError
from models.matching import DistanceMatrix, Match, MatchSpec, Pair
from services.flow_matching_service import min_avg_match
from services.pruning_service import (
    is_star_forest,
    match_components,
    prune,
    prune_steps,
    removable_edges,
)


def one_to_one(n: int) -> Match:
    return Match(pairs=tuple(Pair(i, i, 1.0) for i in range(n)), treated_count=n, control_count=n)


def test_one_to_one_match_has_no_removable_edges():
    assert removable_edges(one_to_one(4)) == set()


def test_star_has_no_removable_edges():
    star = Match(pairs=(Pair(0, 0, 1.0), Pair(0, 1, 2.0), Pair(0, 2, 3.0)), treated_count=1, control_count=3)
    assert removable_edges(star) == set()
    assert prune(star) == star


def test_chain_removable_edges(chain_match):
    assert removable_edges(chain_match) == {(1, 0), (1, 1), (2, 1)}


def test_chain_prunes_the_middle_edge(chain_match):
    assert list(prune_steps(chain_match)) == [Pair(1, 1, 2.0)]

    pruned = prune(chain_match)
    assert match_components(pruned) == [([0, 1], [0]), ([2], [1, 2])]
    assert is_star_forest(pruned)
    assert not is_star_forest(chain_match)


def test_distance_matrix_overrides_pair_distances(chain_match):
    values = np.zeros((3, 3))
    values[1, 0] = 9.0
    assert [(p.treated, p.control) for p in prune_steps(chain_match, values)] == [(1, 0)]


def test_ties_delete_the_smallest_pair_first():
    square = Match(
        pairs=tuple(Pair(t, c, 1.0) for t in range(2) for c in range(2)),
        treated_count=2,
        control_count=2,
    )
    steps = [(p.treated, p.control) for p in prune_steps(square)]
    assert steps == [(0, 0), (1, 1)]
    assert prune(square).edges == {(0, 1), (1, 0)}


def test_ties_follow_unit_ids_not_positions():
    square = Match(
        pairs=tuple(Pair(t, c, 1.0) for t in range(2) for c in range(2)),
        treated_count=2,
        control_count=2,
    )
    # "t10" sorts before "t2" although it sits in the second row
    ids = (("t2", "t10"), ("c1", "c2"))
    steps = [(p.treated, p.control) for p in prune_steps(square, ids=ids)]
    assert steps == [(1, 0), (0, 1)]

    D = DistanceMatrix(values=np.ones((2, 2)), kind="proximity", treated_ids=ids[0], control_ids=ids[1])
    assert prune(square, D).edges == {(0, 0), (1, 1)}


def test_components_of_empty_match():
    assert match_components(Match(pairs=(), treated_count=2, control_count=2)) == []


@settings(max_examples=60, deadline=None)
@given(
    st.integers(2, 8),
    st.integers(2, 8),
    st.sampled_from([1, 2, 3]),
    st.integers(0, 2**32 - 1),
)
def test_pruned_matches_are_star_forests(n_t, n_c, upper, seed):
    rng = np.random.default_rng(seed)
    D = rng.integers(0, 10, size=(n_t, n_c)).astype(float)
    spec = MatchSpec(m_t=1, m_c=1, M_t=upper, M_c=upper)
    try:
        match = min_avg_match(D, spec).match
    except InfeasibleSpecError:
        return

    pruned = prune(match, D)
    assert pruned.edges <= match.edges
    assert removable_edges(pruned) == set()
    assert is_star_forest(pruned)
    assert pruned.satisfies(spec, lower_bounds=False)
    assert len(list(prune_steps(match, D))) <= len(match)
    # removing a removable edge never isolates a unit
    assert np.array_equal(pruned.treated_degrees() > 0, match.treated_degrees() > 0)
    assert np.array_equal(pruned.control_degrees() > 0, match.control_degrees() > 0)
    for treated, control in match_components(pruned):
        assert len(treated) + len(control) <= 1 + upper
        assert len(treated) == 1 or len(control) == 1
