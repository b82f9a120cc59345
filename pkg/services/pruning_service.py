import logging
from collections import Counter
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from models.matching import DistanceMatrix, Match, Pair

logger = logging.getLogger(__name__)


def removable_edges(m: Match) -> set[tuple[int, int]]:
    """Edges whose treated and control endpoints both have degree at least two."""
    t_deg, c_deg = m.treated_degrees(), m.control_degrees()
    return {(p.treated, p.control) for p in m.pairs if t_deg[p.treated] >= 2 and c_deg[p.control] >= 2}


class MatchPruner:
    """Greedy deletion of the most distant removable edge until every component is a star.

    Equal distances are broken by the smallest (treated_id, control_id), compared as
    strings; ids come from `ids`, else from a DistanceMatrix, else the group positions.
    """

    def __init__(
        self: "MatchPruner",
        m: Match,
        D: DistanceMatrix | np.ndarray | None = None,
        ids: tuple[Sequence[str], Sequence[str]] | None = None,
    ) -> None:
        self.match = m
        if ids is None and isinstance(D, DistanceMatrix):
            ids = (D.treated_ids, D.control_ids)
        self.__ids = ids
        values = D.values if isinstance(D, DistanceMatrix) else D
        if values is None:
            self.distance = {(p.treated, p.control): p.distance for p in m.pairs}
        else:
            self.distance = {(p.treated, p.control): float(values[p.treated, p.control]) for p in m.pairs}
        self.__t_deg = Counter(p.treated for p in m.pairs)
        self.__c_deg = Counter(p.control for p in m.pairs)

    def steps(self: "MatchPruner") -> Iterator[Pair]:
        remaining = dict(self.distance)
        while True:
            edge = self.__next_edge(remaining)
            if edge is None:
                return
            t, c = edge
            self.__t_deg[t] -= 1
            self.__c_deg[c] -= 1
            distance = remaining.pop(edge)
            logger.debug("pruned edge (%d, %d) at distance %.6g", t, c, distance)
            yield Pair(t, c, distance)

    def __next_edge(self: "MatchPruner", remaining: dict) -> tuple[int, int] | None:
        best = None
        for (t, c), distance in remaining.items():
            if self.__t_deg[t] < 2 or self.__c_deg[c] < 2:
                continue
            key = self.__tie_key(t, c)
            # larger distance first, then the smaller id pair
            if best is None or distance > best[0] or (distance == best[0] and key < best[1]):
                best = (distance, key, (t, c))
        return None if best is None else best[2]

    def __tie_key(self: "MatchPruner", t: int, c: int) -> tuple:
        if self.__ids is None:
            return (t, c)
        treated_ids, control_ids = self.__ids
        return (str(treated_ids[t]), str(control_ids[c]))


def prune_steps(
    m: Match,
    D: DistanceMatrix | np.ndarray | None = None,
    ids: tuple[Sequence[str], Sequence[str]] | None = None,
) -> Iterator[Pair]:
    """Yield the pruned edges in deletion order."""
    return MatchPruner(m, D, ids).steps()


def prune(
    m: Match,
    D: DistanceMatrix | np.ndarray | None = None,
    ids: tuple[Sequence[str], Sequence[str]] | None = None,
) -> Match:
    deleted = {(p.treated, p.control) for p in prune_steps(m, D, ids)}
    pruned = Match(
        pairs=tuple(p for p in m.pairs if (p.treated, p.control) not in deleted),
        treated_count=m.treated_count,
        control_count=m.control_count,
    )
    logger.info("pruned %d of %d pairs; %d components remain", len(deleted), len(m), len(match_components(pruned)))
    return pruned


def match_components(m: Match) -> list[tuple[list[int], list[int]]]:
    """Connected components of the match graph as (treated indices, control indices), matched units only."""
    if not m.pairs:
        return []
    n_t = m.treated_count
    size = n_t + m.control_count
    rows = [p.treated for p in m.pairs]
    cols = [n_t + p.control for p in m.pairs]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size)).tocsr()
    _, labels = connected_components(graph, directed=False)

    matched = sorted({p.treated for p in m.pairs}) + sorted({n_t + p.control for p in m.pairs})
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for node in matched:
        treated, control = groups.setdefault(int(labels[node]), ([], []))
        if node < n_t:
            treated.append(node)
        else:
            control.append(node - n_t)
    return sorted(groups.values(), key=lambda group: (min(group[0]), min(group[1])))


def is_star_forest(m: Match) -> bool:
    """Every component has a single treated center or a single control center."""
    return all(len(treated) == 1 or len(control) == 1 for treated, control in match_components(m))
