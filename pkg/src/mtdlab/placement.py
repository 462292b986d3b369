"""D-FACTS placement: minimum edge cover on the cycle buses, then loop breaking.

The placement keeps the intersection dimension at its minimum (every bus on a
cycle is touched by a D-FACTS branch) while leaving no loop made only of
unequipped branches.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .grid import GridCase, cycle_basis, cycle_buses, fundamental_cycles


@dataclass(frozen=True)
class PlacementResult:
    dfacts_branches: tuple[int, ...]
    covered_buses: frozenset
    excluded_buses: frozenset
    k_min: int | None = None
    residual_loops: tuple = field(default_factory=tuple)

    @property
    def acyclic(self) -> bool:
        return not self.residual_loops


def _simple_graph(edges):
    """Collapse parallel branches to the lowest branch index per bus pair."""
    G = nx.Graph()
    for eid, u, v in sorted(edges):
        if u == v:
            continue
        if not G.has_edge(u, v):
            G.add_edge(u, v, branch=eid)
    return G


def max_matching(graph: nx.Graph) -> set:
    """Maximum-cardinality matching (blossom) as a set of sorted node pairs."""
    M = nx.max_weight_matching(graph, maxcardinality=True, weight=None)
    return {tuple(sorted(e)) for e in M}


def min_edge_cover(graph: nx.Graph) -> set:
    """Maximum matching extended by one edge per unmatched node.

    Each unmatched node gets its lowest-ordered incident edge, so the cover
    has ``|V| - |matching|`` edges.
    """
    isolated = [v for v in graph if graph.degree(v) == 0]
    if isolated:
        raise ValueError(f"isolated vertices cannot be covered: {sorted(isolated)}")
    cover = max_matching(graph)
    matched = {v for e in cover for v in e}
    for v in sorted(graph):
        if v not in matched:
            u = min(graph.neighbors(v))
            cover.add(tuple(sorted((u, v))))
            matched.add(v)
    return cover


def _acyclic(case: GridCase, branches) -> bool:
    return not cycle_basis(case, branches)


def dfacts_placement(case: GridCase) -> PlacementResult:
    """Placement that covers every cycle bus and breaks every unequipped loop.

    1. Drop buses that lie on no cycle (and their branches).
    2. Minimum edge cover of the remaining graph.
    3. While the unequipped branches still contain a loop, move one branch of
       that loop into the placement, choosing the lowest index whose addition
       keeps the D-FACTS subgraph acyclic. Loops with no such branch are
       reported in ``residual_loops``.
    """
    on_cycle = cycle_buses(case)
    excluded = frozenset(set(range(case.n_bus)) - on_cycle)
    if not on_cycle:
        warnings.warn(f"{case.name}: no bus lies on a cycle; MTD cannot detect any attack")
        return PlacementResult((), frozenset(), excluded, None, ())

    reduced = [(i, b.from_bus, b.to_bus) for i, b in enumerate(case.branches)
               if b.from_bus in on_cycle and b.to_bus in on_cycle]
    G = _simple_graph(reduced)
    placed = {G.edges[u, v]["branch"] for u, v in min_edge_cover(G)}

    reduced_ids = {e[0] for e in reduced}
    stuck: list[tuple[int, ...]] = []
    while True:
        rest = [e for e in reduced if e[0] not in placed]
        loops = [c for c in fundamental_cycles(rest) if tuple(sorted(c)) not in stuck]
        if not loops:
            break
        loop = sorted(loops[0])
        for e in loop:
            if _acyclic(case, placed | {e}):
                placed.add(e)
                break
        else:
            stuck.append(tuple(loop))
    assert placed <= reduced_ids

    covered = frozenset(v for i in placed for v in (case.branches[i].from_bus, case.branches[i].to_bus))
    return PlacementResult(tuple(sorted(placed)), covered, excluded, None, tuple(stuck))


def placement_k(case: GridCase, placement: PlacementResult, state=None, seed=0,
                tau: float | None = None) -> int:
    """Intersection dimension at a random feasible perturbation on the placement."""
    from .design import max_rank_baseline
    from .subspace import JacobianPair, composite_rank

    sub = case.with_dfacts(placement.dfacts_branches, tau)
    mu = float(np.min(sub.tau[sub.dfacts])) if placement.dfacts_branches else 0.0
    strategy = max_rank_baseline(sub, mu / 4, mu, seed) if mu > 0 else None
    if strategy is None:
        return case.n_state
    pair = JacobianPair.from_case(sub, strategy, state)
    return 2 * case.n_state - composite_rank(pair)


def with_k(case: GridCase, placement: PlacementResult, state=None, seed=0) -> PlacementResult:
    k = placement_k(case, placement, state, seed)
    return PlacementResult(placement.dfacts_branches, placement.covered_buses,
                           placement.excluded_buses, k, placement.residual_loops)
