"""
Trading graph construction, graph algebra and cost evaluation
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .errors import DanglingEdgeError, DuplicateIdError, MissingPairError
from .models import (
    MarketInstance,
    P2PSolution,
    Pair,
    Prosumer,
    Role,
    TradingGraph,
)

logger = logging.getLogger(__name__)


def build_graph(
    prosumers: Sequence[Prosumer],
    edge_list: Iterable[Pair],
    weights: Optional[Mapping[Pair, float]] = None,
) -> TradingGraph:
    """
    Build a validated bipartite trading graph.

    Args:
        prosumers: Prosumers in node order
        edge_list: Unordered edges, any orientation
        weights: Trade weights d_ij keyed by ordered pair

    Returns:
        TradingGraph with edges normalised to (min id, max id)
    """
    ids = [p.id for p in prosumers]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError(f"Duplicate prosumer ids in {ids}")
    known = set(ids)
    edges = set()
    for i, j in edge_list:
        if i not in known or j not in known:
            raise DanglingEdgeError(f"Edge ({i}, {j}) references an unknown prosumer")
        edges.add((min(i, j), max(i, j)))
    return TradingGraph(
        node_ids=tuple(ids),
        roles={p.id: p.role for p in prosumers},
        edges=tuple(sorted(edges)),
        weights={(int(i), int(j)): float(d) for (i, j), d in (weights or {}).items()},
    )


def complete_bipartite_edges(prosumers: Sequence[Prosumer]) -> List[Pair]:
    """Every buyer-seller pair"""
    buyers = [p.id for p in prosumers if p.role is Role.BUYER]
    sellers = [p.id for p in prosumers if p.role is Role.SELLER]
    return sorted((min(b, s), max(b, s)) for b in buyers for s in sellers)


def build_market(
    prosumers: Sequence[Prosumer],
    edge_list: Optional[Iterable[Pair]] = None,
    weights: Optional[Mapping[Pair, float]] = None,
) -> MarketInstance:
    """Market instance over `edge_list`, or the complete bipartite graph when omitted"""
    edges = complete_bipartite_edges(prosumers) if edge_list is None else edge_list
    graph = build_graph(prosumers, edges, weights)
    return MarketInstance(prosumers=tuple(prosumers), graph=graph)


@dataclass(frozen=True, eq=False)
class GraphAlgebra:
    """Adjacency, degree, Laplacian and signed incidence matrices of a trading graph"""
    node_ids: Tuple[int, ...]
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    incidence: np.ndarray

    @classmethod
    def from_graph(cls, graph: TradingGraph) -> "GraphAlgebra":
        n = graph.n
        position = {i: k for k, i in enumerate(graph.node_ids)}
        adjacency = np.zeros((n, n), dtype=np.int64)
        incidence = np.zeros((n, len(graph.edges)), dtype=np.int64)
        # edges are stored (min id, max id); the smaller id gets +1
        for e, (i, j) in enumerate(graph.edges):
            pi, pj = position[i], position[j]
            adjacency[pi, pj] = adjacency[pj, pi] = 1
            incidence[pi, e] = 1
            incidence[pj, e] = -1
        degree = np.diag(adjacency.sum(axis=1))
        laplacian = degree - adjacency
        assert np.array_equal(laplacian, incidence @ incidence.T), "L must equal E E^T"
        return cls(graph.node_ids, adjacency, degree, laplacian, incidence)


def cost(prosumer: Prosumer, trades: Mapping[Pair, float], graph: TradingGraph) -> float:
    """
    Total cost a_i P_tr^2 + b_i P_tr + sum_j d_ij P_ij of one prosumer.

    Args:
        prosumer: The prosumer i
        trades: Trades (i, j) for every neighbor j of i
        graph: Trading graph holding the weights

    Returns:
        Cost in currency units
    """
    i = prosumer.id
    expected = {(i, j) for j in graph.neighbors(i)}
    present = {pair for pair in trades if pair[0] == i}
    missing = expected - present
    if missing:
        raise MissingPairError(f"Trades of prosumer {i} miss pairs {sorted(missing)}")
    extra = present - expected
    if extra:
        raise MissingPairError(f"Trades of prosumer {i} include non-neighbor pairs {sorted(extra)}")
    pairs = sorted(expected)
    total = float(sum(trades[pair] for pair in pairs))
    weighted = float(sum(graph.weight(*pair) * trades[pair] for pair in pairs))
    return prosumer.a * total * total + prosumer.b * total + weighted


def market_costs(market: MarketInstance, solution: P2PSolution) -> Dict[int, float]:
    """Cost of every prosumer under a cleared solution"""
    return {
        p.id: cost(p, solution.pair_powers.restricted_to(p.id), market.graph)
        for p in market.prosumers
    }


def connected_components(
    graph: TradingGraph,
    active_edges: Iterable[Pair],
) -> Tuple[List[List[int]], List[int]]:
    """
    Split the prosumers touched by `active_edges` into connected groups.

    Returns:
        Tuple of (components sorted by smallest member, non-trading prosumers)
    """
    g = nx.Graph()
    for i, j in active_edges:
        if not graph.has_edge(i, j):
            raise DanglingEdgeError(f"Active edge ({i}, {j}) is not an edge of the graph")
        g.add_edge(i, j)
    components = sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0])
    touched = set(g.nodes)
    non_traders = [i for i in sorted(graph.node_ids) if i not in touched]
    return components, non_traders
