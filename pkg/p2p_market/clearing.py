"""
Exact clearing oracles: uniform price, clustered, weighted interior and active-set KKT
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from .errors import (
    ClearingInvariantError,
    EmptySetError,
    InteriorAssumptionError,
    NoKktPointError,
    NoRootError,
    RankDeficientError,
    TooLargeError,
)
from .graph import connected_components
from .models import (
    Binding,
    ClusterPrice,
    MarketInstance,
    MarketSolution,
    P2PSolution,
    PairIndex,
    PairVector,
    PoolSolution,
    Prosumer,
    Role,
)

logger = logging.getLogger(__name__)


# Constants
BALANCE_TOL_KW = 1e-6
MAX_BRACKET_DOUBLINGS = 60
MAX_BISECTION_STEPS = 200
KKT_TOL = 1e-9
KKT_MAX_EDGES = 16
UNIFORM_PRICE_TOL = 1e-6


def theorem1_interior(prosumers: Sequence[Prosumer]) -> PoolSolution:
    """
    Uniform price and totals ignoring every bound.

    The price is the 1/(2a)-weighted mean of b, and each total follows from
    equalising marginal cost with it.
    """
    if not prosumers:
        raise EmptySetError("theorem1_interior needs at least one prosumer")
    a = np.array([p.a for p in prosumers])
    b = np.array([p.b for p in prosumers])
    inv = 1.0 / (2.0 * a)
    price = float(np.dot(b, inv) / inv.sum())
    totals = (price - b) * inv
    return PoolSolution(
        price=price,
        totals={p.id: float(t) for p, t in zip(prosumers, totals)},
        binding={p.id: Binding.INTERIOR for p in prosumers},
    )


def aggregate_response(prosumers: Sequence[Prosumer], price: float) -> float:
    """Sum of clamped marginal-cost responses at `price`"""
    return float(sum(p.response(price) for p in prosumers))


def _binding(p: Prosumer, price: float, total: float) -> Binding:
    raw = (price - p.b) / (2.0 * p.a)
    if total == 0.0 and (
        (p.role is Role.SELLER and p.p_tr_max == 0.0 and raw >= 0.0)
        or (p.role is Role.BUYER and p.p_tr_min == 0.0 and raw <= 0.0)
    ):
        return Binding.EXITED
    if raw < p.p_tr_min:
        return Binding.AT_MIN
    if raw > p.p_tr_max:
        return Binding.AT_MAX
    return Binding.INTERIOR


def _bisect(prosumers: Sequence[Prosumer], lo: float, hi: float, strict_side: bool) -> float:
    # strict_side False: boundary of {agg < 0}; True: boundary of {agg > 0}
    for _ in range(MAX_BISECTION_STEPS):
        if hi - lo <= 1e-13 * max(1.0, abs(lo), abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        value = aggregate_response(prosumers, mid)
        if (value > 0.0) if strict_side else (value >= 0.0):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def uniform_price_clearing(prosumers: Sequence[Prosumer]) -> PoolSolution:
    """
    Pool clearing: find the price at which clamped responses balance.

    Args:
        prosumers: Market participants with zero-extended bounds

    Returns:
        PoolSolution with per-prosumer binding flags. When the aggregate
        response is zero over a whole price interval the midpoint is returned
        and the solution is flagged degenerate.
    """
    if not prosumers:
        raise EmptySetError("uniform_price_clearing needs at least one prosumer")

    b = [p.b for p in prosumers]
    lo, hi = min(b) - 1.0, max(b) + 1.0
    width = hi - lo
    doublings = 0
    while aggregate_response(prosumers, lo) > 0.0 or aggregate_response(prosumers, hi) < 0.0:
        if doublings >= MAX_BRACKET_DOUBLINGS:
            raise NoRootError(
                f"Aggregate response keeps one sign over [{lo:.6g}, {hi:.6g}]"
            )
        lo -= width
        hi += width
        width *= 2.0
        doublings += 1

    left = _bisect(prosumers, lo, hi, strict_side=False)
    right = _bisect(prosumers, lo, hi, strict_side=True)
    degenerate = right - left > 1e-9 * max(1.0, abs(left))
    price = 0.5 * (left + right)

    if not degenerate:
        price = _polish_price(prosumers, price)

    totals = {p.id: p.response(price) for p in prosumers}
    imbalance = sum(totals.values())
    if abs(imbalance) > BALANCE_TOL_KW:
        raise ClearingInvariantError(f"Pool clearing left an imbalance of {imbalance:.3e} kW")

    binding = {p.id: _binding(p, price, totals[p.id]) for p in prosumers}
    logger.debug("Pool cleared at %.6f (degenerate=%s)", price, degenerate)
    return PoolSolution(price=price, totals=totals, binding=binding, degenerate=degenerate)


def _polish_price(prosumers: Sequence[Prosumer], price: float) -> float:
    """Solve the balance exactly for the interior set found by bisection"""
    interior = [p for p in prosumers if p.p_tr_min < (price - p.b) / (2.0 * p.a) < p.p_tr_max]
    if not interior:
        return price
    interior_ids = {p.id for p in interior}
    fixed = sum(p.response(price) for p in prosumers if p.id not in interior_ids)
    inv = np.array([1.0 / (2.0 * p.a) for p in interior])
    b = np.array([p.b for p in interior])
    candidate = float((np.dot(b, inv) - fixed) / inv.sum())
    if abs(aggregate_response(prosumers, candidate)) <= abs(aggregate_response(prosumers, price)):
        return candidate
    return price


def _cluster_prices(market: MarketInstance, solution: P2PSolution) -> List[ClusterPrice]:
    """Volume-weighted price of the realized trades of every connected group"""
    realized = solution.realized_pairs()
    components, _ = connected_components(market.graph, realized)
    clusters = []
    for members in components:
        member_set = set(members)
        pairs = [pair for pair in realized if pair[0] in member_set]
        volume = np.array([abs(solution.power(*pair)) for pair in pairs])
        prices = np.array([solution.price(*pair) for pair in pairs])
        clusters.append(ClusterPrice(members=members, price=float(np.dot(volume, prices) / volume.sum())))
    return clusters


def with_clusters(market: MarketInstance, solution: P2PSolution) -> P2PSolution:
    return solution.model_copy(update={"clusters": _cluster_prices(market, solution)})


def zero_solution(market: MarketInstance) -> P2PSolution:
    """No trades at all; prices are each owner's b_i + d_ij averaged over both orientations"""
    index = PairIndex.from_graph(market.graph)
    b = market.vector("b")
    d = np.array([market.graph.weight(i, j) for i, j in index.pairs])
    own = b[index.owner] + d
    prices = 0.5 * (own + own[index.reverse]) if index.m else own
    return P2PSolution(
        pair_powers=PairVector.zeros(index),
        pair_prices=PairVector(index, prices),
        totals={i: 0.0 for i in market.ids},
    )


def realize_pool_trades(market: MarketInstance, pool: PoolSolution) -> P2PSolution:
    """
    Spread pool totals over the complete bipartite graph.

    Each buyer takes from every seller in proportion to the seller's share of
    total supply. Every pair carries the pool price.
    """
    graph = market.graph
    if not graph.is_complete_bipartite():
        raise ClearingInvariantError("Pool trades can only be realized on a complete bipartite graph")
    index = PairIndex.from_graph(graph)
    supply = sum(-t for i, t in pool.totals.items() if graph.roles[i] is Role.SELLER)
    values = np.zeros(index.m)
    if supply > 0.0:
        for k, (i, j) in enumerate(index.pairs):
            if graph.roles[i] is Role.BUYER:
                values[k] = pool.totals[i] * (-pool.totals[j]) / supply
        sellers = np.array([graph.roles[i] is Role.SELLER for i, _ in index.pairs])
        values[sellers] = -values[index.reverse][sellers]
    totals = index.sum_by_owner(values)
    solution = P2PSolution(
        pair_powers=PairVector(index, values),
        pair_prices=PairVector(index, np.full(index.m, pool.price)),
        totals={i: float(t) for i, t in zip(market.ids, totals)},
    )
    return with_clusters(market, solution)


def clustered_clearing(market: MarketInstance) -> P2PSolution:
    """
    Clear a zero-weight market and report one uniform price per cluster.

    Raises:
        ClearingInvariantError: weights present, or a cluster without a uniform price
    """
    if market.graph.has_weights:
        raise ClearingInvariantError("clustered_clearing requires all trade weights to be zero")
    solution = kkt_active_set_qp(market)
    realized = solution.realized_pairs()
    components, non_traders = connected_components(market.graph, realized)
    for members in components:
        member_set = set(members)
        prices = [solution.price(*pair) for pair in realized if pair[0] in member_set]
        if max(prices) - min(prices) > UNIFORM_PRICE_TOL:
            raise ClearingInvariantError(
                f"Cluster {members} trades at prices spanning {min(prices):.6f}..{max(prices):.6f}"
            )
    logger.info("Clustered clearing: %d cluster(s), non-traders %s", len(components), non_traders)
    return solution


def weighted_totals_system(market: MarketInstance) -> Dict[int, float]:
    """
    Interior totals of a weighted market from the edge-difference system.

    Every edge contributes q_i - q_j = b_j + d_ji - b_i - d_ij with q = 2 a P_tr,
    and every connected component adds one balance row sum q_i / (2 a_i) = 0.
    The system is solved by least squares.

    Raises:
        RankDeficientError: the assembled system lost rank
        InteriorAssumptionError: the residual shows no interior optimum exists
    """
    graph = market.graph
    ids = list(market.ids)
    position = {i: k for k, i in enumerate(ids)}
    a = market.vector("a")
    b = market.vector("b")

    rows: List[np.ndarray] = []
    rhs: List[float] = []
    for i, j in graph.edges:
        row = np.zeros(len(ids))
        row[position[i]] = 1.0
        row[position[j]] = -1.0
        rows.append(row)
        rhs.append(b[position[j]] + graph.weight(j, i) - b[position[i]] - graph.weight(i, j))

    g = nx.Graph()
    g.add_nodes_from(ids)
    g.add_edges_from(graph.edges)
    for component in sorted(nx.connected_components(g), key=min):
        row = np.zeros(len(ids))
        for i in component:
            row[position[i]] = 1.0 / (2.0 * a[position[i]])
        rows.append(row)
        rhs.append(0.0)

    matrix = np.vstack(rows)
    target = np.array(rhs)
    q, _, rank, _ = np.linalg.lstsq(matrix, target, rcond=None)
    if rank < len(ids):
        raise RankDeficientError(f"Weighted totals system has rank {rank} < {len(ids)}")
    residual = float(np.linalg.norm(matrix @ q - target))
    if residual > 1e-8 * (1.0 + float(np.linalg.norm(target))):
        raise InteriorAssumptionError(
            f"Weighted totals system is inconsistent (residual {residual:.3e})", residual
        )
    totals = q / (2.0 * a)
    return {i: float(t) for i, t in zip(ids, totals)}


def _zero_interval(
    a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> Optional[Tuple[float, float]]:
    """
    Prices at which the clamped responses clip((lam - b) / (2a), lo, hi) sum to zero.

    The aggregate is piecewise linear and nondecreasing, so the zero set is an
    interval found from its values at the breakpoints. Returns None when the
    aggregate never reaches zero.
    """
    below, above = float(lo.sum()), float(hi.sum())
    tol = 1e-12 * (1.0 + float(np.abs(lo).sum() + np.abs(hi).sum()))
    if below > tol or above < -tol:
        return None
    breaks = np.unique(np.concatenate([2.0 * a * lo + b, 2.0 * a * hi + b]))
    values = np.clip((breaks[:, None] - b) / (2.0 * a), lo, hi).sum(axis=1)

    if abs(below) <= tol:
        low = -math.inf
    else:
        k = int(np.argmax(values >= -tol))
        if values[k] <= tol:
            low = float(breaks[k])
        else:
            low = float(breaks[k - 1] - values[k - 1] * (breaks[k] - breaks[k - 1]) / (values[k] - values[k - 1]))
    if abs(above) <= tol:
        high = math.inf
    else:
        k = int(np.nonzero(values <= tol)[0][-1])
        if values[k] >= -tol:
            high = float(breaks[k])
        else:
            high = float(breaks[k] - values[k] * (breaks[k + 1] - breaks[k]) / (values[k + 1] - values[k]))
    return low, high


@dataclass(frozen=True, eq=False)
class _Tree:
    """Clamped balance of one tree of free edges"""
    nodes: Tuple[int, ...]
    edges: Tuple[int, ...]
    offsets: np.ndarray
    low: float
    high: float
    totals: np.ndarray
    flows: np.ndarray

    @property
    def is_point(self) -> bool:
        return self.low == self.high


class _FlowProblem:
    """Edge-flow form of the bilateral clearing problem"""

    def __init__(self, market: MarketInstance):
        graph = market.graph
        self.market = market
        self.position = {i: k for k, i in enumerate(market.ids)}
        # orient every edge seller -> buyer
        self.edges: List[Tuple[int, int]] = []
        for i, j in graph.edges:
            seller, buyer = (i, j) if graph.roles[i] is Role.SELLER else (j, i)
            self.edges.append((seller, buyer))
        self.ends = [(self.position[s], self.position[bu]) for s, bu in self.edges]
        n, m = market.n, len(self.edges)
        self.incidence = np.zeros((n, m))
        self.cost = np.zeros(m)
        for e, (s, bu) in enumerate(self.edges):
            self.incidence[self.position[bu], e] = 1.0
            self.incidence[self.position[s], e] = -1.0
            self.cost[e] = graph.weight(bu, s) - graph.weight(s, bu)
        self.a = market.vector("a")
        self.b = market.vector("b")
        self.lo = market.vector("p_tr_min")
        self.hi = market.vector("p_tr_max")
        self._trees: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], Optional[_Tree]] = {}

    def forests(self) -> Iterator[Tuple[Tuple[int, ...], UnionFind]]:
        """Free-edge sets without cycles, fewest zero flows first, then lexicographic"""
        m, n = len(self.edges), self.market.n
        for count in range(min(m, n - 1), -1, -1):
            for free in itertools.combinations(range(m), count):
                groups = UnionFind(range(n))
                for e in free:
                    s, bu = self.ends[e]
                    if groups[s] == groups[bu]:
                        break
                    groups.union(s, bu)
                else:
                    yield free, groups

    def tree(self, nodes: Tuple[int, ...], edges: Tuple[int, ...]) -> Optional[_Tree]:
        key = (nodes, edges)
        if key not in self._trees:
            self._trees[key] = self._solve_tree(nodes, edges)
        return self._trees[key]

    def _solve_tree(self, nodes: Tuple[int, ...], edges: Tuple[int, ...]) -> Optional[_Tree]:
        # a free edge carries no reduced cost: pi_buyer = pi_seller - cost
        local = {k: r for r, k in enumerate(nodes)}
        offsets = np.zeros(len(nodes))
        if edges:
            g = nx.Graph()
            for e in edges:
                s, bu = self.ends[e]
                g.add_edge(s, bu, edge=e)
            for u, v in nx.bfs_edges(g, nodes[0]):
                e = g.edges[u, v]["edge"]
                step = -self.cost[e] if self.ends[e][0] == u else self.cost[e]
                offsets[local[v]] = offsets[local[u]] + step

        idx = list(nodes)
        a, b = self.a[idx], self.b[idx] - offsets
        lo, hi = self.lo[idx], self.hi[idx]
        interval = _zero_interval(a, b, lo, hi)
        if interval is None:
            return None
        low, high = interval
        if math.isfinite(low) and math.isfinite(high) and high - low <= 1e-12 * max(1.0, abs(low)):
            low = high = 0.5 * (low + high)
        if math.isinf(low) and math.isinf(high):
            price = 0.0
        elif math.isinf(low) or math.isinf(high):
            price = high if math.isinf(low) else low
        else:
            price = 0.5 * (low + high)
        totals = np.clip((price - b) / (2.0 * a), lo, hi)

        flows = np.zeros(len(edges))
        if edges:
            sub = self.incidence[np.ix_(idx, list(edges))]
            flows = np.linalg.lstsq(sub, totals, rcond=None)[0]
            if np.linalg.norm(sub @ flows - totals) > BALANCE_TOL_KW or np.any(flows < -KKT_TOL):
                return None
        return _Tree(nodes, edges, offsets, low, high, totals, np.clip(flows, 0.0, None))

    def _tree_prices(self, trees: List[_Tree], limits: List[Tuple[int, int, float]]) -> Optional[np.ndarray]:
        """
        One price per tree meeting every reduced-cost limit lam[u] - lam[v] <= w.

        Trees with a single feasible price are checked directly; otherwise the
        limits form a difference-constraint system solved by Bellman-Ford.
        """
        if all(t.is_point for t in trees):
            prices = np.array([0.5 * (t.low + t.high) for t in trees])
            if all(prices[u] - prices[v] <= w for u, v, w in limits):
                return prices
            return None

        g = nx.DiGraph()
        origin, source = "origin", "source"

        def limit(u, v, w):
            # x[v] - x[u] <= w
            if not g.has_edge(u, v) or g.edges[u, v]["weight"] > w:
                g.add_edge(u, v, weight=w)

        for c, t in enumerate(trees):
            limit(source, c, 0.0)
            if math.isfinite(t.high):
                limit(origin, c, t.high)
            if math.isfinite(t.low):
                limit(c, origin, -t.low)
        limit(source, origin, 0.0)
        for u, v, w in limits:
            limit(v, u, w)
        if nx.negative_edge_cycle(g):
            return None
        dist = nx.single_source_bellman_ford_path_length(g, source)
        return np.array([dist[c] - dist[origin] for c in range(len(trees))])

    def solve(self, free: Tuple[int, ...], groups: UnionFind) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Flow and node multipliers of one free-edge set, or None if it is not a KKT point"""
        n, m = self.market.n, len(self.edges)
        members: Dict[int, List[int]] = {}
        for k in range(n):
            members.setdefault(groups[k], []).append(k)
        tree_edges: Dict[int, List[int]] = {}
        for e in free:
            tree_edges.setdefault(groups[self.ends[e][0]], []).append(e)

        trees: List[_Tree] = []
        tree_of = np.zeros(n, dtype=np.int64)
        offset = np.zeros(n)
        for root in sorted(members, key=lambda r: members[r][0]):
            t = self.tree(tuple(members[root]), tuple(tree_edges.get(root, ())))
            if t is None:
                return None
            for r, k in enumerate(t.nodes):
                tree_of[k] = len(trees)
                offset[k] = t.offsets[r]
            trees.append(t)

        # zero-flow edges need a nonnegative reduced cost pi_b - pi_s + cost_e
        limits = []
        in_free = set(free)
        for e in range(m):
            if e in in_free:
                continue
            s, bu = self.ends[e]
            w = offset[bu] - offset[s] + self.cost[e] + KKT_TOL
            if tree_of[s] == tree_of[bu]:
                if w < 0.0:
                    return None
                continue
            limits.append((int(tree_of[s]), int(tree_of[bu]), float(w)))

        prices = self._tree_prices(trees, limits)
        if prices is None:
            return None

        flow = np.zeros(m)
        totals = np.zeros(n)
        for t in trees:
            flow[list(t.edges)] = t.flows
            totals[list(t.nodes)] = t.totals
        pi = prices[tree_of] + offset
        sigma = pi - (2.0 * self.a * totals + self.b)
        return flow, sigma


def kkt_active_set_qp(market: MarketInstance) -> P2PSolution:
    """
    Exact bilateral clearing by active-set enumeration.

    Reduces the problem to one nonnegative seller-to-buyer flow per edge and
    enumerates the sets of zero flows whose free edges form a forest. Along
    each tree of free edges the reduced costs vanish, so node prices differ by
    the edge costs and the bound activity of every node follows from one
    clamped balance per tree. The first forest whose zero-flow edges keep a
    nonnegative reduced cost is the optimum. Prices are 2 a_i P_tr + b_i + d_ij
    plus the owner's bound multiplier, averaged over both orientations.

    Raises:
        TooLargeError: more than KKT_MAX_EDGES edges
        NoKktPointError: no candidate satisfied the KKT conditions
    """
    if len(market.graph.edges) > KKT_MAX_EDGES:
        raise TooLargeError(
            f"Active-set oracle accepts at most {KKT_MAX_EDGES} edges, got {len(market.graph.edges)}"
        )
    if not market.graph.edges:
        return zero_solution(market)

    problem = _FlowProblem(market)
    tried = 0
    for free, groups in problem.forests():
        tried += 1
        result = problem.solve(free, groups)
        if result is None:
            continue
        flow, sigma = result
        logger.debug("KKT point found after %d candidate active sets", tried)
        return _flow_to_solution(market, problem, flow, sigma)
    raise NoKktPointError(f"No KKT point among {tried} active sets")


def _flow_to_solution(
    market: MarketInstance, problem: _FlowProblem, flow: np.ndarray, sigma: np.ndarray
) -> P2PSolution:
    index = PairIndex.from_graph(market.graph)
    powers: Dict[Tuple[int, int], float] = {}
    for e, (s, bu) in enumerate(problem.edges):
        powers[(bu, s)] = float(flow[e])
        powers[(s, bu)] = -float(flow[e])
    pair_powers = PairVector.from_mapping(index, powers)
    totals = index.sum_by_owner(pair_powers.values)
    d = np.array([market.graph.weight(i, j) for i, j in index.pairs])
    marginal = 2.0 * problem.a * totals + problem.b + sigma
    own = marginal[index.owner] + d
    prices = 0.5 * (own + own[index.reverse])
    solution = P2PSolution(
        pair_powers=pair_powers,
        pair_prices=PairVector(index, prices),
        totals={i: float(t) for i, t in zip(market.ids, totals)},
    )
    return with_clusters(market, solution)


def oracle_clear(market: MarketInstance) -> MarketSolution:
    """
    Analytic clearing dispatcher.

    No edges: zero trade. Zero weights on a complete bipartite graph: pool
    clearing spread over all pairs. Anything else: active-set enumeration.
    """
    started = time.perf_counter()
    graph = market.graph
    if not graph.edges:
        solution = zero_solution(market)
    elif not graph.has_weights and graph.is_complete_bipartite():
        pool = uniform_price_clearing(list(market.prosumers))
        solution = realize_pool_trades(market, pool)
    else:
        solution = kkt_active_set_qp(market)
    elapsed = time.perf_counter() - started
    return MarketSolution(**dict(solution), method="oracle", wall_time=elapsed)
