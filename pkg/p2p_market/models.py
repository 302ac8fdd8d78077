"""
Domain models for the P2P market engine
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from .errors import (
    DanglingEdgeError,
    DuplicateIdError,
    InvalidConfigError,
    NonBipartiteEdgeError,
    WeightOnNonEdgeError,
)


# Cleared totals below this magnitude (kW) count as a failed trade
TRADE_THRESHOLD_KW = 0.05

Pair = Tuple[int, int]


class Role(str, Enum):
    """Role a prosumer plays during one time step"""
    BUYER = "buyer"
    SELLER = "seller"


class Binding(str, Enum):
    """Where a prosumer's cleared total sits inside its feasible interval"""
    INTERIOR = "interior"
    AT_MIN = "at_min"
    AT_MAX = "at_max"
    EXITED = "exited"


class Prosumer(BaseModel):
    """Market participant with a quadratic cost a*P^2 + b*P on its total trade"""
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., description="Unique prosumer id")
    role: Role = Field(..., description="Buyer or seller for this time step")
    a: float = Field(..., gt=0, description="Quadratic cost coefficient (currency/kW^2)")
    b: float = Field(..., description="Linear cost coefficient (currency/kW)")
    p_tr_min: float = Field(..., description="Lower total-trade bound (kW)")
    p_tr_max: float = Field(..., description="Upper total-trade bound (kW)")

    @model_validator(mode="after")
    def _check_bounds(self) -> "Prosumer":
        if self.p_tr_min > self.p_tr_max:
            raise ValueError(f"prosumer {self.id}: p_tr_min {self.p_tr_min} exceeds p_tr_max {self.p_tr_max}")
        if self.role is Role.SELLER and self.p_tr_max > 0:
            raise ValueError(f"seller {self.id} must have p_tr_max <= 0, got {self.p_tr_max}")
        if self.role is Role.BUYER and self.p_tr_min < 0:
            raise ValueError(f"buyer {self.id} must have p_tr_min >= 0, got {self.p_tr_min}")
        return self

    @property
    def is_seller(self) -> bool:
        return self.role is Role.SELLER

    def zero_extended(self) -> "Prosumer":
        """Widen the feasible interval so that not trading is always feasible"""
        if self.is_seller:
            return self.model_copy(update={"p_tr_max": 0.0})
        return self.model_copy(update={"p_tr_min": 0.0})

    def clamp(self, total: float) -> float:
        """Clamp a total-trade value into the feasible interval"""
        return min(max(total, self.p_tr_min), self.p_tr_max)

    def response(self, price: float) -> float:
        """Total trade that equalises marginal cost with `price`, clamped to bounds"""
        return self.clamp((price - self.b) / (2.0 * self.a))

    def with_params(self, **changes: Any) -> "Prosumer":
        """Return a revalidated copy with some fields replaced"""
        data = self.model_dump()
        data.update(changes)
        return Prosumer(**data)


class TradingGraph(BaseModel):
    """Undirected buyer-seller communication graph with directed trade weights"""
    model_config = ConfigDict(frozen=True)

    node_ids: Tuple[int, ...] = Field(..., description="Prosumer ids in node order")
    roles: Dict[int, Role] = Field(..., description="Role of every node")
    edges: Tuple[Pair, ...] = Field(default=(), description="Unordered edges stored as (min id, max id)")
    weights: Dict[Pair, float] = Field(default_factory=dict, description="Trade weight d_ij per ordered pair")

    _neighbors: Dict[int, Tuple[int, ...]] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_structure(self) -> "TradingGraph":
        if len(set(self.node_ids)) != len(self.node_ids):
            seen = set()
            dupes = sorted({i for i in self.node_ids if i in seen or seen.add(i)})
            raise DuplicateIdError(f"Duplicate prosumer ids: {dupes}")
        known = set(self.node_ids)
        edge_set = set()
        for i, j in self.edges:
            if i not in known or j not in known:
                raise DanglingEdgeError(f"Edge ({i}, {j}) references an unknown prosumer")
            if i >= j:
                raise ValueError(f"Edge ({i}, {j}) must be stored as (min id, max id)")
            if self.roles[i] == self.roles[j]:
                raise NonBipartiteEdgeError(
                    f"Edge ({i}, {j}) joins two {self.roles[i].value}s"
                )
            if (i, j) in edge_set:
                raise ValueError(f"Edge ({i}, {j}) listed twice")
            edge_set.add((i, j))
        for i, j in self.weights:
            if (min(i, j), max(i, j)) not in edge_set:
                raise WeightOnNonEdgeError(f"Weight d_{i},{j} is attached to a non-edge")
        return self

    def model_post_init(self, __context: Any) -> None:
        neighbors: Dict[int, List[int]] = {i: [] for i in self.node_ids}
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        self._neighbors = {i: tuple(sorted(js)) for i, js in neighbors.items()}

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        """Sorted neighbor ids of prosumer i"""
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def weight(self, i: int, j: int) -> float:
        return self.weights.get((i, j), 0.0)

    def has_edge(self, i: int, j: int) -> bool:
        return j in self._neighbors.get(i, ())

    @property
    def has_weights(self) -> bool:
        return any(d != 0.0 for d in self.weights.values())

    def is_complete_bipartite(self) -> bool:
        buyers = sum(1 for r in self.roles.values() if r is Role.BUYER)
        sellers = self.n - buyers
        return len(self.edges) == buyers * sellers


class MarketInstance(BaseModel):
    """One time step of the market: prosumers plus their trading graph"""
    model_config = ConfigDict(frozen=True)

    prosumers: Tuple[Prosumer, ...]
    graph: TradingGraph

    _position: Dict[int, int] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_consistency(self) -> "MarketInstance":
        ids = tuple(p.id for p in self.prosumers)
        if ids != self.graph.node_ids:
            raise ValueError("Graph node order must match the prosumer list")
        for p in self.prosumers:
            if self.graph.roles[p.id] != p.role:
                raise ValueError(f"Graph role of prosumer {p.id} does not match")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._position = {p.id: k for k, p in enumerate(self.prosumers)}

    @property
    def ids(self) -> Tuple[int, ...]:
        return self.graph.node_ids

    @property
    def n(self) -> int:
        return len(self.prosumers)

    def prosumer(self, i: int) -> Prosumer:
        return self.prosumers[self._position[i]]

    def position(self, i: int) -> int:
        return self._position[i]

    def vector(self, name: str) -> np.ndarray:
        """Stack one numeric prosumer field into an array in node order"""
        return np.array([getattr(p, name) for p in self.prosumers], dtype=float)

    def with_prosumers(self, prosumers: List[Prosumer]) -> "MarketInstance":
        """Rebuild the instance with replaced prosumers, keeping edges and weights"""
        graph = TradingGraph(
            node_ids=tuple(p.id for p in prosumers),
            roles={p.id: p.role for p in prosumers},
            edges=self.graph.edges,
            weights=dict(self.graph.weights),
        )
        return MarketInstance(prosumers=tuple(prosumers), graph=graph)


@dataclass(frozen=True, eq=False)
class PairIndex:
    """Deterministic ordering of directed pairs (i, j), sorted by owner then partner"""
    node_ids: Tuple[int, ...]
    pairs: Tuple[Pair, ...]
    owner: np.ndarray
    partner: np.ndarray
    reverse: np.ndarray
    counts: np.ndarray
    lookup: Dict[Pair, int] = field(repr=False)

    @classmethod
    def from_graph(cls, graph: TradingGraph) -> "PairIndex":
        position = {i: k for k, i in enumerate(graph.node_ids)}
        pairs = tuple(
            (i, j) for i in sorted(graph.node_ids) for j in graph.neighbors(i)
        )
        lookup = {pair: k for k, pair in enumerate(pairs)}
        owner = np.array([position[i] for i, _ in pairs], dtype=np.int64)
        partner = np.array([position[j] for _, j in pairs], dtype=np.int64)
        reverse = np.array([lookup[(j, i)] for i, j in pairs], dtype=np.int64)
        counts = np.array([graph.degree(i) for i in graph.node_ids], dtype=np.int64)
        return cls(graph.node_ids, pairs, owner, partner, reverse, counts, lookup)

    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def sum_by_owner(self, values: np.ndarray) -> np.ndarray:
        """Per-prosumer sums, accumulated in pair order"""
        return np.bincount(self.owner, weights=values, minlength=self.n)


@dataclass(frozen=True, eq=False)
class PairVector:
    """Real value per directed pair, aligned with a PairIndex"""
    index: PairIndex
    values: np.ndarray

    @classmethod
    def zeros(cls, index: PairIndex) -> "PairVector":
        return cls(index, np.zeros(index.m))

    @classmethod
    def from_mapping(cls, index: PairIndex, mapping: Mapping[Pair, float]) -> "PairVector":
        values = np.array([float(mapping.get(pair, 0.0)) for pair in index.pairs])
        return cls(index, values)

    def __getitem__(self, pair: Pair) -> float:
        return float(self.values[self.index.lookup[pair]])

    def __iter__(self) -> Iterator[Tuple[Pair, float]]:
        return iter(zip(self.index.pairs, self.values.tolist()))

    def __len__(self) -> int:
        return self.index.m

    def as_dict(self) -> Dict[Pair, float]:
        return dict(zip(self.index.pairs, self.values.tolist()))

    def restricted_to(self, i: int) -> Dict[Pair, float]:
        """Entries (i, j) owned by prosumer i"""
        return {pair: v for pair, v in self if pair[0] == i}


class AdmmConfig(BaseModel):
    """Penalty, proximal and stopping parameters of the proximal ADMM"""
    model_config = ConfigDict(frozen=True)

    rho: float = Field(0.02, gt=0, description="Penalty parameter")
    phi: float = Field(0.021, description="Proximal weight on P")
    psi: float = Field(0.021, description="Proximal weight on X")
    kappa: float = Field(0.99, gt=0, description="Dual step size")
    mu1: float = Field(0.5, gt=0)
    mu2: float = Field(0.5, gt=0)
    eps_abs: float = Field(1e-4, gt=0, description="Absolute tolerance")
    eps_rel: float = Field(1e-3, ge=0, description="Relative tolerance")
    max_iter: int = Field(20000, ge=1, description="Iteration cap")

    @model_validator(mode="after")
    def _check_proximal_conditions(self) -> "AdmmConfig":
        if not self.phi > self.rho * (1.0 / self.mu1 - 1.0):
            raise InvalidConfigError(
                f"phi={self.phi} must exceed rho*(1/mu1 - 1)={self.rho * (1.0 / self.mu1 - 1.0)}"
            )
        if not self.psi > self.rho * (1.0 / self.mu2 - 1.0):
            raise InvalidConfigError(
                f"psi={self.psi} must exceed rho*(1/mu2 - 1)={self.rho * (1.0 / self.mu2 - 1.0)}"
            )
        if not self.mu1 + self.mu2 < 2.0 - self.kappa:
            raise InvalidConfigError(
                f"mu1 + mu2 = {self.mu1 + self.mu2} must be below 2 - kappa = {2.0 - self.kappa}"
            )
        return self


class TraceRecord(BaseModel):
    """Residuals and tolerances of one ADMM iteration"""
    iteration: int
    primal_residual: float
    dual_residual: float
    eps_pri: float
    eps_dual: float


class PairTrade(BaseModel):
    """One row of a solution table"""
    pair_i: int
    pair_j: int
    power_kw: float
    price: float


class ClusterPrice(BaseModel):
    """Connected group of realized trades and the price it clears at"""
    members: List[int]
    price: float


class PoolSolution(BaseModel):
    """Uniform-price clearing result"""
    price: float
    totals: Dict[int, float]
    binding: Dict[int, Binding] = Field(default_factory=dict)
    degenerate: bool = False

    def successful(self, threshold: float = TRADE_THRESHOLD_KW) -> List[int]:
        return sorted(i for i, t in self.totals.items() if abs(t) >= threshold)


class P2PSolution(BaseModel):
    """Bilateral trades, their prices, per-prosumer totals and cluster prices"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pair_powers: PairVector
    pair_prices: PairVector
    totals: Dict[int, float]
    clusters: List[ClusterPrice] = Field(default_factory=list)

    def successful(self, threshold: float = TRADE_THRESHOLD_KW) -> List[int]:
        return sorted(i for i, t in self.totals.items() if abs(t) >= threshold)

    def failed(self, threshold: float = TRADE_THRESHOLD_KW) -> List[int]:
        return sorted(i for i, t in self.totals.items() if abs(t) < threshold)

    def power(self, i: int, j: int) -> float:
        return self.pair_powers[(i, j)]

    def price(self, i: int, j: int) -> float:
        return self.pair_prices[(i, j)]

    def realized_pairs(self, threshold: float = TRADE_THRESHOLD_KW) -> List[Pair]:
        """Unordered pairs whose traded power reaches the threshold"""
        return sorted(
            (i, j) for (i, j), p in self.pair_powers if i < j and abs(p) >= threshold
        )

    def trades(self) -> List[PairTrade]:
        return [
            PairTrade(pair_i=i, pair_j=j, power_kw=p, price=self.pair_prices.values[k])
            for k, ((i, j), p) in enumerate(self.pair_powers)
        ]


class MarketSolution(P2PSolution):
    """Clearing result of an iterative or oracle method, with diagnostics"""
    method: str = "admm"
    iterations: int = 0
    converged: bool = True
    trace: List[TraceRecord] = Field(default_factory=list)
    wall_time: float = 0.0


class LearningPolicy(BaseModel):
    """Parameters of the decentralized cost-parameter learning loops"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["successful_trading", "boost_volume"] = "successful_trading"
    delta_b: float = Field(0.5, gt=0, description="Per-round shift of b (currency/kW)")
    gamma: float = Field(2.0, gt=1, description="Divisor applied to a when boosting volume")
    max_rounds: int = Field(20, ge=1)
    success_threshold: float = Field(TRADE_THRESHOLD_KW, gt=0, description="kW")
    learners: Optional[List[int]] = Field(None, description="Prosumers allowed to learn (default: all)")
    fixed_rounds: bool = Field(False, description="Keep stepping the initial learners for max_rounds rounds")
    confirm_with_admm: bool = Field(True, description="Confirm the final market with an ADMM clearing")
    admm_throughout: bool = Field(False, description="Use ADMM for every inner clearing")
    a_range: Optional[Tuple[float, float]] = Field(None, description="Regenerate boosted a_i uniformly in this range")
    seed: int = 0

    @model_validator(mode="after")
    def _check_range(self) -> "LearningPolicy":
        if self.a_range is not None:
            lo, hi = self.a_range
            if not 0 < lo <= hi:
                raise ValueError(f"a_range must satisfy 0 < low <= high, got {self.a_range}")
        return self


class LearningRound(BaseModel):
    """Parameters and cleared totals of one learning round"""
    round: int
    a: Dict[int, float]
    b: Dict[int, float]
    totals: Dict[int, float]
    successful: List[int]


class ValidationError(BaseModel):
    """Validation error details"""
    field: str
    message: str


class ScenarioProsumer(Prosumer):
    """Prosumer row of a scenario document, with optional ramp limits"""
    ramp_min: Optional[float] = Field(None, description="Lowest allowed change of total vs previous step")
    ramp_max: Optional[float] = Field(None, description="Highest allowed change of total vs previous step")

    def to_prosumer(self) -> Prosumer:
        return Prosumer(**self.model_dump(exclude={"ramp_min", "ramp_max"}))


class ProsumerOverride(BaseModel):
    """Per-step replacement of prosumer fields"""
    id: int
    role: Optional[Role] = None
    a: Optional[float] = Field(None, gt=0)
    b: Optional[float] = None
    p_tr_min: Optional[float] = None
    p_tr_max: Optional[float] = None

    def changes(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"id"}, exclude_none=True)


class TradeWeight(BaseModel):
    """Trade weight d_ij that prosumer i attaches to trading with j"""
    i: int
    j: int
    d: float


class ScenarioStep(BaseModel):
    """Overrides applied at one time step"""
    label: Optional[str] = None
    overrides: List[ProsumerOverride] = Field(default_factory=list)
    edges: Optional[List[Pair]] = Field(None, description="Edge list for this step (default: scenario edges)")
    weights: Optional[List[TradeWeight]] = Field(None, description="Weights for this step (default: scenario weights)")


class ScenarioSpec(BaseModel):
    """A timestamped sequence of market instances plus clearing and learning settings"""
    name: str = Field(..., min_length=1)
    description: str = ""
    prosumers: List[ScenarioProsumer] = Field(default_factory=list)
    edges: Optional[List[Pair]] = Field(None, description="Edge list; null means complete bipartite")
    weights: List[TradeWeight] = Field(default_factory=list)
    admm: AdmmConfig = Field(default_factory=AdmmConfig)
    learning: Optional[LearningPolicy] = None
    steps: List[ScenarioStep] = Field(default_factory=lambda: [ScenarioStep()])
    method: Literal["oracle", "admm", "decentralized"] = "admm"
    seed: int = 0
    zero_extend: bool = True
    step_hours: float = Field(1.0, gt=0)
    metadata: Dict[str, Any] = Field(default_factory=dict)


# Penalty and proximal weights for feeder instances (kW-scale totals, b in the tens)
FEEDER_RHO = 0.2
FEEDER_PROXIMAL = 0.21


def feeder_admm_config(max_iter: Optional[int] = None) -> AdmmConfig:
    """ADMM parameters that converge on generated feeders"""
    extra = {} if max_iter is None else {"max_iter": max_iter}
    return AdmmConfig(rho=FEEDER_RHO, phi=FEEDER_PROXIMAL, psi=FEEDER_PROXIMAL, **extra)


class FeederSpec(BaseModel):
    """Low-voltage feeder generator settings"""
    node_count: int = Field(55, ge=2)
    seller_count: int = Field(25, ge=1)
    a_range: Tuple[float, float] = (0.005, 0.009)
    b_range: Tuple[float, float] = (12.4, 31.2)
    pv_capacity_kw: float = Field(5.5, gt=0)
    hours: List[int] = Field(default_factory=lambda: [12])
    load_kw: Optional[List[List[float]]] = Field(None, description="Demand per node per step")
    generation_kw: Optional[List[List[float]]] = Field(None, description="Generation per node per step")
    seed: int = 0
    admm: AdmmConfig = Field(default_factory=feeder_admm_config)


class StepSummary(BaseModel):
    """Summary of one cleared time step"""
    step: int
    label: Optional[str] = None
    method: str
    converged: bool
    iterations: int
    wall_time: float
    clusters: List[ClusterPrice] = Field(default_factory=list)
    successful: List[int] = Field(default_factory=list)
    failed: List[int] = Field(default_factory=list)
    learning_rounds: Optional[int] = None
    messages: Optional[int] = None


class RunSummary(BaseModel):
    """Summary document written next to the CSV outputs"""
    success: bool
    scenario: str
    steps: List[StepSummary] = Field(default_factory=list)
    errors: List[ValidationError] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
