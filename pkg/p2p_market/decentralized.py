"""
Multi-agent message-passing execution of the proximal ADMM
"""
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .admm import (
    AdmmState,
    ConvergenceStatus,
    check_convergence,
    convergence_score,
    project_trades,
)
from .clearing import with_clusters
from .errors import InnerDivergenceError, MaxIterExceeded, ProtocolViolationError
from .models import (
    AdmmConfig,
    MarketInstance,
    MarketSolution,
    PairIndex,
    PairVector,
    Role,
    TradingGraph,
    TraceRecord,
)
from .settings import settings

logger = logging.getLogger(__name__)


# Constants
DIVERGENCE_FACTOR = 10.0


class MessageKind(str, Enum):
    V_EXCHANGE = "VExchange"
    Q_EXCHANGE = "QExchange"
    TRACE = "Trace"


@dataclass(frozen=True)
class Message:
    sender: int
    recipient: int
    round: int
    kind: MessageKind
    payload: float


@dataclass
class AgentState:
    """Everything one prosumer knows: its own parameters plus per-neighbor maps"""
    id: int
    role: Role
    a: float
    b: float
    p_tr_min: float
    p_tr_max: float
    neighbors: Tuple[int, ...]
    weights: Dict[int, float]
    p: Dict[int, float] = field(default_factory=dict)
    x: Dict[int, float] = field(default_factory=dict)
    u: Dict[int, float] = field(default_factory=dict)
    v: Dict[int, float] = field(default_factory=dict)
    v_received: Dict[int, float] = field(default_factory=dict)
    q_received: Dict[int, float] = field(default_factory=dict)
    prices: Dict[int, float] = field(default_factory=dict)
    q: float = 0.0
    rhs: float = 0.0
    inbox: List[Message] = field(default_factory=list)

    def __post_init__(self) -> None:
        for j in self.neighbors:
            self.p.setdefault(j, 0.0)
            self.x.setdefault(j, 0.0)
            self.u.setdefault(j, 0.0)

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    def diagonal(self, config: AdmmConfig) -> float:
        return self.degree + (config.rho + config.phi) / self.a

    def compute_v(self, config: AdmmConfig) -> None:
        for j in self.neighbors:
            self.v[j] = (
                self.b + self.weights.get(j, 0.0)
                + config.rho * (-self.x[j] + self.u[j])
                - config.phi * self.p[j]
            )

    def consume(self) -> None:
        """Read every delivered message into the matching local map"""
        for msg in self.inbox:
            if msg.kind is MessageKind.V_EXCHANGE:
                self.v_received[msg.sender] = msg.payload
            elif msg.kind is MessageKind.Q_EXCHANGE:
                self.q_received[msg.sender] = msg.payload
        self.inbox.clear()

    def prepare_rhs(self) -> None:
        self.rhs = sum(self.v_received[j] for j in self.neighbors) - sum(self.v[j] for j in self.neighbors)

    def jacobi_step(self, config: AdmmConfig) -> float:
        """One Jacobi update of q_i; returns |dq_i|"""
        updated = (self.rhs + sum(self.q_received[j] for j in self.neighbors)) / self.diagonal(config)
        change = abs(updated - self.q)
        self.q = updated
        return change

    def update_trades(self, config: AdmmConfig) -> None:
        """Local P, lambda, X and u updates from iteration-k values"""
        if not self.neighbors:
            return
        scale = 2.0 * (config.rho + config.phi)
        p_next: Dict[int, float] = {}
        for j in self.neighbors:
            high = self.v_received[j] + self.q_received[j]
            low = self.v[j] + self.q
            p_next[j] = (high - low) / scale
            self.prices[j] = (high + low) / 2.0

        y = np.array([
            (config.rho * (self.p[j] + self.u[j]) + config.psi * self.x[j]) / (config.rho + config.psi)
            for j in self.neighbors
        ])
        sign = np.full(len(self.neighbors), 1.0 if self.role is Role.BUYER else -1.0)
        owner = np.zeros(len(self.neighbors), dtype=np.int64)
        x_next = project_trades(y, owner, sign, np.array([self.p_tr_min]), np.array([self.p_tr_max]))

        for k, j in enumerate(self.neighbors):
            self.p[j] = p_next[j]
            self.x[j] = float(x_next[k])
            self.u[j] = self.u[j] + config.kappa * config.rho * (self.p[j] - self.x[j])


class MessageBus:
    """Synchronous, neighbor-only delivery with per-round accounting"""

    def __init__(self, graph: TradingGraph, keep_log: bool = False):
        self.graph = graph
        self.round = 0
        self.keep_log = keep_log
        self.log: List[Message] = []
        self.per_round: List[int] = []
        self.by_kind: Counter = Counter()
        self._pending: List[Message] = []

    def send(self, sender: int, recipient: int, kind: MessageKind, payload: float) -> None:
        if not self.graph.has_edge(sender, recipient):
            raise ProtocolViolationError(
                f"Agent {sender} tried to message non-neighbor {recipient}"
            )
        msg = Message(sender, recipient, self.round, kind, float(payload))
        self._pending.append(msg)
        if self.keep_log:
            self.log.append(msg)

    def annotate(self, payload: float) -> None:
        """Log-only Trace entry carrying a harness-side value for this round"""
        if self.keep_log:
            self.log.append(Message(-1, -1, self.round, MessageKind.TRACE, float(payload)))

    def deliver(self, agents: Dict[int, AgentState]) -> None:
        """Round barrier: hand over every pending message, then let agents consume them"""
        for msg in self._pending:
            agents[msg.recipient].inbox.append(msg)
            self.by_kind[msg.kind.value] += 1
        self.per_round.append(len(self._pending))
        self._pending = []
        for agent in agents.values():
            agent.consume()
            assert not agent.inbox, "inbox must be empty at round end"
        self.round += 1

    @property
    def total(self) -> int:
        return sum(self.per_round)


@dataclass
class MessageStats:
    per_round: List[int]
    per_iteration: List[int]
    inner_rounds: List[int]
    by_kind: Dict[str, int]
    total: int


@dataclass(frozen=True, eq=False)
class DecentralizedResult:
    solution: MarketSolution
    stats: MessageStats
    messages: List[Message]


def build_agents(market: MarketInstance) -> Dict[int, AgentState]:
    graph = market.graph
    return {
        p.id: AgentState(
            id=p.id,
            role=p.role,
            a=p.a,
            b=p.b,
            p_tr_min=p.p_tr_min,
            p_tr_max=p.p_tr_max,
            neighbors=graph.neighbors(p.id),
            weights={j: graph.weight(p.id, j) for j in graph.neighbors(p.id)},
        )
        for p in market.prosumers
    }


def broadcast_q(agents: Dict[int, AgentState], bus: MessageBus) -> None:
    for agent in agents.values():
        for j in agent.neighbors:
            bus.send(agent.id, j, MessageKind.Q_EXCHANGE, agent.q)
    bus.deliver(agents)


def jacobi_totals(
    agents: Dict[int, AgentState],
    bus: MessageBus,
    config: AdmmConfig,
    inner_tol: float = 1e-10,
    inner_max: int = 5000,
) -> Tuple[Dict[int, float], int]:
    """
    Decentralized Jacobi solve of the (L + Gamma) system.

    Each round every agent broadcasts q_i, then replaces it by
    (rhs_i + sum of neighbor q_j) / (n_i + (rho + phi) / a_i). Agents start from
    their current q_i. A final broadcast leaves every agent with its
    neighbors' converged values.

    Returns:
        Tuple of (q per agent, inner rounds used)
    """
    smallest = np.inf
    rounds = 0
    for rounds in range(1, inner_max + 1):
        broadcast_q(agents, bus)
        change = max((agent.jacobi_step(config) for agent in agents.values()), default=0.0)
        smallest = min(smallest, change)
        if change > inner_tol and change > DIVERGENCE_FACTOR * smallest:
            raise InnerDivergenceError(
                f"Jacobi change grew to {change:.3e} from a minimum of {smallest:.3e}"
            )
        if change <= inner_tol:
            break
    else:
        logger.warning("Jacobi stopped at inner_max=%d with change above %g", inner_max, inner_tol)
    broadcast_q(agents, bus)
    logger.debug("Jacobi finished in %d rounds", rounds)
    return {i: agent.q for i, agent in agents.items()}, rounds


def _collect(agents: Dict[int, AgentState], index: PairIndex, attr: str) -> PairVector:
    return PairVector(index, np.array([getattr(agents[i], attr)[j] for i, j in index.pairs]))


def run_decentralized(
    market: MarketInstance,
    config: Optional[AdmmConfig] = None,
    inner_tol: Optional[float] = None,
    inner_max: Optional[int] = None,
    strict: bool = False,
    trace_messages: bool = False,
) -> DecentralizedResult:
    """
    Run the ADMM with every data flow passing through the message bus.

    The harness only reads agent state to evaluate the global stopping rule
    and to assemble the final solution.
    """
    config = config or AdmmConfig()
    inner_tol = settings.inner_tol if inner_tol is None else inner_tol
    inner_max = settings.inner_max if inner_max is None else inner_max
    started = time.perf_counter()

    index = PairIndex.from_graph(market.graph)
    agents = build_agents(market)
    bus = MessageBus(market.graph, keep_log=trace_messages)
    trace: List[TraceRecord] = []
    per_iteration: List[int] = []
    inner_rounds: List[int] = []
    best: Optional[Tuple[float, AdmmState, PairVector]] = None
    state = AdmmState.zeros(index)
    prices = PairVector.zeros(index)
    converged = False

    logger.info("Decentralized run: %d agents, %d directed pairs", len(agents), index.m)
    for k in range(1, config.max_iter + 1):
        sent_before = bus.total
        x_prev = state.x

        for agent in agents.values():
            agent.compute_v(config)
            for j in agent.neighbors:
                bus.send(agent.id, j, MessageKind.V_EXCHANGE, agent.v[j])
        bus.deliver(agents)
        for agent in agents.values():
            agent.prepare_rhs()

        _, rounds = jacobi_totals(agents, bus, config, inner_tol, inner_max)
        inner_rounds.append(rounds)
        for agent in agents.values():
            agent.update_trades(config)

        state = AdmmState(
            _collect(agents, index, "p"), _collect(agents, index, "x"), _collect(agents, index, "u"), k
        )
        prices = _collect(agents, index, "prices") if index.m else PairVector.zeros(index)
        status, record = check_convergence(state.p, state.x, x_prev, state.u, config, index.n, k)
        trace.append(record)
        bus.annotate(record.primal_residual)
        per_iteration.append(bus.total - sent_before)

        score = convergence_score(record)
        if best is None or score < best[0]:
            best = (score, state, prices)
        if status is ConvergenceStatus.CONVERGED:
            converged = True
            break

    if not converged and best is not None:
        _, state, prices = best

    totals = index.sum_by_owner(state.p.values)
    solution = MarketSolution(
        pair_powers=state.p,
        pair_prices=prices,
        totals={i: float(t) for i, t in zip(market.ids, totals)},
        method="decentralized",
        iterations=len(trace),
        converged=converged,
        trace=trace,
        wall_time=time.perf_counter() - started,
    )
    solution = with_clusters(market, solution)
    stats = MessageStats(
        per_round=list(bus.per_round),
        per_iteration=per_iteration,
        inner_rounds=inner_rounds,
        by_kind=dict(bus.by_kind),
        total=bus.total,
    )
    result = DecentralizedResult(solution=solution, stats=stats, messages=list(bus.log))

    logger.info(
        "Decentralized run %s after %d iterations, %d messages",
        "converged" if converged else "stopped", len(trace), stats.total,
    )
    if not converged:
        message = f"Decentralized ADMM hit max_iter={config.max_iter}"
        logger.warning(message)
        if strict:
            raise MaxIterExceeded(message, solution=result)
    return result
