"""
Parallel proximal ADMM for bilateral market clearing
"""
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .clearing import with_clusters
from .errors import MaxIterExceeded, NonFiniteInputError, SingularSystemError
from .graph import GraphAlgebra
from .models import (
    AdmmConfig,
    MarketInstance,
    MarketSolution,
    PairIndex,
    PairVector,
    Role,
    TraceRecord,
)

logger = logging.getLogger(__name__)


# Constants
PROJECTION_MAX_STEPS = 200
PROJECTION_WIDTH_TOL = 1e-12
TRACE_LOG_EVERY = 100
RESIDUAL_WINDOW = 50


class ConvergenceStatus(str, Enum):
    CONVERGED = "converged"
    CONTINUE = "continue"


@dataclass(frozen=True, eq=False)
class AdmmState:
    """Iterates P^k, X^k and scaled dual u^k over one pair index"""
    p: PairVector
    x: PairVector
    u: PairVector
    iteration: int = 0

    @classmethod
    def zeros(cls, index: PairIndex) -> "AdmmState":
        return cls(PairVector.zeros(index), PairVector.zeros(index), PairVector.zeros(index))

    @property
    def index(self) -> PairIndex:
        return self.p.index


@dataclass(frozen=True, eq=False)
class AdmmProblem:
    """Market data laid out per directed pair, plus the factorised (L + Gamma) system"""
    market: MarketInstance
    config: AdmmConfig
    index: PairIndex
    a: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sign: np.ndarray
    d: np.ndarray
    system: np.ndarray
    factor: Tuple[np.ndarray, bool] = field(repr=False)

    @classmethod
    def from_market(cls, market: MarketInstance, config: AdmmConfig) -> "AdmmProblem":
        index = PairIndex.from_graph(market.graph)
        a = market.vector("a")
        roles = np.array([1.0 if p.role is Role.BUYER else -1.0 for p in market.prosumers])
        d = np.array([market.graph.weight(i, j) for i, j in index.pairs])
        system = assemble_system(market, config)
        try:
            factor = cho_factor(system)
        except LinAlgError as exc:
            raise SingularSystemError(f"(L + Gamma) could not be factorised: {exc}") from exc
        return cls(
            market=market,
            config=config,
            index=index,
            a=a,
            b=market.vector("b"),
            lo=market.vector("p_tr_min"),
            hi=market.vector("p_tr_max"),
            sign=roles[index.owner] if index.m else np.zeros(0),
            d=d,
            system=system,
            factor=factor,
        )


@dataclass(frozen=True, eq=False)
class AdmmResult:
    solution: MarketSolution
    state: AdmmState

    @property
    def trace(self) -> List[TraceRecord]:
        return self.solution.trace


def assemble_system(market: MarketInstance, config: AdmmConfig) -> np.ndarray:
    """(L + Gamma) with Gamma = (rho + phi) diag(1 / a)"""
    laplacian = GraphAlgebra.from_graph(market.graph).laplacian.astype(float)
    gamma = (config.rho + config.phi) / market.vector("a")
    system = laplacian + np.diag(gamma)
    off_diagonal = np.abs(system).sum(axis=1) - np.abs(np.diag(system))
    assert np.array_equal(system, system.T), "(L + Gamma) must be symmetric"
    assert np.all(np.diag(system) > off_diagonal), "(L + Gamma) must be strictly diagonally dominant"
    return system


def project_trades(
    y: np.ndarray,
    owner: np.ndarray,
    sign: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
) -> np.ndarray:
    """
    Project per-prosumer trade vectors onto {role orthant, lo <= sum <= hi}.

    The projection is clip_sign(y - nu) with one scalar nu per prosumer; nu is 0
    when the clipped sum already lies inside the bounds and is found by
    bisection otherwise.

    Args:
        y: Unconstrained point, one entry per directed pair
        owner: Owner position of every pair
        sign: +1 for pairs owned by buyers, -1 for sellers
        lo: Lower sum bound per prosumer
        hi: Upper sum bound per prosumer

    Returns:
        Projected pair values
    """
    if not np.all(np.isfinite(y)):
        raise NonFiniteInputError("Non-finite value reached the trade projection")
    n = len(lo)
    clipped = sign * np.maximum(sign * y, 0.0)
    sums = np.bincount(owner, weights=clipped, minlength=n)
    above = sums > hi
    below = sums < lo
    violating = above | below
    if not violating.any():
        return clipped

    mask = violating[owner]
    y_sub, owner_sub, sign_sub = y[mask], owner[mask], sign[mask]
    target = np.where(above, hi, lo)
    bound = np.abs(target)
    y_min = np.full(n, np.inf)
    y_max = np.full(n, -np.inf)
    np.minimum.at(y_min, owner_sub, y_sub)
    np.maximum.at(y_max, owner_sub, y_sub)
    nu_lo = np.where(violating, y_min - bound - 1.0, 0.0)
    nu_hi = np.where(violating, y_max + bound + 1.0, 0.0)

    for _ in range(PROJECTION_MAX_STEPS):
        if np.max((nu_hi - nu_lo)[violating]) < PROJECTION_WIDTH_TOL:
            break
        mid = 0.5 * (nu_lo + nu_hi)
        z = y_sub - mid[owner_sub]
        g = np.bincount(owner_sub, weights=sign_sub * np.maximum(sign_sub * z, 0.0), minlength=n)
        # g is nonincreasing in nu
        move_up = g > target
        nu_lo = np.where(violating & move_up, mid, nu_lo)
        nu_hi = np.where(violating & ~move_up, mid, nu_hi)

    # keep the endpoint on the feasible side of the violated bound
    nu = np.where(above, nu_hi, np.where(below, nu_lo, 0.0))
    z = y - nu[owner]
    return sign * np.maximum(sign * z, 0.0)


def x_update(state: AdmmState, problem: AdmmProblem) -> PairVector:
    """Per-prosumer proximal projection of P^k + u^k onto the feasible trade set"""
    cfg = problem.config
    y = (cfg.rho * (state.p.values + state.u.values) + cfg.psi * state.x.values) / (cfg.rho + cfg.psi)
    index = problem.index
    return PairVector(index, project_trades(y, index.owner, problem.sign, problem.lo, problem.hi))


def compute_v(state: AdmmState, problem: AdmmProblem) -> PairVector:
    """v_ij = b_i + d_ij + rho (u_ij - X_ij) - phi P_ij"""
    cfg = problem.config
    index = problem.index
    v = (
        problem.b[index.owner]
        + problem.d
        + cfg.rho * (-state.x.values + state.u.values)
        - cfg.phi * state.p.values
    )
    return PairVector(index, v)


def solve_totals(v: PairVector, problem: AdmmProblem) -> np.ndarray:
    """Solve (L + Gamma) q = v_hat - v_tilde for q_i = 2 a_i P_i,tr"""
    index = problem.index
    v_hat = index.sum_by_owner(v.values[index.reverse]) if index.m else np.zeros(index.n)
    v_tilde = index.sum_by_owner(v.values) if index.m else np.zeros(index.n)
    return cho_solve(problem.factor, v_hat - v_tilde)


def p_update(v: PairVector, q: np.ndarray, problem: AdmmProblem) -> Tuple[PairVector, PairVector]:
    """
    Closed-form trade and price update.

    Returns:
        Tuple of (P^{k+1}, lambda^{k+1}); P is antisymmetric and lambda symmetric
        in every bit because both orientations share the same two summands.
    """
    cfg = problem.config
    index = problem.index
    high = v.values[index.reverse] + q[index.partner]
    low = v.values + q[index.owner]
    p = (high - low) / (2.0 * (cfg.rho + cfg.phi))
    lam = (high + low) / 2.0
    return PairVector(index, p), PairVector(index, lam)


def u_update(u: PairVector, p_next: PairVector, x_next: PairVector, config: AdmmConfig) -> PairVector:
    return PairVector(u.index, u.values + config.kappa * config.rho * (p_next.values - x_next.values))


def check_convergence(
    p: PairVector,
    x: PairVector,
    x_prev: PairVector,
    u: PairVector,
    config: AdmmConfig,
    n: int,
    iteration: int,
) -> Tuple[ConvergenceStatus, TraceRecord]:
    """
    Primal/dual residuals against mixed absolute/relative tolerances.

    Returns:
        Tuple of (status, trace record of this iteration)
    """
    m = p.index.m
    r = float(np.linalg.norm(p.values - x.values))
    s = float(np.linalg.norm(-config.rho * (x.values - x_prev.values)))
    scale = math.sqrt(n + m) * config.eps_abs
    eps_pri = scale + config.eps_rel * max(float(np.linalg.norm(p.values)), float(np.linalg.norm(x.values)))
    eps_dual = scale + config.eps_rel * float(np.linalg.norm(config.rho * u.values))
    record = TraceRecord(
        iteration=iteration,
        primal_residual=r,
        dual_residual=s,
        eps_pri=eps_pri,
        eps_dual=eps_dual,
    )
    status = ConvergenceStatus.CONVERGED if r <= eps_pri and s <= eps_dual else ConvergenceStatus.CONTINUE
    return status, record


def convergence_score(record: TraceRecord) -> float:
    return max(record.primal_residual / record.eps_pri, record.dual_residual / record.eps_dual)


def residual_window_peaks(trace: List[TraceRecord], width: int = RESIDUAL_WINDOW) -> List[float]:
    """max(r, s) over consecutive windows of `width` iterations; a short tail is dropped"""
    peaks = []
    for start in range(0, len(trace) - width + 1, width):
        window = trace[start:start + width]
        peaks.append(max(max(r.primal_residual, r.dual_residual) for r in window))
    return peaks


def rising_windows(peaks: List[float], rel_tol: float = 1e-9) -> List[int]:
    """Indices of windows whose peak exceeds the previous window's peak"""
    return [k for k in range(1, len(peaks)) if peaks[k] > peaks[k - 1] * (1.0 + rel_tol)]


def run(
    market: MarketInstance,
    config: Optional[AdmmConfig] = None,
    initial: Optional[AdmmState] = None,
    strict: bool = False,
) -> AdmmResult:
    """
    Clear a market with the parallel proximal ADMM.

    Args:
        market: Market instance with zero-extended bounds
        config: ADMM parameters (defaults when omitted)
        initial: Warm-start state over the same directed pairs
        strict: Raise MaxIterExceeded instead of returning the best iterate

    Returns:
        AdmmResult with the solution, its residual trace and the final state
    """
    config = config or AdmmConfig()
    started = time.perf_counter()
    problem = AdmmProblem.from_market(market, config)
    index = problem.index
    if initial is None:
        state = AdmmState.zeros(index)
    else:
        if initial.index.pairs != index.pairs:
            raise ValueError("Warm-start state does not cover the market's directed pairs")
        state = AdmmState(initial.p, initial.x, initial.u)

    logger.info(
        "ADMM start: %d prosumers, %d directed pairs, rho=%g phi=%g psi=%g kappa=%g",
        index.n, index.m, config.rho, config.phi, config.psi, config.kappa,
    )
    trace: List[TraceRecord] = []
    prices = PairVector.zeros(index)
    best: Optional[Tuple[float, AdmmState, PairVector]] = None
    converged = False

    for k in range(1, config.max_iter + 1):
        # both block updates read iteration-k values only
        v = compute_v(state, problem)
        q = solve_totals(v, problem)
        p_next, prices = p_update(v, q, problem)
        x_next = x_update(state, problem)
        u_next = u_update(state.u, p_next, x_next, config)

        status, record = check_convergence(p_next, x_next, state.x, u_next, config, index.n, k)
        trace.append(record)
        state = AdmmState(p_next, x_next, u_next, k)

        score = convergence_score(record)
        if best is None or score < best[0]:
            best = (score, state, prices)
        if k % TRACE_LOG_EVERY == 0:
            logger.debug(
                "iter %d: r=%.3e (eps %.3e) s=%.3e (eps %.3e)",
                k, record.primal_residual, record.eps_pri, record.dual_residual, record.eps_dual,
            )
        if status is ConvergenceStatus.CONVERGED:
            converged = True
            break

    rising = rising_windows(residual_window_peaks(trace))
    if rising:
        logger.warning("Residual peak rose in %d windows of %d iterations (first: window %d)",
                       len(rising), RESIDUAL_WINDOW, rising[0])

    if not converged and best is not None:
        _, state, prices = best

    totals = index.sum_by_owner(state.p.values) if index.m else np.zeros(index.n)
    solution = MarketSolution(
        pair_powers=state.p,
        pair_prices=prices,
        totals={i: float(t) for i, t in zip(market.ids, totals)},
        method="admm",
        iterations=len(trace),
        converged=converged,
        trace=trace,
        wall_time=time.perf_counter() - started,
    )
    solution = with_clusters(market, solution)
    result = AdmmResult(solution=solution, state=state)

    if converged:
        logger.info("ADMM converged in %d iterations (%.3fs)", len(trace), solution.wall_time)
    else:
        message = f"ADMM hit max_iter={config.max_iter} without meeting both tolerances"
        logger.warning("%s; returning best iterate %d", message, state.iteration)
        if strict:
            raise MaxIterExceeded(message, solution=result)
    return result
