"""
Decentralized tuning of prosumer cost parameters
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set

import numpy as np

from . import admm
from .clearing import oracle_clear
from .errors import NotConvergedInRounds, VolumeRegressionError
from .models import (
    AdmmConfig,
    LearningPolicy,
    LearningRound,
    MarketInstance,
    MarketSolution,
    Prosumer,
)

logger = logging.getLogger(__name__)

ClearFn = Callable[[MarketInstance], MarketSolution]


@dataclass(frozen=True, eq=False)
class LearningOutcome:
    market: MarketInstance
    rounds: int
    history: List[LearningRound]
    solution: MarketSolution
    converged: bool
    best_round: int
    confirmation: Optional[MarketSolution] = None


@dataclass(frozen=True, eq=False)
class BoostOutcome:
    market: MarketInstance
    before: Dict[int, float]
    after: Dict[int, float]
    prices_before: List[float]
    prices_after: List[float]
    regressions: List[int]
    solution: MarketSolution


def choose_clearing(config: AdmmConfig, policy: LearningPolicy, clear: Optional[ClearFn] = None) -> ClearFn:
    """Inner clearing: explicit function, ADMM when forced, oracle otherwise"""
    if clear is not None:
        return clear
    if policy.admm_throughout:
        return lambda market: admm.run(market, config).solution
    return oracle_clear


def _record(round_no: int, market: MarketInstance, solution: MarketSolution, threshold: float) -> LearningRound:
    return LearningRound(
        round=round_no,
        a={p.id: p.a for p in market.prosumers},
        b={p.id: p.b for p in market.prosumers},
        totals=dict(solution.totals),
        successful=solution.successful(threshold),
    )


def shift_b(prosumer: Prosumer, delta_b: float) -> Prosumer:
    """Failed buyers lower b, failed sellers raise it"""
    step = delta_b if prosumer.is_seller else -delta_b
    return prosumer.model_copy(update={"b": prosumer.b + step})


def learn_successful_trading(
    market: MarketInstance,
    config: Optional[AdmmConfig] = None,
    policy: Optional[LearningPolicy] = None,
    clear: Optional[ClearFn] = None,
    strict: bool = False,
) -> LearningOutcome:
    """
    Shift b of failed prosumers until every prosumer trades.

    Args:
        market: Starting market
        config: ADMM parameters for ADMM clearings
        policy: Step size, round cap and learner selection
        clear: Inner clearing function (defaults to the analytic oracle)
        strict: Raise NotConvergedInRounds instead of returning the best round

    Returns:
        LearningOutcome; on failure `market` is the best round's market
    """
    config = config or AdmmConfig()
    policy = policy or LearningPolicy()
    clear_fn = choose_clearing(config, policy, clear)
    threshold = policy.success_threshold
    allowed: Set[int] = set(policy.learners) if policy.learners is not None else set(market.ids)

    solution = clear_fn(market)
    history = [_record(0, market, solution, threshold)]
    snapshots = [(market, solution)]
    initially_failed = [i for i in solution.failed(threshold) if i in allowed]
    logger.info("Learning round 0: failed prosumers %s", solution.failed(threshold))

    rounds = 0
    while rounds < policy.max_rounds:
        if policy.fixed_rounds:
            stepping = initially_failed
        else:
            stepping = [i for i in solution.failed(threshold) if i in allowed]
        if not stepping or (not policy.fixed_rounds and not solution.failed(threshold)):
            break
        market = market.with_prosumers([
            shift_b(p, policy.delta_b) if p.id in stepping else p for p in market.prosumers
        ])
        rounds += 1
        solution = clear_fn(market)
        history.append(_record(rounds, market, solution, threshold))
        snapshots.append((market, solution))
        logger.info(
            "Learning round %d: b=%s failed=%s",
            rounds,
            {i: round(market.prosumer(i).b, 6) for i in stepping},
            solution.failed(threshold),
        )

    converged = not solution.failed(threshold)
    best_round = max(range(len(history)), key=lambda r: (len(history[r].successful), -r))
    if converged:
        best_round = rounds

    confirmation = None
    if policy.confirm_with_admm and not policy.admm_throughout and clear is None:
        final_market = snapshots[best_round][0]
        confirmation = admm.run(final_market, config).solution
        if confirmation.successful(threshold) != snapshots[best_round][1].successful(threshold):
            logger.warning(
                "ADMM confirmation disagrees on successful prosumers: %s vs %s",
                confirmation.successful(threshold), snapshots[best_round][1].successful(threshold),
            )

    final_market, final_solution = snapshots[best_round]
    outcome = LearningOutcome(
        market=final_market,
        rounds=rounds,
        history=history,
        solution=final_solution,
        converged=converged,
        best_round=best_round,
        confirmation=confirmation,
    )
    if not converged:
        message = (
            f"Prosumers {solution.failed(threshold)} still fail after {rounds} rounds; "
            f"best round is {best_round}"
        )
        logger.warning(message)
        if strict:
            raise NotConvergedInRounds(message, outcome=outcome)
    return outcome


def boost_parameters(market: MarketInstance, policy: LearningPolicy) -> MarketInstance:
    """Divide a by gamma, or redraw it from policy.a_range, for every opted-in prosumer"""
    opted = set(policy.learners) if policy.learners is not None else set(market.ids)
    rng = np.random.default_rng(policy.seed)
    updated = []
    for p in market.prosumers:
        if p.id not in opted:
            updated.append(p)
            continue
        if policy.a_range is not None:
            new_a = float(rng.uniform(*policy.a_range))
        else:
            new_a = p.a / policy.gamma
        updated.append(p.model_copy(update={"a": new_a}))
    return market.with_prosumers(updated)


def _is_interior(p: Prosumer, total: float, threshold: float) -> bool:
    return abs(total) >= threshold and p.p_tr_min + 1e-9 < total < p.p_tr_max - 1e-9


def learn_boost_volume(
    market: MarketInstance,
    config: Optional[AdmmConfig] = None,
    policy: Optional[LearningPolicy] = None,
    clear: Optional[ClearFn] = None,
    strict: bool = False,
) -> BoostOutcome:
    """
    One volume-boosting pass: lower a for opted-in prosumers and re-clear.

    Interior prosumers whose traded volume shrank are reported in
    `regressions` and logged as a warning; with `strict` they raise
    VolumeRegressionError carrying the outcome instead.
    """
    config = config or AdmmConfig()
    policy = policy or LearningPolicy(kind="boost_volume")
    clear_fn = choose_clearing(config, policy, clear)
    threshold = policy.success_threshold

    before = clear_fn(market)
    boosted = boost_parameters(market, policy)
    after = clear_fn(boosted)

    regressions = [
        p.id for p in market.prosumers
        if _is_interior(p, before.totals[p.id], threshold)
        and abs(after.totals[p.id]) < abs(before.totals[p.id]) - 1e-9
    ]
    logger.info(
        "Volume boost: total traded %.3f kW -> %.3f kW",
        sum(max(t, 0.0) for t in before.totals.values()),
        sum(max(t, 0.0) for t in after.totals.values()),
    )
    outcome = BoostOutcome(
        market=boosted,
        before=dict(before.totals),
        after=dict(after.totals),
        prices_before=[c.price for c in before.clusters],
        prices_after=[c.price for c in after.clusters],
        regressions=regressions,
        solution=after,
    )
    if regressions:
        message = f"Traded volume decreased for interior prosumers {regressions}"
        logger.warning(message)
        if strict:
            raise VolumeRegressionError(message, regressions=regressions, outcome=outcome)
    return outcome
