"""
Scenario loading, feeder generation and multi-step orchestration
"""
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from . import admm
from .clearing import oracle_clear
from .decentralized import Message, MessageStats, run_decentralized
from .errors import (
    EmptyFeasibleIntervalError,
    MarketError,
    RangeError,
    ScenarioParseError,
    ScenarioValidationError,
)
from .formatter import (
    history_to_csv,
    messages_to_csv,
    scenario_to_json,
    solution_to_csv,
    summary_to_json,
    sweep_to_csv,
    totals_to_csv,
    trace_to_csv,
)
from .graph import build_market, market_costs
from .learning import learn_boost_volume, learn_successful_trading
from .models import (
    AdmmConfig,
    FeederSpec,
    MarketInstance,
    MarketSolution,
    PairIndex,
    Prosumer,
    ProsumerOverride,
    Role,
    RunSummary,
    ScenarioProsumer,
    ScenarioSpec,
    ScenarioStep,
    StepSummary,
    ValidationError,
    feeder_admm_config,
)
from .validators import validate_scenario

logger = logging.getLogger(__name__)


# Constants
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3

METHODS = ("oracle", "admm", "decentralized")
SWEEP_SIZES: Tuple[Tuple[int, int], ...] = ((55, 25), (165, 75), (330, 150))
SYNTHETIC_LOAD_KW = (0.5, 3.5)
REFERENCE_TOLERANCE_KW = 1.0


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    """
    Read, parse and validate a scenario document.

    Args:
        path: JSON file

    Returns:
        Validated ScenarioSpec

    Raises:
        ScenarioParseError: unreadable file, bad JSON or non-object document
        ScenarioValidationError: schema or cross-reference errors
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"Cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text)


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"Invalid JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, dict):
        raise ScenarioParseError("Scenario document must be a JSON object", line=1, column=1)

    try:
        spec = ScenarioSpec.model_validate(data)
    except PydanticValidationError as exc:
        errors = [
            ValidationError(field=".".join(str(part) for part in err["loc"]) or "document", message=err["msg"])
            for err in exc.errors()
        ]
        raise ScenarioValidationError(errors) from exc

    errors, warnings = validate_scenario(spec)
    if errors:
        raise ScenarioValidationError(errors)
    for warning in warnings:
        logger.warning("%s: %s", spec.name, warning)
    return spec


def write_scenario(spec: ScenarioSpec, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(scenario_to_json(spec), encoding="utf-8")
    return target


def merge_ramp_bounds(
    p_tr_min: float,
    p_tr_max: float,
    previous_total: Optional[float],
    ramp_min: Optional[float] = None,
    ramp_max: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Intersect the box bounds with ramp limits around the previous total.

    Returns:
        Effective (lower, upper) bounds

    Raises:
        EmptyFeasibleIntervalError: the intersection is empty
    """
    low = -math.inf if ramp_min is None else ramp_min
    high = math.inf if ramp_max is None else ramp_max
    if low > high:
        raise ValueError(f"ramp_min {low} exceeds ramp_max {high}")
    if previous_total is None:
        return p_tr_min, p_tr_max
    lower = max(p_tr_min, low + previous_total)
    upper = min(p_tr_max, high + previous_total)
    if lower > upper:
        raise EmptyFeasibleIntervalError(
            f"Ramp window [{low + previous_total}, {high + previous_total}] misses box [{p_tr_min}, {p_tr_max}]"
        )
    return lower, upper


def market_for_step(
    spec: ScenarioSpec,
    t: int,
    previous_totals: Optional[Dict[int, float]] = None,
) -> MarketInstance:
    """
    Market instance of step t: overrides, zero-extension, ramp merging, graph.
    """
    step = spec.steps[t]
    overrides: Dict[int, ProsumerOverride] = {o.id: o for o in step.overrides}
    prosumers: List[Prosumer] = []
    for row in spec.prosumers:
        prosumer = row.to_prosumer()
        if row.id in overrides:
            prosumer = prosumer.with_params(**overrides[row.id].changes())
        if spec.zero_extend:
            prosumer = prosumer.zero_extended()
        if previous_totals is not None and (row.ramp_min is not None or row.ramp_max is not None):
            lower, upper = merge_ramp_bounds(
                prosumer.p_tr_min, prosumer.p_tr_max, previous_totals.get(row.id), row.ramp_min, row.ramp_max
            )
            prosumer = prosumer.with_params(p_tr_min=lower, p_tr_max=upper)
        prosumers.append(prosumer)

    edges = step.edges if step.edges is not None else spec.edges
    weights = step.weights if step.weights is not None else spec.weights
    return build_market(prosumers, edges, {(w.i, w.j): w.d for w in weights})


@dataclass(frozen=True, eq=False)
class ClearOutcome:
    solution: MarketSolution
    state: Optional[admm.AdmmState] = None
    messages: Optional[List[Message]] = None
    stats: Optional[MessageStats] = None


def clear_market(
    market: MarketInstance,
    method: str,
    config: Optional[AdmmConfig] = None,
    initial: Optional[admm.AdmmState] = None,
    trace_messages: bool = False,
    strict: bool = False,
) -> ClearOutcome:
    """Clear one market with the oracle, the centralized ADMM or the agent simulation"""
    if method == "oracle":
        return ClearOutcome(solution=oracle_clear(market))
    if method == "admm":
        result = admm.run(market, config, initial=initial, strict=strict)
        return ClearOutcome(solution=result.solution, state=result.state)
    if method == "decentralized":
        result = run_decentralized(market, config, strict=strict, trace_messages=trace_messages)
        return ClearOutcome(solution=result.solution, messages=result.messages, stats=result.stats)
    raise ValueError(f"Unknown clearing method {method!r}; expected one of {METHODS}")


def generate_feeder(feeder: FeederSpec) -> ScenarioSpec:
    """
    Build a seeded feeder scenario.

    Roles follow the sign of generation minus demand at each step and bounds
    follow its magnitude. Without supplied series, the first seller_count
    nodes get a rooftop solar profile and every node a random load.

    Raises:
        RangeError: empty or non-positive ranges, or no buyers left
    """
    a_lo, a_hi = feeder.a_range
    b_lo, b_hi = feeder.b_range
    if not 0 < a_lo <= a_hi:
        raise RangeError(f"a_range must satisfy 0 < low <= high, got {feeder.a_range}")
    if not 0 < b_lo <= b_hi:
        raise RangeError(f"b_range must satisfy 0 < low <= high, got {feeder.b_range}")
    if feeder.seller_count >= feeder.node_count:
        raise RangeError(
            f"seller_count {feeder.seller_count} leaves no buyers among {feeder.node_count} nodes"
        )
    if not feeder.hours:
        raise RangeError("At least one hour is required")

    n, steps = feeder.node_count, len(feeder.hours)
    rng = np.random.default_rng(feeder.seed)
    a = rng.uniform(a_lo, a_hi, n)
    b = rng.uniform(b_lo, b_hi, n)

    synthetic = feeder.load_kw is None or feeder.generation_kw is None
    if synthetic:
        load = rng.uniform(*SYNTHETIC_LOAD_KW, (n, steps))
        shape = np.array([max(0.0, math.sin(math.pi * (h - 6) / 12.0)) for h in feeder.hours])
        generation = np.zeros((n, steps))
        generation[:feeder.seller_count] = feeder.pv_capacity_kw * shape
    else:
        load = np.asarray(feeder.load_kw, dtype=float)
        generation = np.asarray(feeder.generation_kw, dtype=float)
        if load.shape != (n, steps) or generation.shape != (n, steps):
            raise RangeError(f"Series must have shape ({n}, {steps})")

    net = generation - load

    def row(i: int, t: int) -> Dict[str, Any]:
        surplus = float(net[i, t])
        if surplus > 0:
            return {"role": Role.SELLER, "p_tr_min": -surplus, "p_tr_max": 0.0}
        return {"role": Role.BUYER, "p_tr_min": 0.0, "p_tr_max": -surplus}

    prosumers = [
        ScenarioProsumer(id=i + 1, a=float(a[i]), b=float(b[i]), **row(i, 0)) for i in range(n)
    ]
    step_list = [
        ScenarioStep(
            label=f"hour {hour}",
            overrides=[ProsumerOverride(id=i + 1, **row(i, t)) for i in range(n)],
        )
        for t, hour in enumerate(feeder.hours)
    ]
    sellers = int((net[:, 0] > 0).sum())
    logger.info("Feeder: %d nodes, %d sellers at hour %d", n, sellers, feeder.hours[0])
    return ScenarioSpec(
        name=f"feeder-{n}",
        description=f"Low-voltage feeder with {n} prosumers",
        prosumers=prosumers,
        edges=None,
        admm=feeder.admm,
        steps=step_list,
        method="admm",
        seed=feeder.seed,
        metadata={
            "synthetic_series": synthetic,
            "hours": list(feeder.hours),
            "pv_nodes": feeder.seller_count,
        },
    )


def _compare_reference(spec: ScenarioSpec, t: int, solution: MarketSolution) -> None:
    reference = spec.metadata.get("reference_totals")
    if not isinstance(reference, dict):
        return
    for key, expected in reference.items():
        actual = solution.totals.get(int(key))
        if actual is not None and abs(actual - float(expected)) > REFERENCE_TOLERANCE_KW:
            logger.warning(
                "Step %d: prosumer %s total %.3f differs from reference %.3f",
                t, key, actual, float(expected),
            )


def _step_file(outdir: Path, t: int, suffix: str) -> Path:
    return outdir / f"step{t}_{suffix}.csv"


def run_scenario(
    spec: ScenarioSpec,
    outdir: Union[str, Path],
    method: Optional[str] = None,
    trace_messages: bool = False,
    warm_start: bool = True,
) -> int:
    """
    Clear every step of a scenario and write CSV tables plus summary.json.

    Args:
        spec: Validated scenario
        outdir: Output directory (created when missing)
        method: Overrides spec.method
        trace_messages: Export the message log of decentralized runs
        warm_start: Start ADMM from the previous step's state when the pairs match

    Returns:
        Exit code: 0 success, 3 a step did not converge, 1 a step failed
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    method = method or spec.method
    if method not in METHODS:
        raise ValueError(f"Unknown clearing method {method!r}; expected one of {METHODS}")

    summaries: List[StepSummary] = []
    errors: List[ValidationError] = []
    warnings: List[str] = []
    previous_totals: Optional[Dict[int, float]] = None
    state: Optional[admm.AdmmState] = None
    exit_code = EXIT_OK
    policy = spec.learning

    for t, step in enumerate(spec.steps):
        try:
            market = market_for_step(spec, t, previous_totals)
            learning_rounds = None
            if policy is not None and policy.kind == "successful_trading":
                inner_policy = policy if method == "oracle" else policy.model_copy(update={"confirm_with_admm": False})
                learned = learn_successful_trading(market, spec.admm, inner_policy)
                market = learned.market
                learning_rounds = learned.rounds
                name = "learning_history.csv" if len(spec.steps) == 1 else f"step{t}_learning_history.csv"
                (out / name).write_text(history_to_csv(learned.history), encoding="utf-8")
                if not learned.converged:
                    warnings.append(f"step {t}: learning did not make every prosumer trade")
            elif policy is not None and policy.kind == "boost_volume":
                market = learn_boost_volume(market, spec.admm, policy).market
                learning_rounds = 1

            initial = state if warm_start and state is not None else None
            if initial is not None and initial.index.pairs != PairIndex.from_graph(market.graph).pairs:
                initial = None
            outcome = clear_market(market, method, spec.admm, initial=initial, trace_messages=trace_messages)
        except MarketError as exc:
            logger.error("Step %d failed: %s", t, exc)
            errors.append(ValidationError(field=f"steps[{t}]", message=str(exc)))
            exit_code = EXIT_FAILURE
            break

        solution = outcome.solution
        state = outcome.state
        previous_totals = dict(solution.totals)
        _compare_reference(spec, t, solution)

        _step_file(out, t, "solution").write_text(solution_to_csv(solution), encoding="utf-8")
        costs = market_costs(market, solution)
        _step_file(out, t, "totals").write_text(totals_to_csv(market, solution, costs), encoding="utf-8")
        _step_file(out, t, "trace").write_text(trace_to_csv(solution.trace), encoding="utf-8")
        if outcome.messages:
            _step_file(out, t, "messages").write_text(messages_to_csv(outcome.messages), encoding="utf-8")

        if not solution.converged:
            warnings.append(f"step {t}: {method} stopped at the iteration cap")
            exit_code = max(exit_code, EXIT_NOT_CONVERGED)

        summaries.append(StepSummary(
            step=t,
            label=step.label,
            method=method,
            converged=solution.converged,
            iterations=solution.iterations,
            wall_time=solution.wall_time,
            clusters=solution.clusters,
            successful=solution.successful(),
            failed=solution.failed(),
            learning_rounds=learning_rounds,
            messages=outcome.stats.total if outcome.stats else None,
        ))
        logger.info(
            "Step %d cleared by %s: prices %s",
            t, method, [round(c.price, 4) for c in solution.clusters],
        )

    summary = RunSummary(
        success=exit_code == EXIT_OK,
        scenario=spec.name,
        steps=summaries,
        errors=errors,
        warnings=warnings,
        metadata={**spec.metadata, "seed": spec.seed, "step_hours": spec.step_hours},
    )
    (out / "summary.json").write_text(summary_to_json(summary), encoding="utf-8")
    logger.info("Wrote %d step(s) to %s", len(summaries), out)
    return exit_code


def run_sweep(
    sizes: Sequence[Tuple[int, int]] = SWEEP_SIZES,
    seed: int = 0,
    outdir: Optional[Union[str, Path]] = None,
    config: Optional[AdmmConfig] = None,
) -> List[Dict[str, Any]]:
    """
    Time ADMM clearings of feeder instances of growing size.

    Args:
        sizes: (node_count, seller_count) per instance
        seed: Feeder seed
        outdir: Where to write sweep.csv (skipped when None)
        config: ADMM parameters (feeder defaults when None)

    Returns:
        One row per size
    """
    config = config or feeder_admm_config()
    rows = []
    for node_count, seller_count in sizes:
        spec = generate_feeder(FeederSpec(node_count=node_count, seller_count=seller_count, seed=seed, admm=config))
        market = market_for_step(spec, 0)
        started = time.perf_counter()
        result = admm.run(market, config)
        elapsed = time.perf_counter() - started
        sellers = sum(1 for p in market.prosumers if p.role is Role.SELLER)
        rows.append({
            "prosumers": market.n,
            "sellers": sellers,
            "buyers": market.n - sellers,
            "directed_pairs": result.state.index.m,
            "iterations": result.solution.iterations,
            "seconds": round(elapsed, 6),
            "converged": int(result.solution.converged),
        })
        logger.info("Sweep %d prosumers: %d iterations in %.2fs", market.n, result.solution.iterations, elapsed)
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(sweep_to_csv(rows), encoding="utf-8")
    return rows
