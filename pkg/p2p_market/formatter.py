"""
Output formatter for clearing results
"""
import csv
import io
import json
from typing import Any, Iterable, List, Mapping, Sequence

from .models import (
    LearningRound,
    MarketInstance,
    P2PSolution,
    RunSummary,
    ScenarioSpec,
    TRADE_THRESHOLD_KW,
    TraceRecord,
)


SOLUTION_HEADER = ["pair_i", "pair_j", "power_kw", "price"]
TOTALS_HEADER = ["prosumer", "role", "total_kw", "success", "cost"]
TRACE_HEADER = ["iter", "primal_residual", "dual_residual", "eps_pri", "eps_dual"]
MESSAGES_HEADER = ["round", "sender", "recipient", "kind", "payload"]
HISTORY_HEADER = ["round", "prosumer", "b", "a", "total", "success"]
SWEEP_HEADER = ["prosumers", "sellers", "buyers", "directed_pairs", "iterations", "seconds", "converged"]


def _num(value: float) -> str:
    # repr round-trips exactly
    return repr(float(value))


def _write(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def solution_to_csv(solution: P2PSolution) -> str:
    """
    Format every directed pair of a solution as CSV.

    Args:
        solution: Cleared solution

    Returns:
        CSV text with header pair_i, pair_j, power_kw, price
    """
    return _write(
        SOLUTION_HEADER,
        ([t.pair_i, t.pair_j, _num(t.power_kw), _num(t.price)] for t in solution.trades()),
    )


def totals_to_csv(
    market: MarketInstance,
    solution: P2PSolution,
    costs: Mapping[int, float],
    threshold: float = TRADE_THRESHOLD_KW,
) -> str:
    rows = []
    for p in market.prosumers:
        total = solution.totals[p.id]
        rows.append([p.id, p.role.value, _num(total), int(abs(total) >= threshold), _num(costs[p.id])])
    return _write(TOTALS_HEADER, rows)


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    return _write(
        TRACE_HEADER,
        ([r.iteration, _num(r.primal_residual), _num(r.dual_residual), _num(r.eps_pri), _num(r.eps_dual)]
         for r in trace),
    )


def messages_to_csv(messages: Sequence[Any]) -> str:
    """One row per (round, sender, recipient, kind, payload)"""
    return _write(
        MESSAGES_HEADER,
        ([m.round, m.sender, m.recipient, m.kind.value, _num(m.payload)] for m in messages),
    )


def history_to_csv(history: Sequence[LearningRound]) -> str:
    rows = []
    for record in history:
        successful = set(record.successful)
        for i in sorted(record.b):
            rows.append([record.round, i, _num(record.b[i]), _num(record.a[i]), _num(record.totals[i]), int(i in successful)])
    return _write(HISTORY_HEADER, rows)


def sweep_to_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    return _write(SWEEP_HEADER, ([row[key] for key in SWEEP_HEADER] for row in rows))


def summary_to_json(summary: RunSummary) -> str:
    """
    Convert a run summary to a JSON string.

    Args:
        summary: RunSummary object

    Returns:
        JSON string
    """
    return summary.model_dump_json(indent=2)


def summary_from_json(json_str: str) -> RunSummary:
    data = json.loads(json_str)
    return RunSummary.model_validate(data)


def scenario_to_json(spec: ScenarioSpec) -> str:
    return spec.model_dump_json(indent=2)


def validate_summary_schema(summary: RunSummary) -> List[str]:
    """
    Check that a run summary carries what downstream tooling reads.

    Args:
        summary: RunSummary object

    Returns:
        List of validation errors (empty if valid)
    """
    errors = []
    if not summary.scenario:
        errors.append("Missing scenario name")
    for k, step in enumerate(summary.steps):
        if step.iterations < 0:
            errors.append(f"steps[{k}].iterations is negative")
        if step.wall_time < 0:
            errors.append(f"steps[{k}].wall_time is negative")
        overlap = set(step.successful) & set(step.failed)
        if overlap:
            errors.append(f"steps[{k}] lists {sorted(overlap)} as both successful and failed")
        for c, cluster in enumerate(step.clusters):
            if not cluster.members:
                errors.append(f"steps[{k}].clusters[{c}] has no members")
    if summary.success and summary.errors:
        errors.append("Successful summary must not carry errors")
    return errors
