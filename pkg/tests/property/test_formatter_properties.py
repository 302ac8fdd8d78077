"""
Property-based tests for the output formatter
"""
import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from p2p_market.clearing import oracle_clear
from p2p_market.formatter import (
    HISTORY_HEADER,
    SOLUTION_HEADER,
    TOTALS_HEADER,
    history_to_csv,
    solution_to_csv,
    summary_from_json,
    summary_to_json,
    totals_to_csv,
    validate_summary_schema,
)
from p2p_market.graph import build_market, market_costs
from p2p_market.models import (
    ClusterPrice,
    LearningRound,
    Prosumer,
    Role,
    RunSummary,
    StepSummary,
)
from p2p_market.parsers import parse_solution_csv, parse_totals_csv


def table_market():
    rows = [
        (1, Role.SELLER, 0.0031, 8.71, -105.0),
        (2, Role.SELLER, 0.0074, 3.53, -115.0),
        (3, Role.SELLER, 0.0066, 7.58, -125.0),
        (4, Role.BUYER, 0.0063, 2.24, 100.0),
        (5, Role.BUYER, 0.0069, 8.53, 110.0),
        (6, Role.BUYER, 0.0095, 3.46, 95.0),
    ]
    return build_market([
        Prosumer(id=i, role=role, a=a, b=b, p_tr_min=min(bound, 0.0), p_tr_max=max(bound, 0.0))
        for i, role, a, b, bound in rows
    ])


# Strategy for generating step summaries
@st.composite
def step_summary_strategy(draw):
    ids = draw(st.lists(st.integers(min_value=1, max_value=50), min_size=1, max_size=8, unique=True))
    split = draw(st.integers(min_value=0, max_value=len(ids)))
    successful = sorted(ids[:split])
    clusters = []
    if len(successful) >= 2:
        clusters.append(ClusterPrice(members=successful, price=draw(st.floats(min_value=0.0, max_value=40.0))))
    return StepSummary(
        step=draw(st.integers(min_value=0, max_value=23)),
        method=draw(st.sampled_from(["oracle", "admm", "decentralized"])),
        converged=draw(st.booleans()),
        iterations=draw(st.integers(min_value=0, max_value=20000)),
        wall_time=draw(st.floats(min_value=0.0, max_value=100.0)),
        clusters=clusters,
        successful=successful,
        failed=sorted(ids[split:]),
    )


@st.composite
def run_summary_strategy(draw):
    return RunSummary(
        success=True,
        scenario=draw(st.text(min_size=1, max_size=30).filter(lambda s: s.strip())),
        steps=draw(st.lists(step_summary_strategy(), min_size=1, max_size=4)),
        warnings=draw(st.lists(st.text(max_size=40), max_size=3)),
    )


class TestSummaryJson:
    """
    **Feature: p2p-market, Property 32: Run Summary JSON Round Trip**

    For any valid run summary, serializing to JSON and back yields an equal
    summary that passes the schema check.
    """

    @given(summary=run_summary_strategy())
    @settings(max_examples=100)
    def test_round_trip(self, summary):
        restored = summary_from_json(summary_to_json(summary))
        assert restored == summary
        assert validate_summary_schema(restored) == []

    def test_overlap_reported(self):
        summary = RunSummary(success=True, scenario="s", steps=[StepSummary(
            step=0, method="admm", converged=True, iterations=10, wall_time=0.1,
            successful=[1, 2], failed=[2, 3],
        )])
        errors = validate_summary_schema(summary)
        assert len(errors) == 1
        assert "[2]" in errors[0]

    def test_negative_counters_reported(self):
        summary = RunSummary(success=True, scenario="s", steps=[StepSummary(
            step=0, method="admm", converged=False, iterations=-1, wall_time=-0.5,
        )])
        assert len(validate_summary_schema(summary)) == 2

    def test_empty_cluster_reported(self):
        summary = RunSummary(success=True, scenario="s", steps=[StepSummary(
            step=0, method="oracle", converged=True, iterations=0, wall_time=0.0,
            clusters=[ClusterPrice(members=[], price=1.0)],
        )])
        assert validate_summary_schema(summary) == ["steps[0].clusters[0] has no members"]


class TestCsvTables:
    """
    **Feature: p2p-market, Property 33: CSV Tables Keep Every Bit**

    Solution and totals tables carry the documented headers and parse back to
    exactly the values that were written.
    """

    def test_solution_table(self):
        solution = oracle_clear(table_market())
        content = solution_to_csv(solution)
        assert content.splitlines()[0] == ",".join(SOLUTION_HEADER)
        trades = parse_solution_csv(content)
        assert len(trades) == 18
        values = {(t.pair_i, t.pair_j): t.power_kw for t in trades}
        for (i, j), p in values.items():
            assert values[(j, i)] == -p, f"pair ({i}, {j}) lost antisymmetry on re-read"
        assert values == solution.pair_powers.as_dict()

    def test_totals_table(self):
        market = table_market()
        solution = oracle_clear(market)
        content = totals_to_csv(market, solution, market_costs(market, solution))
        lines = content.splitlines()
        assert lines[0] == ",".join(TOTALS_HEADER)
        assert parse_totals_csv(content) == solution.totals
        flags = {int(line.split(",")[0]): line.split(",")[3] for line in lines[1:]}
        assert flags == {1: "1", 2: "0", 3: "1", 4: "1", 5: "0", 6: "1"}

    def test_history_table(self):
        history = [
            LearningRound(round=0, a={1: 0.01, 2: 0.02}, b={1: 3.0, 2: 4.0},
                          totals={1: 0.0, 2: 0.0}, successful=[]),
            LearningRound(round=1, a={1: 0.01, 2: 0.02}, b={1: 3.5, 2: 3.5},
                          totals={1: -2.0, 2: 2.0}, successful=[1, 2]),
        ]
        lines = history_to_csv(history).splitlines()
        assert lines[0] == ",".join(HISTORY_HEADER)
        assert lines[1:] == [
            "0,1,3.0,0.01,0.0,0",
            "0,2,4.0,0.02,0.0,0",
            "1,1,3.5,0.01,-2.0,1",
            "1,2,3.5,0.02,2.0,1",
        ]

    @given(value=st.floats(allow_nan=False, allow_infinity=False))
    @settings(max_examples=100)
    def test_float_precision(self, value):
        history = [LearningRound(round=0, a={1: 1.0}, b={1: value}, totals={1: value}, successful=[])]
        row = history_to_csv(history).splitlines()[1].split(",")
        assert float(row[2]) == value
        assert float(row[4]) == value
