"""
Property-based tests for id lists and CSV table parsing
"""
import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from p2p_market.errors import ScenarioParseError
from p2p_market.parsers import (
    parse_feeder_series,
    parse_prosumer_ids,
    parse_solution_csv,
    parse_totals_csv,
)


# Strategies for generating test data
id_strategy = st.integers(min_value=1, max_value=999)
separator_strategy = st.sampled_from([",", ", ", " ", "\n", ",\n"])


class TestProsumerIdParsing:
    """
    **Feature: p2p-market, Property 30: Id List Parsing**

    For any list of unique ids joined with commas, spaces or newlines,
    parsing returns the same ids in input order.
    """

    @given(ids=st.lists(id_strategy, min_size=1, max_size=20, unique=True), sep=separator_strategy)
    @settings(max_examples=100)
    def test_round_trip(self, ids, sep):
        text = sep.join(str(i) for i in ids)
        assert parse_prosumer_ids(text) == ids

    @given(ids=st.lists(id_strategy, min_size=1, max_size=10))
    @settings(max_examples=100)
    def test_duplicates_removed(self, ids):
        parsed = parse_prosumer_ids(",".join(str(i) for i in ids))
        assert len(parsed) == len(set(ids))
        assert parsed == list(dict.fromkeys(ids))

    def test_empty(self):
        assert parse_prosumer_ids("") == []
        assert parse_prosumer_ids("   \n") == []

    def test_invalid_id(self):
        with pytest.raises(ScenarioParseError):
            parse_prosumer_ids("2,five")


class TestTableParsing:
    """
    **Feature: p2p-market, Property 31: Output Tables Parse Back**

    Solution, totals and feeder tables parse into typed rows and bad rows are
    reported with their line number.
    """

    def test_solution_rows(self):
        content = "pair_i,pair_j,power_kw,price\n1,4,-100.0,8.09\n4,1,100.0,8.09\n"
        trades = parse_solution_csv(content)
        assert [(t.pair_i, t.pair_j, t.power_kw) for t in trades] == [(1, 4, -100.0), (4, 1, 100.0)]

    def test_bad_solution_row(self):
        content = "pair_i,pair_j,power_kw,price\n1,4,-100.0,8.09\n4,1,lots,8.09\n"
        with pytest.raises(ScenarioParseError) as info:
            parse_solution_csv(content)
        assert info.value.line == 3

    def test_totals(self):
        content = "prosumer,role,total_kw,success,cost\n1,seller,-105.0,1,-671.0\n2,seller,0.0,0,0.0\n"
        assert parse_totals_csv(content) == {1: -105.0, 2: 0.0}

    def test_blank_lines_skipped(self):
        content = "prosumer,role,total_kw,success,cost\n\n3,seller,-90.0,1,-628.74\n"
        assert parse_totals_csv(content) == {3: -90.0}

    @given(
        rows=st.lists(
            st.tuples(
                id_strategy,
                st.integers(min_value=0, max_value=23),
                st.floats(min_value=0.0, max_value=10.0),
                st.floats(min_value=0.0, max_value=10.0),
            ),
            min_size=1,
            max_size=20,
            unique_by=lambda r: (r[0], r[1]),
        )
    )
    @settings(max_examples=100)
    def test_feeder_series(self, rows):
        content = "node,hour,load_kw,generation_kw\n" + "".join(
            f"{n},{h},{load!r},{gen!r}\n" for n, h, load, gen in rows
        )
        series = parse_feeder_series(content)
        for n, h, load, gen in rows:
            assert series[n][h] == (load, gen)

    def test_negative_load(self):
        with pytest.raises(ScenarioParseError) as info:
            parse_feeder_series("node,hour,load_kw,generation_kw\n1,12,-1.0,2.0\n")
        assert info.value.line == 2
