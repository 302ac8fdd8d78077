"""
Property-based tests for scenario validation
"""
import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from p2p_market.models import (
    LearningPolicy,
    ProsumerOverride,
    Role,
    ScenarioProsumer,
    ScenarioSpec,
    ScenarioStep,
    TradeWeight,
)
from p2p_market.validators import (
    validate_edges,
    validate_prosumers,
    validate_scenario,
    validate_step,
    validate_weights,
)


def row(i, role, bound, a=0.01, b=5.0, **extra):
    return ScenarioProsumer(
        id=i, role=role, a=a, b=b,
        p_tr_min=min(bound, 0.0), p_tr_max=max(bound, 0.0), **extra
    )


def small_spec(**changes):
    data = dict(
        name="small",
        prosumers=[
            row(1, Role.SELLER, -50.0),
            row(2, Role.SELLER, -60.0),
            row(3, Role.BUYER, 40.0),
            row(4, Role.BUYER, 70.0),
        ],
        edges=[(1, 3), (2, 4)],
    )
    data.update(changes)
    return ScenarioSpec(**data)


ROLES = {1: Role.SELLER, 2: Role.SELLER, 3: Role.BUYER, 4: Role.BUYER}


class TestScenarioValidation:
    """
    **Feature: p2p-market, Property 34: Scenario Cross-Reference Validation**

    Valid scenarios produce no errors; each kind of broken reference is
    reported against the field that holds it.
    """

    def test_valid(self):
        errors, warnings = validate_scenario(small_spec())
        assert errors == []
        assert warnings == []

    def test_complete_graph_warning(self):
        errors, warnings = validate_scenario(small_spec(edges=None))
        assert errors == []
        assert any("complete" in w for w in warnings)

    def test_no_prosumers(self):
        errors, _ = validate_scenario(small_spec(prosumers=[]))
        assert [e.field for e in errors] == ["prosumers"]

    def test_duplicate_ids(self):
        prosumers = [row(1, Role.SELLER, -50.0), row(1, Role.BUYER, 40.0)]
        error = validate_prosumers(small_spec(prosumers=prosumers, edges=[]))
        assert error is not None
        assert "[1]" in error.message

    def test_ramp_order(self):
        prosumers = [row(1, Role.SELLER, -50.0, ramp_min=5.0, ramp_max=-5.0)]
        error = validate_prosumers(small_spec(prosumers=prosumers, edges=[]))
        assert error is not None
        assert error.field == "prosumers[1]"

    def test_no_steps(self):
        errors, _ = validate_scenario(small_spec(steps=[]))
        assert [e.field for e in errors] == ["steps"]

    def test_unknown_learners(self):
        spec = small_spec(learning=LearningPolicy(learners=[2, 9]))
        errors, _ = validate_scenario(spec)
        assert [e.field for e in errors] == ["learning.learners"]
        assert "[9]" in errors[0].message

    def test_unknown_override(self):
        spec = small_spec(steps=[ScenarioStep(overrides=[ProsumerOverride(id=7, b=1.0)])])
        errors, _ = validate_scenario(spec)
        assert [e.field for e in errors] == ["steps[0].overrides"]

    def test_override_breaks_bounds(self):
        step = ScenarioStep(overrides=[ProsumerOverride(id=3, p_tr_min=-5.0)])
        errors = validate_step(small_spec(), 0, step)
        assert [e.field for e in errors] == ["steps[0].overrides[3]"]

    def test_role_flip_checks_step_edges(self):
        flip = ProsumerOverride(id=1, role=Role.BUYER, p_tr_min=0.0, p_tr_max=30.0)
        # 1 now buys, so (1, 3) joins two buyers
        errors = validate_step(small_spec(), 1, ScenarioStep(overrides=[flip]))
        assert [e.field for e in errors] == ["steps[1].edges"]
        ok = validate_step(small_spec(), 1, ScenarioStep(overrides=[flip], edges=[(1, 2), (2, 4)]))
        assert ok == []

    def test_warnings_do_not_block(self):
        spec = small_spec(zero_extend=False, learning=LearningPolicy(admm_throughout=True))
        errors, warnings = validate_scenario(spec)
        assert errors == []
        assert len(warnings) == 2


class TestEdgeValidation:
    """
    **Feature: p2p-market, Property 35: Edges And Weights Respect Roles**

    Same-role edges, unknown endpoints, repeated edges and weights on
    non-edges are all reported.
    """

    @given(i=st.sampled_from([1, 2]), j=st.sampled_from([3, 4]))
    @settings(max_examples=20)
    def test_cross_role_edge(self, i, j):
        assert validate_edges([(i, j)], ROLES, "edges") == []
        assert validate_edges([(j, i)], ROLES, "edges") == []

    @given(pair=st.sampled_from([(1, 2), (2, 1), (3, 4), (4, 3)]))
    @settings(max_examples=20)
    def test_same_role_edge(self, pair):
        errors = validate_edges([pair], ROLES, "edges")
        assert len(errors) == 1
        assert "joins two" in errors[0].message

    def test_unknown_endpoint(self):
        errors = validate_edges([(1, 9)], ROLES, "edges")
        assert len(errors) == 1
        assert "unknown" in errors[0].message

    def test_repeated_edge(self):
        errors = validate_edges([(1, 3), (3, 1)], ROLES, "edges")
        assert len(errors) == 1
        assert "twice" in errors[0].message

    def test_none_means_complete(self):
        assert validate_edges(None, ROLES, "edges") == []

    def test_weight_on_non_edge(self):
        weights = [TradeWeight(i=1, j=3, d=0.5), TradeWeight(i=1, j=4, d=0.5)]
        errors = validate_weights(weights, [(1, 3), (2, 4)], ROLES, "weights")
        assert len(errors) == 1
        assert "d_1,4" in errors[0].message

    def test_weight_on_complete_graph(self):
        assert validate_weights([TradeWeight(i=4, j=1, d=0.2)], None, ROLES, "weights") == []
        errors = validate_weights([TradeWeight(i=3, j=4, d=0.2)], None, ROLES, "weights")
        assert len(errors) == 1
