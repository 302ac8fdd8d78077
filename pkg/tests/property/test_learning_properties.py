"""
Property-based tests for cost-parameter learning
"""
import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from p2p_market.clearing import oracle_clear, theorem1_interior, uniform_price_clearing
from p2p_market.errors import NotConvergedInRounds, VolumeRegressionError
from p2p_market.graph import build_market
from p2p_market.learning import (
    boost_parameters,
    learn_boost_volume,
    learn_successful_trading,
    shift_b,
)
from p2p_market.models import LearningPolicy, Prosumer, Role


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


def interior_pair(a: float = 0.01):
    return build_market([
        Prosumer(id=1, role=Role.SELLER, a=a, b=10.0, p_tr_min=-1e5, p_tr_max=0.0),
        Prosumer(id=2, role=Role.BUYER, a=a, b=2.0, p_tr_min=0.0, p_tr_max=1e5),
    ])


@st.composite
def interior_prosumers(draw):
    """Unbounded market whose interior optimum has every seller selling and every buyer buying"""
    count = draw(st.integers(min_value=2, max_value=6))
    a = [draw(st.floats(min_value=0.002, max_value=0.02)) for _ in range(count)]
    sellers = draw(st.integers(min_value=1, max_value=count - 1))
    b_sellers = [draw(st.floats(min_value=9.0, max_value=12.0)) for _ in range(sellers)]
    b_buyers = [draw(st.floats(min_value=1.0, max_value=4.0)) for _ in range(count - sellers)]
    prosumers = []
    for k, (ak, bk) in enumerate(zip(a, b_sellers + b_buyers)):
        if k < sellers:
            prosumers.append(Prosumer(id=k + 1, role=Role.SELLER, a=ak, b=bk, p_tr_min=-1e6, p_tr_max=0.0))
        else:
            prosumers.append(Prosumer(id=k + 1, role=Role.BUYER, a=ak, b=bk, p_tr_min=0.0, p_tr_max=1e6))
    return prosumers


class TestSuccessfulTrading:
    """
    **Feature: p2p-market, Property 27: Learning Until Every Prosumer Trades**

    Failed sellers raise b, failed buyers lower it, and the loop stops once
    everybody trades.
    """

    def test_fixed_schedule_for_two_learners(self):
        policy = LearningPolicy(delta_b=0.5, max_rounds=8, learners=[2, 5], fixed_rounds=True,
                                confirm_with_admm=False)
        outcome = learn_successful_trading(table_market(), policy=policy)
        assert outcome.rounds == 8
        assert outcome.market.prosumer(2).b == pytest.approx(7.53)
        assert outcome.market.prosumer(5).b == pytest.approx(4.53)
        assert outcome.converged
        assert outcome.solution.failed() == []
        assert outcome.history[0].successful == [1, 3, 4, 6]

    def test_stops_when_everyone_trades(self):
        policy = LearningPolicy(delta_b=0.5, max_rounds=20, confirm_with_admm=False)
        outcome = learn_successful_trading(table_market(), policy=policy)
        assert outcome.converged
        assert outcome.rounds <= 8
        assert outcome.history[-1].successful == [1, 2, 3, 4, 5, 6]

    def test_history_monotone(self):
        policy = LearningPolicy(delta_b=0.25, max_rounds=20, confirm_with_admm=False)
        outcome = learn_successful_trading(table_market(), policy=policy)
        b2 = [record.b[2] for record in outcome.history]
        b5 = [record.b[5] for record in outcome.history]
        assert all(x <= y for x, y in zip(b2, b2[1:])), "failed seller b must not fall"
        assert all(x >= y for x, y in zip(b5, b5[1:])), "failed buyer b must not rise"

    def test_already_trading(self):
        market = interior_pair()
        outcome = learn_successful_trading(market, policy=LearningPolicy(confirm_with_admm=False))
        assert outcome.rounds == 0
        assert outcome.market == market

    def test_round_cap(self):
        policy = LearningPolicy(delta_b=0.01, max_rounds=2, confirm_with_admm=False)
        outcome = learn_successful_trading(table_market(), policy=policy)
        assert not outcome.converged
        assert outcome.rounds == 2
        with pytest.raises(NotConvergedInRounds) as info:
            learn_successful_trading(table_market(), policy=policy, strict=True)
        assert info.value.outcome.rounds == 2

    def test_custom_clearing(self):
        calls = []

        def clear(market):
            calls.append(market)
            return oracle_clear(market)

        learn_successful_trading(interior_pair(), policy=LearningPolicy(), clear=clear)
        assert len(calls) == 1

    @given(delta=st.floats(min_value=0.01, max_value=2.0))
    @settings(max_examples=50)
    def test_shift_direction(self, delta: float):
        seller = Prosumer(id=1, role=Role.SELLER, a=0.01, b=5.0, p_tr_min=-10.0, p_tr_max=0.0)
        buyer = Prosumer(id=2, role=Role.BUYER, a=0.01, b=5.0, p_tr_min=0.0, p_tr_max=10.0)
        assert shift_b(seller, delta).b == pytest.approx(5.0 + delta)
        assert shift_b(buyer, delta).b == pytest.approx(5.0 - delta)


class TestMarginalDirection:
    """
    **Feature: p2p-market, Property 28: Parameter Changes Move Totals The Right Way**

    With everyone interior, lowering a buyer's b raises its purchase and
    raising a seller's b deepens its sale.
    """

    @given(prosumers=interior_prosumers(), delta=st.floats(min_value=0.01, max_value=1.0))
    @settings(max_examples=100)
    def test_direction(self, prosumers, delta):
        base = theorem1_interior(prosumers)
        buyer = next(p for p in prosumers if p.role is Role.BUYER)
        seller = next(p for p in prosumers if p.role is Role.SELLER)

        cheaper = [p.with_params(b=p.b - delta) if p.id == buyer.id else p for p in prosumers]
        assert theorem1_interior(cheaper).totals[buyer.id] > base.totals[buyer.id]

        dearer = [p.with_params(b=p.b + delta) if p.id == seller.id else p for p in prosumers]
        assert theorem1_interior(dearer).totals[seller.id] < base.totals[seller.id]


class TestVolumeBoost:
    """
    **Feature: p2p-market, Property 29: Scaling a Scales Volumes**

    Dividing every a by gamma on an interior market keeps the price and
    multiplies every total by gamma.
    """

    @given(prosumers=interior_prosumers(), gamma=st.floats(min_value=1.1, max_value=5.0))
    @settings(max_examples=100)
    def test_homogeneity(self, prosumers, gamma):
        before = uniform_price_clearing(prosumers)
        after = uniform_price_clearing([p.with_params(a=p.a / gamma) for p in prosumers])
        assert after.price == pytest.approx(before.price, rel=1e-9)
        for p in prosumers:
            assert after.totals[p.id] == pytest.approx(gamma * before.totals[p.id], rel=1e-9)

    def test_interior_pair(self):
        outcome = learn_boost_volume(interior_pair(), policy=LearningPolicy(kind="boost_volume", gamma=2.0))
        assert outcome.before[2] == pytest.approx(400.0 / 2.0)
        assert outcome.after[2] == pytest.approx(400.0)
        assert outcome.prices_before == pytest.approx([6.0])
        assert outcome.prices_after == pytest.approx([6.0])
        assert outcome.regressions == []

    def test_bound_pins_total(self):
        market = build_market([
            Prosumer(id=1, role=Role.SELLER, a=0.01, b=10.0, p_tr_min=-50.0, p_tr_max=0.0),
            Prosumer(id=2, role=Role.BUYER, a=0.01, b=2.0, p_tr_min=0.0, p_tr_max=50.0),
        ])
        outcome = learn_boost_volume(market, policy=LearningPolicy(kind="boost_volume"))
        assert outcome.before == outcome.after == {1: -50.0, 2: 50.0}

    def test_regenerated_range(self):
        policy = LearningPolicy(kind="boost_volume", a_range=(0.002, 0.006), seed=3)
        boosted = boost_parameters(table_market(), policy)
        assert all(0.002 <= p.a <= 0.006 for p in boosted.prosumers)
        again = boost_parameters(table_market(), policy)
        assert [p.a for p in again.prosumers] == [p.a for p in boosted.prosumers]

    def test_opt_in_only(self):
        policy = LearningPolicy(kind="boost_volume", learners=[1], gamma=4.0)
        boosted = boost_parameters(table_market(), policy)
        assert boosted.prosumer(1).a == pytest.approx(0.0031 / 4.0)
        assert boosted.prosumer(2).a == 0.0074

    def test_strict_pure_gamma_passes(self):
        policy = LearningPolicy(kind="boost_volume", gamma=3.0)
        outcome = learn_boost_volume(interior_pair(), policy=policy, clear=oracle_clear, strict=True)
        assert outcome.after[2] == pytest.approx(3.0 * outcome.before[2])
        assert outcome.regressions == []

    def test_strict_regression_raises(self):
        # cheaper seller 1 lowers the price and seller 3 sells less
        market = build_market([
            Prosumer(id=1, role=Role.SELLER, a=0.01, b=10.0, p_tr_min=-1e5, p_tr_max=0.0),
            Prosumer(id=2, role=Role.BUYER, a=0.01, b=2.0, p_tr_min=0.0, p_tr_max=1e5),
            Prosumer(id=3, role=Role.SELLER, a=0.01, b=10.0, p_tr_min=-1e5, p_tr_max=0.0),
        ])
        policy = LearningPolicy(kind="boost_volume", learners=[1], gamma=4.0)
        lenient = learn_boost_volume(market, policy=policy, clear=oracle_clear)
        assert lenient.regressions == [3]
        assert lenient.before[3] == pytest.approx(-400.0 / 3.0, abs=1e-6)
        assert lenient.after[3] == pytest.approx(-200.0 / 3.0, abs=1e-6)
        with pytest.raises(VolumeRegressionError) as info:
            learn_boost_volume(market, policy=policy, clear=oracle_clear, strict=True)
        assert info.value.regressions == [3]
        assert info.value.outcome.after == lenient.after
