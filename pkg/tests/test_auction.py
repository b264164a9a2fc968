from __future__ import annotations

import math

import numpy as np
import pytest

from maas.auction import (
    AuctionOutcome,
    BidRequest,
    IncrementPolicy,
    Modulation,
    ModulationContext,
    QualifiedMachine,
    QualifiedSet,
    competitive_allocate,
    filter_suppliers,
    recommend_bid,
    rebid_loop,
    run_auction,
    threshold_price,
    unit_threshold_price,
)
from maas.core import Machine, Order, Process, Supplier
from maas.errors import ConfigError, NoSupplierError, PolicyViolationError

from . import oracles


def machine(mid="m", band=(0.4, 0.6), avail=(8.0, 8.0, 8.0), material="pla", min_price=0.0):
    return Machine(mid, Process.FDM, frozenset({material}), (0.1, 0.3), avail, band, min_price)


def order(volume=100.0, hours=5.0, material="pla"):
    return Order("o", volume, {"FDM": hours}, material, Process.FDM, 0.2, 0, 4)


def supplier(sid, rating=4.5, machines=None):
    return Supplier(sid, rating, tuple(machines or [machine(f"{sid}-m")]))


def single(price, sid="s"):
    return QualifiedSet([(supplier(sid), [QualifiedMachine(machine(f"{sid}-m"), price)])])


def test_rating_filter_is_strict():
    req = BidRequest(order(), 4.0)
    assert filter_suppliers(req, [supplier("a", 4.0)]).n == 0
    assert filter_suppliers(req, [supplier("a", 4.1)]).n == 1


def test_availability_sum_check():
    req = BidRequest(order(hours=5.0), 3.0, delivery_days=3)
    # two usable days before the shipping day
    qs = filter_suppliers(req, [supplier("a", machines=[machine(avail=(4.0, 4.0, 0.0))])])
    assert qs.n == 1 and qs.h == 1
    qs = filter_suppliers(req, [supplier("a", machines=[machine(avail=(2.0, 3.0, 9.0))])])
    assert qs.n == 0


def test_no_material_gives_empty_set():
    req = BidRequest(order(material="nylon"), 3.0)
    qs = filter_suppliers(req, [supplier("a"), supplier("b")])
    assert qs.n == 0 and qs.h == 0
    with pytest.raises(NoSupplierError):
        recommend_bid(qs, 0.5)


def test_threshold_price_examples():
    m = machine(band=(0.4, 0.6))
    assert threshold_price(m, order(volume=100.0)) == pytest.approx(50.0)
    assert unit_threshold_price(m, [Modulation.RATING], rating=3.0) == pytest.approx(0.4)
    assert unit_threshold_price(m, [Modulation.RATING], rating=5.0) == pytest.approx(0.6)
    ctx = ModulationContext()
    assert unit_threshold_price(m, ["availability"], availability=ctx.availability_range[1]) == pytest.approx(0.4)
    assert unit_threshold_price(m, ["availability"], availability=ctx.availability_range[0]) == pytest.approx(0.6)
    assert unit_threshold_price(m, ["urgency"], days=ctx.days_range[0]) == pytest.approx(0.6)
    assert threshold_price(machine(min_price=80.0), order(volume=100.0)) == 80.0


def test_modulation_monotone_and_bounded():
    m = machine(band=(0.4, 0.6))
    ratings = np.linspace(3.0, 5.0, 21)
    values = [unit_threshold_price(m, ["rating"], rating=r) for r in ratings]
    assert all(b >= a for a, b in zip(values, values[1:]))
    avail = np.linspace(1.0, 16.0, 31)
    values = [unit_threshold_price(m, ["availability"], availability=c) for c in avail]
    assert all(b <= a for a, b in zip(values, values[1:]))
    mixed = unit_threshold_price(m, ["rating", "availability", "urgency"], rating=4, availability=5, days=3)
    assert 0.4 <= mixed <= 0.6


def test_recommend_bid_examples():
    qs = QualifiedSet([
        (supplier("a"), [QualifiedMachine(machine("a"), 10.0)]),
        (supplier("b"), [QualifiedMachine(machine("b"), 20.0)]),
    ])
    assert recommend_bid(qs, 0.0) == 10.0
    assert recommend_bid(qs, 1.0) == 20.0
    assert recommend_bid(qs, 0.25) == pytest.approx(15.0)
    with pytest.raises(ConfigError):
        recommend_bid(qs, 1.5)


def test_single_supplier_traces():
    rng = np.random.default_rng(0)
    req = BidRequest(order(), 3.0, bid=50.0)
    out = run_auction(req, single(40.0), rng)
    assert out.won and out.threshold_price == 40.0 and out.rounds_used == 1
    assert out.margin > 0
    assert not run_auction(req, single(50.0), rng).won


def test_highest_qualifying_machine_is_chosen():
    s = supplier("a")
    qs = QualifiedSet([(s, [QualifiedMachine(machine("cheap"), 20.0), QualifiedMachine(machine("mid"), 35.0),
                            QualifiedMachine(machine("dear"), 60.0)])])
    out = run_auction(BidRequest(order(), 3.0, bid=50.0), qs, np.random.default_rng(1))
    assert out.machine_id == "mid"


def test_only_first_round_updates_counters():
    a, b = supplier("a"), supplier("b")
    qs = QualifiedSet([(a, [QualifiedMachine(machine("a"), 90.0)]), (b, [QualifiedMachine(machine("b"), 10.0)])])
    rng = np.random.default_rng(3)
    for _ in range(200):
        out = run_auction(BidRequest(order(), 3.0, bid=50.0), qs, rng)
        assert out.won and out.supplier_id == "b"
    total = a.success_counters.first_round_selections + b.success_counters.first_round_selections
    assert total == 200
    assert a.success_counters.first_round_wins == 0
    assert b.success_counters.first_round_wins == b.success_counters.first_round_selections


def test_second_round_odds_follow_success_rate():
    # three suppliers: a never meets the bid and is always tried first by construction
    rng = np.random.default_rng(5)
    picks = {"x": 0, "y": 0}
    for _ in range(6000):
        a, x, y = supplier("a"), supplier("x"), supplier("y")
        x.success_counters.first_round_selections, x.success_counters.first_round_wins = 98, 68  # 0.70
        y.success_counters.first_round_selections, y.success_counters.first_round_wins = 98, 33  # 0.35
        qs = QualifiedSet([(a, [QualifiedMachine(machine("a"), 99.0)]),
                           (x, [QualifiedMachine(machine("x"), 10.0)]),
                           (y, [QualifiedMachine(machine("y"), 10.0)])])
        out = run_auction(BidRequest(order(), 3.0, bid=50.0), qs, rng)
        if out.rounds_used == 2:
            picks[out.supplier_id] += 1
    n = picks["x"] + picks["y"]
    lo, hi = oracles.binomial_band(n, 2 / 3)
    assert lo <= picks["x"] <= hi


def test_round_one_uniform():
    rng = np.random.default_rng(11)
    suppliers = [supplier(f"s{k}") for k in range(20)]
    qs = QualifiedSet([(s, [QualifiedMachine(machine(s.id), 10.0)]) for s in suppliers])
    counts = {s.id: 0 for s in suppliers}
    n = 5000
    for _ in range(n):
        counts[run_auction(BidRequest(order(), 3.0, bid=50.0), qs, rng).first_supplier_id] += 1
    lo, hi = oracles.binomial_band(n, 1 / 20)
    assert all(lo <= c <= hi for c in counts.values())


def test_rebid_traces():
    rng = np.random.default_rng(2)
    qs = single(35.0)
    req = BidRequest(order(), 3.0, bid=30.0)
    out = rebid_loop(req, qs, lambda attempt, prev, q: 40.0 if prev < 40 else prev + 1, rng)
    assert out.won and out.rebids_used == 1 and out.bid == 40.0
    out = rebid_loop(req.with_bid(50.0), qs, IncrementPolicy(), rng)
    assert out.won and out.rebids_used == 0
    out = rebid_loop(BidRequest(order(), 3.0, bid=1.0), qs, lambda a, prev, q: prev + 1.0, rng)
    assert not out.won and out.rebids_used == 4 and out.bid == 5.0
    with pytest.raises(PolicyViolationError):
        rebid_loop(req, qs, lambda a, prev, q: prev, rng)


def test_request_validation():
    with pytest.raises(ConfigError):
        BidRequest(order(), 3.0, bid=0.0)
    with pytest.raises(ConfigError):
        BidRequest(order(), 3.0, delivery_days=1)


def test_competitive_allocator_takes_cheapest():
    qs = QualifiedSet([
        (supplier("a"), [QualifiedMachine(machine("a"), 30.0)]),
        (supplier("b"), [QualifiedMachine(machine("b"), 20.0)]),
    ])
    out = competitive_allocate(qs, 25.0)
    assert out.won and out.supplier_id == "b"
    assert not competitive_allocate(qs, 20.0).won


def test_delight_nonnegative_below_market_value():
    qs = QualifiedSet([
        (supplier("a"), [QualifiedMachine(machine("a"), 30.0)]),
        (supplier("b"), [QualifiedMachine(machine("b"), 20.0)]),
    ])
    rng = np.random.default_rng(4)
    for bid in (21.0, 25.0, 30.0):
        out = run_auction(BidRequest(order(), 3.0, bid=bid), qs, rng)
        assert out.won and out.designer_delight >= 0.0
    assert math.isnan(AuctionOutcome(False).designer_delight)
