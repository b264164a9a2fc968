import pytest
from hypothesis import given
from hypothesis import strategies as st

from maas.errors import ConfigError, InvalidRangeError, MissingAttributeError, UnknownLabelError
from maas.utility import (
    EXAMPLE_ORDER_PROFILE,
    EXAMPLE_SUPPLIER_PROFILE,
    ORDER_PRICE_CURVE,
    ORDER_RATING_CURVE,
    ORDER_SIZE_CURVE,
    ContractTerms,
    UtilityCurve,
    UtilityProfile,
    contract_utility,
    eval_curve,
    haversine_miles,
    normalize,
    rank_contracts,
)


def test_normalize():
    assert normalize(50, 50, 500) == 0.0
    assert normalize(500, 50, 500) == 1.0
    assert normalize(400, 50, 500) == pytest.approx(0.7778, abs=5e-5)
    with pytest.raises(InvalidRangeError):
        normalize(1, 5, 5)


def test_eval_curve_examples():
    # normalize 750 in [640, 880] -> 0.4583, then 0.922x^2 - 1.962x + 1.033
    x = (750 - 640) / 240
    assert eval_curve(ORDER_PRICE_CURVE, 750) == pytest.approx(0.922 * x * x - 1.962 * x + 1.033)
    # quoted as 0.3275 with x rounded to 0.4583 first
    assert eval_curve(ORDER_PRICE_CURVE, 750) == pytest.approx(0.3275, abs=1e-4)
    assert eval_curve(ORDER_SIZE_CURVE, "large") == 1.0
    assert eval_curve(ORDER_RATING_CURVE, 1) == 0.0
    with pytest.raises(UnknownLabelError):
        eval_curve(ORDER_SIZE_CURVE, "huge")


def test_worked_examples():
    terms = ContractTerms("d1", "s2", 750.0, 4, "aluminum", "SLS-metal", 200.0)
    u_order = contract_utility(EXAMPLE_ORDER_PROFILE, terms, {"distance": 400, "size": "large", "rating": 3})
    u_supplier = contract_utility(EXAMPLE_SUPPLIER_PROFILE, terms, {"urgency": 4, "revenue": 750})
    assert u_order == pytest.approx(0.418, abs=1e-3)
    assert u_supplier == pytest.approx(0.611, abs=1e-3)
    assert 0 <= u_order + u_supplier <= 2


def test_degenerate_profile():
    profile = UtilityProfile(((1.0, UtilityCurve.categorical({"x": 1.0}), "tag"),))
    assert contract_utility(profile, None, {"tag": "x"}) == 1.0


def test_missing_attribute():
    with pytest.raises(MissingAttributeError):
        contract_utility(EXAMPLE_ORDER_PROFILE, None, {"distance": 100})


def test_weights_must_sum_to_one():
    with pytest.raises(ConfigError):
        UtilityProfile(((0.5, ORDER_SIZE_CURVE, "size"),))


def test_price_utility_non_increasing():
    prices = [640 + 240 * k / 99 for k in range(100)]
    us = [contract_utility(EXAMPLE_ORDER_PROFILE, None, {"distance": 100, "size": "small", "rating": 4, "price": p}) for p in prices]
    assert all(b <= a + 1e-12 for a, b in zip(us, us[1:]))


class C:
    def __init__(self, o, s, p):
        self.order_id, self.supplier_id, self.price = o, s, p


def test_rank_contracts():
    c1, c2 = C("a", "s", 1.0), C("b", "s", 1.0)
    assert rank_contracts([(c1, 0.3), (c2, 0.7)]) == [c2, c1]
    assert rank_contracts([(c2, 0.5), (c1, 0.5)]) == [c1, c2]
    assert rank_contracts([]) == []


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("xyz"), st.floats(1, 5), st.floats(0, 2)), max_size=12))
def test_rank_is_idempotent_permutation(rows):
    items = [(C(o, s, p), u) for o, s, p, u in rows]
    ranked = rank_contracts(items)
    assert sorted(map(id, ranked)) == sorted(id(c) for c, _ in items)
    util = {id(c): u for c, u in items}
    assert rank_contracts([(c, util[id(c)]) for c in ranked]) == ranked


def test_curve_json_roundtrip():
    for curve in (ORDER_PRICE_CURVE, ORDER_SIZE_CURVE, UtilityCurve("monotone_table", table=((0, 0), (1, 1)))):
        assert UtilityCurve.from_dict(curve.to_dict()) == curve
    assert UtilityProfile.from_dict(EXAMPLE_ORDER_PROFILE.to_dict()) == EXAMPLE_ORDER_PROFILE


def test_haversine():
    # Raleigh to Atlanta, roughly 356 miles great-circle
    assert haversine_miles((35.78, -78.64), (33.75, -84.39)) == pytest.approx(356, abs=10)
