import pytest
from hypothesis import given
from hypothesis import strategies as st

from maas.core import (
    Machine,
    Order,
    Process,
    Supplier,
    capability_match,
    cumulative_capacity,
    cumulative_feasible,
    machine_from_dict,
    machine_to_dict,
    order_from_dict,
    order_to_dict,
    supplier_from_dict,
    supplier_to_dict,
)
from maas.errors import ConfigError, HorizonError


def machine(process="FDM", materials=("PLA", "ABS"), res=(100, 300), caps=(4, 6, 2)):
    return Machine("m1", Process(process), frozenset(materials), res, caps, (0.4, 0.6), 5.0)


def order(process="FDM", material="PLA", res=200.0):
    return Order("o1", 10.0, {process: 3.0}, material, Process(process), res, 0, 3)


def test_capability_nested_attributes():
    assert capability_match(order(), machine())


def test_capability_process_mismatch():
    assert not capability_match(order("SLA", "Resin"), machine(materials=("PLA",)))


def test_capability_resolution_outside_range():
    assert not capability_match(order(res=50), machine(materials=("PLA",)))


def test_capability_inclusive_bounds():
    assert capability_match(order(res=100), machine())
    assert capability_match(order(res=300), machine())


def test_cumulative_capacity():
    m = machine()
    assert cumulative_capacity(m, 2) == 10
    assert cumulative_capacity(m, 0) == 0
    assert cumulative_capacity(m, 3) == 12
    with pytest.raises(HorizonError):
        cumulative_capacity(m, 4)


def test_cumulative_feasible_examples():
    assert cumulative_feasible([4, 6], [(4, 1)])
    assert not cumulative_feasible([4, 6], [(5, 1)])
    assert cumulative_feasible([4, 6], [(3, 1), (6, 2)])
    with pytest.raises(HorizonError):
        cumulative_feasible([4, 6], [(1, 3)])


caps_st = st.lists(st.floats(0, 12, allow_nan=False), min_size=1, max_size=6)


@given(caps_st)
def test_cumulative_capacity_monotone(caps):
    values = [cumulative_capacity(caps, q) for q in range(len(caps) + 1)]
    assert all(b >= a for a, b in zip(values, values[1:]))


@given(caps_st, st.data())
def test_removing_a_job_keeps_feasibility(caps, data):
    jobs = data.draw(
        st.lists(st.tuples(st.floats(0.5, 8), st.integers(1, len(caps))), min_size=1, max_size=6)
    )
    if cumulative_feasible(caps, jobs):
        for k in range(len(jobs)):
            assert cumulative_feasible(caps, jobs[:k] + jobs[k + 1:])


def test_invariants_rejected():
    with pytest.raises(ConfigError):
        Machine("m", Process.FDM, frozenset(), (300, 100), (1,))
    with pytest.raises(ConfigError):
        Machine("m", Process.FDM, frozenset(), (100, 300), (1,), (0.9, 0.1))
    with pytest.raises(ConfigError):
        Supplier("s", 6.0, (machine(),))
    with pytest.raises(ConfigError):
        Supplier("s", 3.0, ())
    with pytest.raises(ConfigError):
        Order("o", 1.0, {"FDM": 1.0}, "PLA", Process.FDM, 100, 3, 3)


def test_json_roundtrip():
    m = machine()
    assert machine_from_dict(machine_to_dict(m)) == m
    o = order()
    assert order_from_dict(order_to_dict(o)) == o
    s = Supplier("s1", 4.2, (m,))
    doc = supplier_to_dict(s)
    assert set(doc) >= {"id", "rating", "machines", "size_class", "location", "success_counters"}
    assert supplier_from_dict(doc) == s
