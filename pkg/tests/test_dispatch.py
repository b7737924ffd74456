import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evgame.dispatch import apply_charge, edf_allocate, edf_order, estimate_finish, water_fill

from conftest import GRID, make_ev

PH = 6.6 * 0.25


def greedy_reference(evs, budget, eps):
    """Straight re-implementation: sort keys spelled out, serve in turn."""
    keyed = [((ev.deadline_slot, -ev.remaining_kwh, ev.id), ev) for ev in evs]
    keyed.sort(key=lambda kv: kv[0])
    out = {}
    for _, ev in keyed:
        want = min(ev.max_rate_kw * GRID.slot_hours, ev.remaining_kwh / eps)
        out[ev.id] = min(want, budget)
        budget -= out[ev.id]
    return out


def test_edf_examples():
    a, b = make_ev(0, v=60), make_ev(1, v=40)
    assert edf_allocate([a, b], 0.0, GRID, 0.9) == {1: 0.0, 0: 0.0}
    assert edf_allocate([a, b], PH, GRID, 0.9) == {1: PH, 0: 0.0}
    with pytest.raises(ValueError):
        edf_allocate([a], -1.0, GRID, 0.9)


def test_edf_ties():
    a, b, c = make_ev(5, v=50, soc=0.9), make_ev(2, v=50, soc=0.2), make_ev(1, v=50, soc=0.2)
    assert [ev.id for ev in edf_order([a, b, c])] == [1, 2, 5]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(34, 90), st.floats(0, 0.999)), min_size=1, max_size=5),
       st.floats(0, 10))
def test_edf_matches_greedy_and_conserves(specs, budget):
    evs = [make_ev(i, v=v, soc=s) for i, (v, s) in enumerate(specs)]
    got = edf_allocate(evs, budget, GRID, 0.9)
    ref = greedy_reference(evs, budget, 0.9)
    assert got.keys() == ref.keys()
    for i in got:
        assert got[i] == pytest.approx(ref[i], abs=1e-12)
    caps = sum(min(PH, ev.remaining_kwh / 0.9) for ev in evs)
    assert sum(got.values()) == pytest.approx(min(budget, caps), abs=1e-9)


def test_apply_charge_examples():
    ev = make_ev(soc=0.5)
    assert apply_charge(ev, 0.0, 0.9) == 0.0 and ev.soc == 0.5
    assert apply_charge(ev, 1.65, 0.9) == 0.0
    assert ev.soc == pytest.approx(0.537125, abs=1e-12)
    ev = make_ev(soc=0.99)
    unused = apply_charge(ev, 1.65, 0.9)
    assert ev.soc == 1.0
    # overshoot 0.027125 of 40 kWh on the battery side, divided by efficiency
    assert unused == pytest.approx(0.027125 * 40 / 0.9, abs=1e-12)
    assert unused == pytest.approx(1.205556, abs=1e-6)
    with pytest.raises(ValueError):
        apply_charge(ev, -0.1, 0.9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.lists(st.floats(0, 5), max_size=10))
def test_soc_monotone_and_capped(soc, deliveries):
    ev = make_ev(soc=soc)
    last = ev.soc
    for d in deliveries:
        back = apply_charge(ev, d, 0.9)
        assert 0 <= back <= d + 1e-12
        assert last <= ev.soc <= 1.0
        last = ev.soc


def test_water_fill_flattens():
    base = np.array([10.0, 30.0, 20.0, 40.0])
    c = water_fill(base, np.full(4, 100.0), 15.0, 1.0)
    assert c.sum() == pytest.approx(15.0)
    assert c == pytest.approx([12.5, 0.0, 2.5, 0.0])
    assert water_fill(base, np.full(4, 1.0), 100.0, 1.0).tolist() == [1.0] * 4
    assert water_fill(base, np.full(4, 1.0), 0.0, 1.0).tolist() == [0.0] * 4
    assert len(water_fill(np.zeros(0), np.zeros(0), 5.0, 1.0)) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 50)), min_size=1, max_size=12),
       st.floats(0, 1))
def test_water_fill_level_structure(cols, frac):
    base = np.array([b for b, _ in cols])
    room = np.array([r for _, r in cols])
    energy = frac * room.sum() * 0.25
    c = water_fill(base, room, energy, 0.25)
    assert c.sum() * 0.25 == pytest.approx(energy, abs=1e-7)
    assert np.all(c >= -1e-12) and np.all(c <= room + 1e-12)
    partial = (c > 1e-7) & (c < room - 1e-7)
    if partial.any():
        level = (base + c)[partial][0]
        assert np.allclose((base + c)[partial], level, atol=1e-6)
        capped = (c >= room - 1e-7) & (room > 1e-7)
        assert np.all(base[(c <= 1e-7) & (room > 1e-7) & ~capped] >= level - 1e-6)
        assert np.all((base + room)[capped] <= level + 1e-6)


def flat_inputs(n=96, base=50.0):
    return np.full(n, base), np.zeros((1, n))


def test_finish_three_slot_hand_case():
    # 3 slots of full-rate charging, planned from slot 41 up to the deadline
    soc = 1 - 3 * PH * 0.9 / 40
    ev = make_ev(soc=soc, a=30, v=44)
    base, ren = flat_inputs()
    est = estimate_finish([ev], 40, GRID, base, ren, 120.0, 0.9)
    assert est.finish[0] == 43
    assert est.horizon == (41, 44)
    assert np.ptp(est.planned_aggregate_kw) <= 1e-9
    assert est.planned_charging_kw == pytest.approx([6.6] * 3)


def test_finish_zero_demand_is_now():
    ev = make_ev(soc=1.0)
    base, ren = flat_inputs()
    assert estimate_finish([ev], 40, GRID, base, ren, 120.0, 0.9).finish == {0: 40}
    assert estimate_finish([ev], 40, GRID, base, ren, 120.0, 0.9, {0: 37}).finish == {0: 37}
    assert estimate_finish([], 40, GRID, base, ren, 120.0, 0.9).finish == {}


def test_urgent_ev_is_served_first():
    urgent = make_ev(0, soc=1 - 2 * PH * 0.9 / 40, a=30, v=43)
    relaxed = make_ev(1, soc=0.2, a=30, v=80)
    base, ren = flat_inputs()
    est = estimate_finish([relaxed, urgent], 40, GRID, base, ren, 120.0, 0.9)
    assert est.horizon == (41, 43)
    assert est.finish[0] == 42


def test_unfinished_ev_gets_its_deadline():
    ev = make_ev(soc=0.0, a=30, v=45)
    base, ren = flat_inputs()
    assert estimate_finish([ev], 40, GRID, base, ren, 120.0, 0.9).finish[0] == 45


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(1, 50), st.floats(0, 1)),
                min_size=1, max_size=6),
       st.floats(0, 110), st.floats(0, 5))
def test_finish_within_window(specs, base_kw, ren_kwh):
    slot = 40
    evs = [make_ev(i, i % 2, a=a, v=min(slot + w, 95), soc=s)
           for i, (a, w, s) in enumerate(specs)]
    n = GRID.slot_count
    est = estimate_finish(evs, slot, GRID, np.full(n, base_kw), np.full((2, n), ren_kwh),
                          120.0, 0.9)
    for ev in evs:
        assert ev.arrival_slot <= est.finish[ev.id] <= ev.deadline_slot


@pytest.mark.parametrize("seed", range(5))
def test_flat_plan_with_constant_base(seed):
    rng = np.random.default_rng(seed)
    evs = [make_ev(i, a=30, v=int(rng.integers(48, 90)), soc=float(rng.uniform(0, 0.8)))
           for i in range(6)]
    base, ren = flat_inputs(base=float(rng.uniform(20, 90)))
    est = estimate_finish(evs, 40, GRID, base, ren, 120.0, 0.9)
    assert np.ptp(est.planned_aggregate_kw) <= 1e-6
