import json
from pathlib import Path

import numpy as np
import pytest

from evgame import cost_game, engine
from evgame.data_io import ALGORITHMS, ScenarioConfig

from conftest import flat_series, make_ev

GOLDEN = Path(__file__).parent / "golden" / "proposed_n25_m2_seed0.json"


@pytest.fixture(scope="module")
def default_run(bundled_series):
    return engine.run(ScenarioConfig(rng_seed=0), bundled_series)


def test_empty_fleet():
    cfg = ScenarioConfig(n_evs=1)
    res = engine.run(cfg, flat_series(), fleet=[])
    assert res.total_cost == 0.0 and res.outcomes == []
    assert all(r["q_queue"] == 0.0 and r["z_queue"] == 0.0 for r in res.slot_records)
    assert res.terminal_q == [0.0, 0.0]


def test_single_ev_with_free_energy_is_fully_charged():
    cfg = ScenarioConfig(n_evs=1, n_stations=1)
    res = engine.run(cfg, flat_series(price=0.0), [make_ev(soc=0.3, a=30, v=60)])
    (out,) = res.outcomes
    assert out.unmet_kwh == 0.0
    assert out.delivered_kwh == pytest.approx(0.7 * 40)
    assert res.terminal_q == [0.0] and res.removed_q_kwh == 0.0
    assert res.total_cost == 0.0
    assert out.arrival_slot <= out.finish_slot <= out.final_deadline_slot


def test_golden_totals(default_run):
    golden = json.loads(GOLDEN.read_text())
    summary = default_run.summary()
    for key in ("total_cost", "total_purchase_kwh", "mean_qos", "total_demand_kwh",
                "total_unmet_kwh", "terminal_q_total", "removed_q_kwh"):
        assert summary[key] == pytest.approx(golden[key], rel=1e-9, abs=1e-9), key
    assert summary["n_evs"] == golden["n_evs"]


def test_determinism(bundled_series, default_run):
    again = engine.run(ScenarioConfig(rng_seed=0), bundled_series)
    assert again.slot_records == default_run.slot_records
    assert again.ev_rows() == default_run.ev_rows()


def test_accounting(default_run):
    eps = default_run.config.charging_efficiency
    for r in default_run.slot_records:
        assert r["available_kwh"] == pytest.approx(r["purchase_kwh"] + r["renewable_used_kwh"])
        assert r["delivered_kwh"] <= r["available_kwh"] + 1e-9
        assert r["renewable_used_kwh"] <= r["renewable_kwh"] + 1e-12
    battery = sum(o.delivered_kwh for o in default_run.outcomes)
    grid_side = sum(r["delivered_kwh"] for r in default_run.slot_records)
    assert battery == pytest.approx(eps * grid_side, abs=1e-6)
    assert sum(default_run.terminal_q) + default_run.removed_q_kwh == pytest.approx(
        default_run.total_unmet_kwh, abs=1e-6)
    for o in default_run.outcomes:
        assert o.arrival_slot <= o.finish_slot <= o.final_deadline_slot
        assert o.demand_kwh == pytest.approx(o.delivered_kwh + o.unmet_kwh, abs=1e-9)


def test_peak_respected_per_slot(default_run):
    by_slot = {}
    for r in default_run.slot_records:
        by_slot.setdefault(r["slot"], []).append(r)
    for rows in by_slot.values():
        total = sum(r["purchase_kwh"] for r in rows) / 0.25
        assert rows[0]["base_load_kw"] + total <= 120.0 + 1e-6


def test_queues_nonnegative_and_b_bounded(default_run):
    for d in default_run.decisions:
        assert min(d.queue_snapshot["Q"]) >= 0 and min(d.queue_snapshot["Z"]) >= 0
        assert all(0 <= b <= 20 for b in d.queue_snapshot["B"].values())


def test_single_action_game_matches_edf(bundled_series):
    cfg = ScenarioConfig(rng_seed=3, k_actions=1)
    a = engine.run(cfg, bundled_series, algorithm="proposed")
    b = engine.run(cfg, bundled_series, algorithm="edf")
    assert a.total_cost == pytest.approx(b.total_cost, abs=1e-9)
    assert a.ev_rows() == b.ev_rows()


def test_solver_fault_becomes_engine_fault(monkeypatch):
    def boom(*args, **kwargs):
        raise cost_game.SolverFault("forced")
    monkeypatch.setattr(cost_game, "decide_purchases", boom)
    with pytest.raises(engine.EngineFault) as info:
        engine.run(ScenarioConfig(n_evs=1), flat_series(), [make_ev()])
    assert info.value.dump["slot"] == 0 and "stations" in info.value.dump


def test_sweep_shapes(bundled_series):
    cfg = ScenarioConfig(rng_seed=2)
    assert engine.sweep(cfg, "v_charg", [], bundled_series) == []
    rows = engine.sweep(cfg, "algorithm", list(ALGORITHMS), bundled_series)
    assert [r["algorithm"] for r in rows] == list(ALGORITHMS)
    assert {r["seed"] for r in rows} == {2}
    assert len({r["occma_cost"] for r in rows}) == 1
    occma_row = rows[ALGORITHMS.index("occma")]
    assert occma_row["normalized_cost"] == pytest.approx(1.0)
    assert all(r["status"] == "ok" for r in rows)


def test_sweep_reports_bad_cells(bundled_series):
    rows = engine.sweep(ScenarioConfig(), "n", ["30", "25"], bundled_series)
    assert rows[0]["status"].startswith("error") and rows[1]["status"] == "ok"
    with pytest.raises(ValueError):
        engine.sweep_cell_config(ScenarioConfig(), "colour", 1)
