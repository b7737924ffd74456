import csv
import json
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evgame import engine
from evgame.data_io import (BUNDLED_COLUMNS, ConfigError, IngestionError, ScenarioConfig,
                            bundle_from_raw, export_results, export_series, generate_fleet,
                            load_series, make_forecast, scenario_forecasts)
from evgame.domain import TimeGrid

from conftest import flat_series, make_ev

COLS = {"base_load": "load", "price": "price", "solar": "solar", "wind": "wind"}


def write_csv(path, stamps, **cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *cols])
        for i, s in enumerate(stamps):
            w.writerow([s, *(c[i] for c in cols.values())])


def minute_stamps(n, step=1):
    t0 = datetime(2018, 5, 1)
    return [(t0 + timedelta(minutes=step * i)).isoformat() for i in range(n)]


def test_one_minute_rows_become_slot_means(tmp_path):
    vals = np.arange(1440, dtype=float)
    p = tmp_path / "day.csv"
    write_csv(p, minute_stamps(1440), load=vals + 1, price=vals, solar=np.zeros(1440),
              wind=np.zeros(1440))
    b = load_series(p, COLS, TimeGrid(), 100.0, 1.0, 1.0)
    # 15 rows per slot, mean of 15 consecutive integers
    expected = np.array([vals[15 * t:15 * t + 15].mean() for t in range(96)])
    assert len(b.price_per_kwh) == 96
    np.testing.assert_allclose(b.price_per_kwh, expected)


def test_constant_load_normalizes_to_max(tmp_path):
    p = tmp_path / "c.csv"
    n = 96
    write_csv(p, minute_stamps(n, 15), load=[5.0] * n, price=[1] * n, solar=[0] * n, wind=[0] * n)
    b = load_series(p, COLS, TimeGrid(), 100.0, 1.0, 1.0)
    np.testing.assert_allclose(b.base_load_kw, 100.0)


def test_ramp_normalization():
    ramp = np.arange(96, dtype=float)
    b = bundle_from_raw(minute_stamps(96, 15), {"base_load": ramp, "price": ramp, "solar": ramp * 0,
                                                "wind": ramp * 0}, 100.0, 1.0, 1.0)
    np.testing.assert_allclose(b.base_load_kw, ramp / 95.0 * 100.0)


def test_epoch_timestamps(tmp_path):
    p = tmp_path / "e.csv"
    start = datetime(2018, 5, 1).timestamp()
    stamps = [str(int(start + 900 * i)) for i in range(96)]
    write_csv(p, stamps, load=[1.0] * 96, price=[2.0] * 96, solar=[0] * 96, wind=[0] * 96)
    b = load_series(p, COLS, TimeGrid(), 10.0, 1.0, 1.0)
    np.testing.assert_allclose(b.price_per_kwh, 2.0)


@pytest.mark.parametrize("mutate,needle", [
    ("missing", "missing column"),
    ("order", "row 6"),
    ("gap", "row 5"),
])
def test_ingestion_errors_name_the_row(tmp_path, mutate, needle):
    stamps = minute_stamps(96, 15)
    cols = dict(load=[1.0] * 96, price=[1.0] * 96, solar=[0] * 96, wind=[0] * 96)
    if mutate == "missing":
        del cols["wind"]
    elif mutate == "order":
        stamps[3], stamps[4] = stamps[4], stamps[3]
    elif mutate == "gap":
        stamps = stamps[:3] + minute_stamps(200, 15)[5:98]
    p = tmp_path / "bad.csv"
    write_csv(p, stamps, **cols)
    with pytest.raises(IngestionError, match=needle):
        load_series(p, COLS, TimeGrid(), 100.0, 1.0, 1.0)


def test_export_and_reingest_is_bit_identical(tmp_path, bundled_series):
    p = tmp_path / "again.csv"
    export_series(bundled_series, p)
    cfg = ScenarioConfig()
    again = load_series(p, BUNDLED_COLUMNS, cfg.grid, cfg.max_load_kw, cfg.solar_installed,
                        cfg.wind_installed, cfg.price_scale)
    for name in ("base_load_kw", "price_per_kwh", "solar_per_unit", "wind_per_unit"):
        assert np.array_equal(getattr(again, name), getattr(bundled_series, name))


def test_config_defaults():
    cfg = ScenarioConfig()
    assert (cfg.n_evs, cfg.n_stations, cfg.max_load_kw, cfg.peak_kw) == (25, 2, 100.0, 120.0)
    assert (cfg.v_charg_init, cfg.v_dead, cfg.eta, cfg.alpha, cfg.b_max, cfg.k_actions) == \
        (350.0, 200.0, 1.0, 0.001, 20.0, 5)
    assert cfg.for_table_scenario(200).n_stations == 16
    with pytest.raises(ConfigError):
        cfg.for_table_scenario(30)


def test_config_file(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("# scenario\nn_evs = 50\nalgorithm = edf  # trailing comment\n"
                 "forecast_price_noise_std = none\n")
    cfg = ScenarioConfig.from_file(p, rng_seed=7)
    assert cfg.n_evs == 50 and cfg.algorithm == "edf" and cfg.rng_seed == 7
    assert cfg.forecast_price_noise_std is None
    p.write_text("bogus_key = 1\n")
    with pytest.raises(ConfigError, match="bogus_key"):
        ScenarioConfig.from_file(p)
    p.write_text("n_evs = many\n")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_file(p)
    with pytest.raises(ConfigError):
        ScenarioConfig(algorithm="greedy").validate()


def test_fleet_is_deterministic_and_well_formed():
    cfg = ScenarioConfig(rng_seed=11)
    a, b = generate_fleet(cfg), generate_fleet(cfg)
    assert [e.__dict__ for e in a] == [e.__dict__ for e in b]
    assert len(a) == 25
    assert {e.station for e in a} <= {0, 1}
    assert all(e.capacity_kwh == 40.0 and e.max_rate_kw == 6.6 and e.target_soc == 1.0 for e in a)


def test_zero_arrival_spread():
    fleet = generate_fleet(ScenarioConfig(arrival_std=0.0))
    assert {e.arrival_slot for e in fleet} == {32}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 6.0), st.floats(0.0, 6.0))
def test_fleet_windows_always_open(seed, a_std, d_std):
    cfg = ScenarioConfig(rng_seed=seed, arrival_std=a_std, departure_std=d_std, n_evs=30)
    for ev in generate_fleet(cfg):
        assert 0 <= ev.arrival_slot < ev.deadline_slot <= cfg.slot_count - 1


def test_forecasts_clip_and_repeat(bundled_series):
    rng = np.random.default_rng(0)
    f = make_forecast(np.zeros(50), 1.0, rng)
    assert np.all(f >= 0) and np.any(f > 0)
    cfg = ScenarioConfig(rng_seed=4)
    f1, f2 = scenario_forecasts(cfg, bundled_series), scenario_forecasts(cfg, bundled_series)
    assert np.array_equal(f1.price, f2.price)
    assert np.all((f1.solar_per_unit >= 0) & (f1.solar_per_unit <= 1))


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_export_empty_run_has_headers_only(tmp_path):
    cfg = ScenarioConfig(slot_count=96)
    res = engine.RunResult("proposed", cfg, [], [])
    paths = export_results(res, tmp_path)
    assert paths["slots"].read_text().count("\n") == 1
    assert paths["evs"].read_text().count("\n") == 1
    assert json.loads(paths["summary"].read_text())["total_cost"] == 0.0


def test_export_totals_match_columns(tmp_path):
    cfg = ScenarioConfig(n_evs=1, n_stations=1)
    fleet = [make_ev(soc=0.6, a=30, v=70)]
    res = engine.run(cfg, flat_series(), fleet)
    paths = export_results(res, tmp_path)
    slots, evs = _rows(paths["slots"]), _rows(paths["evs"])
    summary = json.loads(paths["summary"].read_text())
    assert float(evs[0]["unmet_kwh"]) == 0.0
    assert summary["total_cost"] == pytest.approx(sum(float(r["cost"]) for r in slots), abs=1e-9)
    assert summary["total_purchase_kwh"] == pytest.approx(
        sum(float(r["purchase_kwh"]) for r in slots), abs=1e-9)
    assert summary["mean_qos"] == pytest.approx(np.mean([float(r["qos"]) for r in evs]))
