"""Comparison schedulers.

* ``occma``: offline cost minimum with full knowledge of prices and
  renewables, an LP over per-EV per-slot energies.
* ``ocsa``: an online threshold rule, with (``ocsa_f``) or without
  (``ocsa_n``) a price forecast.  This is a benchmark approximation: a fixed
  urgency/threshold rule standing in for schedulers whose internals are not
  available.
* ``edf_only``: the online scheme with the deadline game switched off.

All schedules are replayed through :func:`replay` so costs, QoS and unmet
demand are accounted exactly like the online runs.
"""

from __future__ import annotations

import copy
import time
from typing import Optional

import numpy as np

from .data_io import (ScenarioConfig, SeriesBundle, generate_fleet, load_scenario_series,
                      scenario_forecasts)
from .dispatch import apply_charge
from .domain import SOC_TOL, TimeGrid
from .engine import RunResult, outcome_for, run
from .solver import GENERAL, OPTIMAL, Constraint, QpProblem, solve_general, solve_lp_highs

SHORTFALL_PENALTY = 10.0  # per kWh, in units of the largest price
OCSA_MARGIN_SLOTS = 1


def _setup(cfg, series, fleet):
    cfg.validate()
    grid = cfg.grid
    series = series if series is not None else load_scenario_series(cfg)
    fleet = generate_fleet(cfg, grid) if fleet is None else fleet
    return grid, series, [copy.deepcopy(ev) for ev in fleet]


def station_renewables(cfg: ScenarioConfig, solar, wind, grid: TimeGrid) -> np.ndarray:
    """(stations x slots) renewable energy in kWh."""
    row = (cfg.solar_capacity * np.asarray(solar) + cfg.wind_capacity * np.asarray(wind))
    return np.tile(row * grid.slot_hours, (cfg.n_stations, 1))


def headroom_kwh(cfg: ScenarioConfig, series: SeriesBundle, grid: TimeGrid) -> np.ndarray:
    room = (cfg.peak_kw - np.asarray(series.base_load_kw)) * grid.slot_hours
    if np.any(room < 0):
        raise ValueError("base load exceeds the peak cap")
    return room


def charging_slots(ev, grid: TimeGrid) -> range:
    """Slots in which a parked EV can draw energy."""
    return range(ev.arrival_slot + 1, min(ev.deadline_slot, grid.slot_count))


def replay(cfg: ScenarioConfig, series: SeriesBundle, fleet, energy: dict, algorithm: str,
           grid: Optional[TimeGrid] = None, t0: Optional[float] = None) -> RunResult:
    """Account a fixed schedule.

    ``energy`` maps EV id to a per-slot array of grid-side energy (kWh)
    delivered to that EV.  Local renewables are used first; the rest is
    bought.
    """
    t0 = time.perf_counter() if t0 is None else t0
    grid = grid or cfg.grid
    eps = cfg.charging_efficiency
    renew = station_renewables(cfg, series.solar_per_unit, series.wind_per_unit, grid)
    evs = {ev.id: ev for ev in fleet}
    load = np.zeros((cfg.n_stations, grid.slot_count))
    finish = {}
    for i, ev in evs.items():
        e = energy.get(i)
        if e is None:
            continue
        for t in np.nonzero(e > 0)[0]:
            back = apply_charge(ev, float(e[t]), eps)
            load[ev.station, t] += e[t] - back
            if ev.done and i not in finish:
                finish[i] = int(t)
    used = np.minimum(renew, load)
    buy = load - used
    records = []
    for t in range(grid.slot_count):
        price = float(series.price_per_kwh[t])
        for m in range(cfg.n_stations):
            q = sum(_remaining_after(evs[i], energy.get(i), t, eps)
                    for i in evs if evs[i].station == m and evs[i].arrival_slot <= t
                    and evs[i].deadline_slot > t)
            records.append({
                "slot": t, "station": m, "price": price,
                "base_load_kw": float(series.base_load_kw[t]),
                "purchase_kwh": float(buy[m, t]), "renewable_kwh": float(renew[m, t]),
                "renewable_used_kwh": float(used[m, t]), "available_kwh": float(load[m, t]),
                "delivered_kwh": float(load[m, t]), "cost": price * float(buy[m, t]),
                "q_queue": q, "z_queue": "", "v_charg": "",
                "dq2": "", "bound_q": "", "dz2": "", "bound_z": "",
            })
    outcomes = []
    for i in sorted(evs):
        ev = evs[i]
        if ev.done:
            f = finish.get(i, ev.arrival_slot)
        else:
            f = ev.deadline_slot
        outcomes.append(outcome_for(ev, f, grid))
    return RunResult(algorithm=algorithm, config=cfg, slot_records=records, outcomes=outcomes,
                     terminal_q=[0.0] * cfg.n_stations, terminal_z=[0.0] * cfg.n_stations,
                     runtime_s=time.perf_counter() - t0)


def _remaining_after(ev, e, t, eps) -> float:
    """Battery-side demand left once slot ``t`` has been served."""
    got = 0.0 if e is None else eps * float(np.sum(e[: t + 1]))
    return max(ev.demand_at_arrival_kwh - got, 0.0)


# -- offline optimum ------------------------------------------------------------

def occma_problem(cfg, series, fleet, grid) -> tuple:
    """LP (with ridge) over per-EV per-slot energies, purchases and shortfalls."""
    eps = cfg.charging_efficiency
    renew = station_renewables(cfg, series.solar_per_unit, series.wind_per_unit, grid)
    room = headroom_kwh(cfg, series, grid)
    price = np.asarray(series.price_per_kwh, dtype=float)
    top = float(price.max())
    price = price / top if top > 0 else price  # same minimizer, better conditioned
    penalty = SHORTFALL_PENALTY
    index = {}
    lin, upper = [], []

    def var(key, cost, ub):
        index[key] = len(lin)
        lin.append(cost)
        upper.append(ub)

    for ev in fleet:
        for t in charging_slots(ev, grid):
            var(("e", ev.id, t), 0.0, ev.max_energy_per_slot(grid))
        var(("u", ev.id), penalty, np.inf)
    for m in range(cfg.n_stations):
        for t in range(grid.slot_count):
            var(("x", m, t), price[t], room[t])
    cons = []
    for ev in fleet:
        row = {index[("e", ev.id, t)]: 1.0 for t in charging_slots(ev, grid)}
        row[index[("u", ev.id)]] = 1.0
        cons.append(Constraint(row, "=", ev.remaining_kwh / eps))
    for m in range(cfg.n_stations):
        for t in range(grid.slot_count):
            row = {index[("e", ev.id, t)]: 1.0 for ev in fleet
                   if ev.station == m and ("e", ev.id, t) in index}
            if not row:
                continue
            row[index[("x", m, t)]] = -1.0
            cons.append(Constraint(row, "<=", float(renew[m, t])))
    for t in range(grid.slot_count):
        row = {index[("x", m, t)]: 1.0 for m in range(cfg.n_stations)}
        cons.append(Constraint(row, "<=", float(room[t])))
    n = len(lin)
    problem = QpProblem(hessian_diag=np.zeros(n), linear=np.array(lin), lower=np.zeros(n),
                        upper=np.array(upper), constraints=cons, variant=GENERAL)
    return problem, index


def occma(cfg: ScenarioConfig, series: Optional[SeriesBundle] = None, fleet=None,
          backend: str = "highs") -> RunResult:
    """Offline optimum.  ``backend`` is ``"highs"`` (exact simplex/IPM) or
    ``"admm"`` (the first-order :func:`solver.solve_general`, which can stall
    on day-sized instances)."""
    t0 = time.perf_counter()
    grid, series, fleet = _setup(cfg, series, fleet)
    eps = cfg.charging_efficiency
    problem, index = occma_problem(cfg, series, fleet, grid)
    if backend == "highs":
        sol = solve_lp_highs(problem)
    elif backend == "admm":
        sol = solve_general(problem)
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    if sol.status != OPTIMAL:
        raise RuntimeError(f"offline LP ended with status {sol.status}")
    x = sol.x
    energy = {}
    for ev in fleet:
        slots = list(charging_slots(ev, grid))
        e = np.zeros(grid.slot_count)
        cap = ev.max_energy_per_slot(grid)
        for t in slots:
            e[t] = min(max(x[index[("e", ev.id, t)]], 0.0), cap)
        e[e < 1e-7 * max(cap, 1.0)] = 0.0  # solver dust
        need = ev.remaining_kwh / eps
        total = e.sum()
        # polish: first-order solver leaves ~tol-sized residue on the demand row
        if total > 0 and abs(total - need) <= 1e-4 * max(need, 1.0):
            e *= need / total
        energy[ev.id] = e
    return replay(cfg, series, fleet, energy, "occma", grid, t0)


# -- online threshold rules ---------------------------------------------------

def ocsa(cfg: ScenarioConfig, series: Optional[SeriesBundle] = None, fleet=None,
         price_forecast: Optional[np.ndarray] = None, algorithm: Optional[str] = None) -> RunResult:
    """Urgency-ordered online charging.

    With ``price_forecast`` an EV draws grid energy only when the current
    price is at most the forecast mean over the rest of its window, unless
    it can no longer afford to wait, in which case it charges at full rate.
    Without a forecast every EV charges as early as the caps allow.
    Local renewables are always used.
    """
    t0 = time.perf_counter()
    grid, series, fleet = _setup(cfg, series, fleet)
    if algorithm is None:
        algorithm = "ocsa_n" if price_forecast is None else "ocsa_f"
    eps = cfg.charging_efficiency
    renew = station_renewables(cfg, series.solar_per_unit, series.wind_per_unit, grid)
    room = headroom_kwh(cfg, series, grid)
    price = np.asarray(series.price_per_kwh, dtype=float)
    rem = {ev.id: ev.remaining_kwh / eps for ev in fleet}  # grid-side
    energy = {ev.id: np.zeros(grid.slot_count) for ev in fleet}
    for t in range(grid.slot_count):
        active = [ev for ev in fleet
                  if ev.arrival_slot < t < ev.deadline_slot and rem[ev.id] > 1e-12]
        if not active:
            continue

        def urgency(ev):
            return rem[ev.id] / (ev.deadline_slot - t)

        active.sort(key=lambda ev: (-urgency(ev), ev.id))
        want = {}
        grid_want = {}
        for ev in active:
            cap = min(ev.max_energy_per_slot(grid), rem[ev.id])
            want[ev.id] = cap
            if price_forecast is None:
                grid_want[ev.id] = cap
                continue
            left = ev.deadline_slot - t  # slots t .. v-1
            forced = rem[ev.id] > (left - 1 - OCSA_MARGIN_SLOTS) * ev.max_energy_per_slot(grid)
            ref = float(np.mean(price_forecast[t:ev.deadline_slot]))
            cheap = price[t] <= ref + 1e-12 * abs(ref)  # a flat forecast's mean may round down
            grid_want[ev.id] = cap if (forced or cheap) else 0.0
        got = {ev.id: 0.0 for ev in active}
        for m in range(cfg.n_stations):
            free = float(renew[m, t])
            for ev in active:
                if ev.station == m and free > 0:
                    g = min(want[ev.id], free)
                    got[ev.id] += g
                    free -= g
        budget = float(room[t])
        for ev in active:
            g = min(max(grid_want[ev.id] - got[ev.id], 0.0), budget)
            got[ev.id] += g
            budget -= g
        for ev in active:
            energy[ev.id][t] = got[ev.id]
            rem[ev.id] -= got[ev.id]
    return replay(cfg, series, fleet, energy, algorithm, grid, t0)


def ocsa_f(cfg, series=None, fleet=None) -> RunResult:
    series = series if series is not None else load_scenario_series(cfg)
    forecast = scenario_forecasts(cfg, series).price
    return ocsa(cfg, series, fleet, forecast, "ocsa_f")


def ocsa_n(cfg, series=None, fleet=None) -> RunResult:
    return ocsa(cfg, series, fleet, None, "ocsa_n")


def edf_only(cfg, series=None, fleet=None) -> RunResult:
    return run(cfg, series, fleet, algorithm="edf")


def run_baseline(cfg, series, fleet, algorithm: str) -> RunResult:
    table = {"occma": occma, "ocsa_f": ocsa_f, "ocsa_n": ocsa_n, "edf": edf_only}
    if algorithm not in table:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return table[algorithm](cfg, series, fleet)


def run_algorithm(cfg, series=None, fleet=None, algorithm=None) -> RunResult:
    return run(cfg, series, fleet, algorithm=algorithm or cfg.algorithm)
