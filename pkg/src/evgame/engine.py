"""The online control loop and run bookkeeping.

Each slot: forced departures, grid purchase (P1), queue updates, EDF
dispatch, finish estimation, deadline game (P2), B updates, arrivals, and
the V adaptation, in that order.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cost_game, deadline_game, dispatch, queues
from .data_io import (ALGORITHMS, ScenarioConfig, SeriesBundle, generate_fleet,
                      load_scenario_series, scenario_forecasts)
from .domain import ActionSpace, EvRecord, SlotDecision, StationState, qos


class EngineFault(RuntimeError):
    """A run aborted; ``dump`` holds the state at the failing slot."""

    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


@dataclass
class EvOutcome:
    ev: int
    station: int
    arrival_slot: int
    original_deadline_slot: int
    final_deadline_slot: int
    finish_slot: int
    demand_kwh: float
    delivered_kwh: float
    unmet_kwh: float
    qos: float

    def row(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunResult:
    algorithm: str
    config: ScenarioConfig
    slot_records: list
    outcomes: list
    decisions: list = field(default_factory=list)
    audits: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    terminal_q: list = field(default_factory=list)
    terminal_z: list = field(default_factory=list)
    removed_q_kwh: float = 0.0
    runtime_s: float = 0.0

    @property
    def total_cost(self) -> float:
        return float(sum(r["cost"] for r in self.slot_records))

    @property
    def total_purchase_kwh(self) -> float:
        return float(sum(r["purchase_kwh"] for r in self.slot_records))

    @property
    def mean_qos(self) -> float:
        return float(np.mean([o.qos for o in self.outcomes])) if self.outcomes else 0.0

    @property
    def total_demand_kwh(self) -> float:
        return float(sum(o.demand_kwh for o in self.outcomes))

    @property
    def total_unmet_kwh(self) -> float:
        return float(sum(o.unmet_kwh for o in self.outcomes))

    def slot_rows(self) -> list:
        return self.slot_records

    def ev_rows(self) -> list:
        return [o.row() for o in self.outcomes]

    def drift_violations(self, tol: float = 1e-9) -> list:
        out = []
        for a in self.audits:
            out += [(a.slot,) + v for v in a.charging_violations(tol)]
            out += [(a.slot,) + v for v in a.deadline_violations(tol)]
        return out

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.config.rng_seed,
            "n_evs": len(self.outcomes),
            "total_cost": self.total_cost,
            "total_purchase_kwh": self.total_purchase_kwh,
            "mean_qos": self.mean_qos,
            "total_demand_kwh": self.total_demand_kwh,
            "total_unmet_kwh": self.total_unmet_kwh,
            "terminal_q": list(self.terminal_q),
            "terminal_z": list(self.terminal_z),
            "terminal_q_total": float(sum(self.terminal_q)),
            "removed_q_kwh": self.removed_q_kwh,
            "config": self.config.to_dict(),
        }


def outcome_for(ev: EvRecord, finish: int, slot_hours_grid) -> EvOutcome:
    """Final record for a departed EV; ``finish`` is clipped into its window."""
    v = ev.deadline_slot
    f = min(max(finish, ev.arrival_slot), v)
    demand = ev.demand_at_arrival_kwh
    delivered = (ev.soc - ev.initial_soc) * ev.capacity_kwh
    return EvOutcome(
        ev=ev.id, station=ev.station, arrival_slot=ev.arrival_slot,
        original_deadline_slot=ev.original_deadline_slot, final_deadline_slot=v,
        finish_slot=f, demand_kwh=demand, delivered_kwh=delivered,
        unmet_kwh=max(ev.remaining_kwh, 0.0),
        qos=qos(ev.arrival_slot, f, v, slot_hours_grid),
    )


def _state_dump(slot, stations, evs, exc) -> dict:
    dump = {
        "slot": slot,
        "error": str(exc),
        "stations": [{"id": s.id, "roster": sorted(s.roster), "q": s.q_queue, "z": s.z_queue,
                      "v_charg": s.v_charg, "lambda_max": s.lambda_max_kwh} for s in stations],
        "evs": [{"id": e.id, "station": e.station, "soc": e.soc, "deadline": e.deadline_slot,
                 "b": e.b_queue, "finish": e.finish_estimate_slot} for e in evs.values()],
    }
    problem = getattr(exc, "problem", None)
    if problem is not None:
        dump["problem"] = problem.to_json()
    return dump


def _check_fleet(fleet, grid):
    for ev in fleet:
        grid.check_slot(ev.arrival_slot)
        grid.check_slot(ev.deadline_slot)


def run(cfg: ScenarioConfig, series: Optional[SeriesBundle] = None, fleet=None,
        algorithm: Optional[str] = None, keep_plans: bool = False) -> RunResult:
    """Simulate one day with the online scheme (``proposed``) or with the
    deadline game switched off (``edf``).  Other algorithms are dispatched
    to :mod:`baselines`."""
    algorithm = algorithm or cfg.algorithm
    if algorithm not in ("proposed", "edf"):
        from . import baselines
        return baselines.run_baseline(cfg, series, fleet, algorithm)
    t0 = time.perf_counter()
    cfg.validate()
    grid = cfg.grid
    series = series if series is not None else load_scenario_series(cfg)
    fleet = generate_fleet(cfg, grid) if fleet is None else fleet
    _check_fleet(fleet, grid)
    signals = series.to_signals(cfg.peak_kw, cfg.charging_efficiency)
    fc = scenario_forecasts(cfg, series)
    eps = cfg.charging_efficiency
    actions = ActionSpace(cfg.action_offsets)
    time_scale = grid.slot_hours if cfg.deadline_time_unit == "hours" else 1.0
    play_game = algorithm == "proposed"

    stations = [StationState(m, eta=cfg.eta, v_charg=cfg.v_charg_init,
                             solar_capacity=cfg.solar_capacity, wind_capacity=cfg.wind_capacity,
                             lambda_max_kwh=cfg.lambda_max_init)
                for m in range(cfg.n_stations)]
    evs_all = {ev.id: copy.deepcopy(ev) for ev in fleet}
    arrivals = {}
    for ev in evs_all.values():
        arrivals.setdefault(ev.arrival_slot, []).append(ev.id)
    present = {}
    completed = {}
    outcomes = {}
    removed_q = 0.0

    # renewables as seen by the finish estimator
    if cfg.finish_forecast == "truth":
        solar_f, wind_f = series.solar_per_unit, series.wind_per_unit
    else:
        solar_f, wind_f = fc.solar_per_unit, fc.wind_per_unit
    ren_forecast = np.array([(st.solar_capacity * solar_f + st.wind_capacity * wind_f)
                             * grid.slot_hours for st in stations])

    records, decisions, audits, plans = [], [], [], []

    for t in range(grid.slot_count):
        try:
            # departures at the start of the slot
            for i in sorted(i for i, ev in present.items() if ev.deadline_slot <= t):
                ev = present.pop(i)
                st = stations[ev.station]
                st.roster.discard(i)
                if not ev.done:
                    unmet = ev.remaining_kwh
                    taken = min(unmet, st.q_queue)
                    st.q_queue -= taken
                    removed_q += taken
                    finish = ev.deadline_slot
                else:
                    finish = completed.get(i, ev.deadline_slot)
                outcomes[i] = outcome_for(ev, finish, grid)

            purchase = cost_game.decide_purchases(stations, present, signals, t, grid)
            audit = queues.DriftAudit(t)
            q0 = [st.q_queue for st in stations]
            z0 = [st.z_queue for st in stations]
            delivered_grid = np.zeros(len(stations))
            unused = np.zeros(len(stations))
            rates = {}
            for st in stations:
                y = float(purchase.available_kwh[st.id])
                roster = [present[i] for i in st.roster if not present[i].done]
                alloc = dispatch.edf_allocate(roster, y, grid, eps)
                spare = y - sum(alloc.values())
                for i, e in alloc.items():
                    back = dispatch.apply_charge(present[i], e, eps)
                    spare += back
                    rates[i] = (e - back) / grid.slot_hours
                    if present[i].done and i not in completed:
                        completed[i] = t
                delivered_grid[st.id] = y - spare
                unused[st.id] = spare
                st.z_queue = queues.update_z(st.z_queue, st.q_queue, y, st.eta, eps)
                st.q_queue = max(st.q_queue - eps * y, 0.0)

            est = dispatch.estimate_finish(present.values(), t, grid, fc.base_load_kw,
                                           ren_forecast, cfg.peak_kw, eps, completed)
            if keep_plans:
                plans.append(est)
            for i, f in est.finish.items():
                ev = present[i]
                ev.finish_estimate_slot = min(max(f, ev.arrival_slot), ev.deadline_slot)

            choices = {}
            shift = np.zeros(len(stations))
            if play_game:
                for i in sorted(present):
                    ev = present[i]
                    if ev.done:
                        continue
                    strategy, cands, new_v, _ = deadline_game.play(
                        ev, actions, t, grid.slot_count, time_scale)
                    mean_d = strategy.mean(cands) * time_scale
                    f = ev.finish_estimate_slot * time_scale
                    raw = ev.b_queue + (ev.target_soc - ev.soc) * (mean_d - f)
                    b1 = queues.update_b(ev.b_queue, ev.soc, ev.target_soc, mean_d, f, ev.b_max)
                    audit.record_deadline(i, ev.b_queue, b1, mean_d, f,
                                          clamped=not (0.0 <= raw <= ev.b_max))
                    ev.b_queue = b1
                    ev.deadline_slot = new_v
                    ev.finish_estimate_slot = min(ev.finish_estimate_slot, new_v)
                    choices[i] = new_v
            for i, ev in present.items():
                shift[ev.station] += ev.deadline_slot - ev.original_deadline_slot

            # arrivals at the end of the slot
            lam = np.zeros(len(stations))
            for i in arrivals.get(t, []):
                ev = evs_all[i]
                present[i] = ev
                stations[ev.station].roster.add(i)
                lam[ev.station] += ev.remaining_kwh
                if ev.done:
                    completed[i] = t
            for st in stations:
                st.q_queue += lam[st.id]
                st.lambda_max_kwh = max(st.lambda_max_kwh, float(lam[st.id]))
                audit.record_charging(st.id, q0[st.id], st.q_queue, z0[st.id], st.z_queue,
                                      float(purchase.available_kwh[st.id]), st.lambda_max_kwh,
                                      st.eta, eps)
                if play_game:
                    st.v_charg = cost_game.update_v_charg(st.v_charg, shift[st.id], cfg.alpha)
        except cost_game.SolverFault as exc:
            raise EngineFault(f"solver failure at slot {t}: {exc}",
                              _state_dump(t, stations, evs_all, exc)) from exc

        audits.append(audit)
        for st, row in zip(stations, audit.charging):
            records.append({
                "slot": t, "station": st.id, "price": purchase.terms.price,
                "base_load_kw": float(signals.base_load_kw[t]),
                "purchase_kwh": float(purchase.purchases_kwh[st.id]),
                "renewable_kwh": float(purchase.terms.renewable_kwh[st.id]),
                "renewable_used_kwh": float(purchase.renewable_used_kwh[st.id]),
                "available_kwh": float(purchase.available_kwh[st.id]),
                "delivered_kwh": float(delivered_grid[st.id]),
                "cost": purchase.terms.price * float(purchase.purchases_kwh[st.id]),
                "q_queue": st.q_queue, "z_queue": st.z_queue, "v_charg": st.v_charg,
                "dq2": row[1], "bound_q": row[2], "dz2": row[3], "bound_z": row[4],
            })
        decisions.append(SlotDecision(
            slot=t,
            purchases_kwh={st.id: float(purchase.purchases_kwh[st.id]) for st in stations},
            renewable_used_kwh={st.id: float(purchase.renewable_used_kwh[st.id]) for st in stations},
            ev_rates_kw=rates,
            finish_estimates={i: ev.finish_estimate_slot for i, ev in present.items()},
            deadline_choices=choices,
            queue_snapshot={"Q": [st.q_queue for st in stations],
                            "Z": [st.z_queue for st in stations],
                            "B": {i: ev.b_queue for i, ev in present.items()}},
            cost=purchase.cost,
            price=purchase.terms.price,
            base_load_kw=float(signals.base_load_kw[t]),
        ))

    # anything still present leaves at the end of the horizon
    for i in sorted(present):
        ev = present[i]
        st = stations[ev.station]
        if not ev.done:
            taken = min(ev.remaining_kwh, st.q_queue)
            st.q_queue -= taken
            removed_q += taken
        outcomes[i] = outcome_for(ev, completed.get(i, ev.deadline_slot), grid)
    for i, ev in evs_all.items():
        if i not in outcomes:  # never arrived inside the horizon
            outcomes[i] = outcome_for(ev, ev.arrival_slot, grid)

    return RunResult(
        algorithm=algorithm, config=cfg, slot_records=records,
        outcomes=[outcomes[i] for i in sorted(outcomes)], decisions=decisions,
        audits=audits, plans=plans,
        terminal_q=[st.q_queue for st in stations], terminal_z=[st.z_queue for st in stations],
        removed_q_kwh=removed_q, runtime_s=time.perf_counter() - t0,
    )


SWEEP_PARAMETERS = {
    "v_charg": "v_charg_init",
    "v_dead": "v_dead",
    "n": "n_evs",
    "m": "n_stations",
    "seed": "rng_seed",
    "algorithm": "algorithm",
}


def sweep_cell_config(cfg: ScenarioConfig, parameter: str, value) -> ScenarioConfig:
    key = parameter.lower()
    if key not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; "
                         f"choose from {', '.join(SWEEP_PARAMETERS)}")
    if key == "n":
        return cfg.for_table_scenario(int(value))
    if key == "algorithm":
        if value not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {value!r}")
        return cfg.replace(algorithm=value)
    field_name = SWEEP_PARAMETERS[key]
    cast = int if field_name in ("n_stations", "rng_seed") else float
    return cfg.replace(**{field_name: cast(value)})


SWEEP_COLUMNS = ["parameter", "value", "algorithm", "seed", "total_cost", "occma_cost",
                 "normalized_cost", "mean_qos", "unmet_kwh", "runtime_s", "status"]


def sweep(cfg: ScenarioConfig, parameter: str, values, series=None) -> list:
    """One run per value, each normalized by the offline optimum on the same
    fleet and series.  A failing cell is reported, the rest still run."""
    from . import baselines
    rows = []
    occma_cache = {}
    for value in values:
        row = {"parameter": parameter, "value": value}
        try:
            cell = sweep_cell_config(cfg, parameter, value)
            row.update(algorithm=cell.algorithm, seed=cell.rng_seed)
            bundle = series if series is not None else load_scenario_series(cell)
            key = (cell.n_evs, cell.n_stations, cell.max_load_kw, cell.peak_kw, cell.rng_seed)
            if key not in occma_cache:
                occma_cache[key] = baselines.occma(cell, bundle).total_cost
            res = run(cell, bundle)
            base = occma_cache[key]
            row.update(total_cost=res.total_cost, occma_cost=base,
                       normalized_cost=res.total_cost / base if base > 0 else float("nan"),
                       mean_qos=res.mean_qos, unmet_kwh=res.total_unmet_kwh,
                       runtime_s=res.runtime_s, status="ok")
        except Exception as exc:  # noqa: BLE001 - reported per cell
            row.update(status=f"error: {exc}")
        rows.append({c: row.get(c, "") for c in SWEEP_COLUMNS})
    return rows
