"""EDF allocation of a station's energy, SOC bookkeeping, and finish-time
estimation by valley filling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .domain import SOC_TOL, EvRecord, TimeGrid

ENERGY_TOL = 1e-9


def edf_order(evs: Iterable[EvRecord]) -> list:
    """Earliest deadline first; ties by larger remaining demand, then id."""
    return sorted(evs, key=lambda ev: (ev.deadline_slot, -ev.remaining_kwh, ev.id))


def edf_allocate(roster: Iterable[EvRecord], available_kwh: float, grid: TimeGrid,
                 eps_c: float) -> dict:
    """Grid-side energy per EV id for one slot."""
    if available_kwh < 0:
        raise ValueError("available energy must be nonnegative")
    budget = float(available_kwh)
    out = {}
    for ev in edf_order(roster):
        give = min(ev.max_energy_per_slot(grid), ev.remaining_kwh / eps_c, budget)
        give = max(give, 0.0)
        out[ev.id] = give
        budget -= give
    return out


def apply_charge(ev: EvRecord, delivered_kwh: float, eps_c: float) -> float:
    """Add grid-side energy to ``ev`` and return the part that did not fit."""
    if delivered_kwh < 0:
        raise ValueError("delivered energy must be nonnegative")
    soc = ev.soc + eps_c * delivered_kwh / ev.capacity_kwh
    unused = 0.0
    if soc > ev.target_soc:
        unused = (soc - ev.target_soc) * ev.capacity_kwh / eps_c
        soc = ev.target_soc
    elif ev.target_soc - soc <= SOC_TOL:
        soc = ev.target_soc
    ev.soc = soc
    return unused


def water_fill(base_kw: np.ndarray, headroom_kw: np.ndarray, energy_kwh: float,
               slot_hours: float) -> np.ndarray:
    """Charging power per slot that makes ``base + charging`` as flat as possible.

    Solves ``sum(clip(L - base, 0, headroom)) * slot_hours = energy`` for the
    level ``L`` exactly from the sorted breakpoints.  If the energy does not fit
    under the headroom every slot is filled to the cap.
    """
    base = np.asarray(base_kw, dtype=float)
    room = np.maximum(np.asarray(headroom_kw, dtype=float), 0.0)
    if len(base) == 0 or energy_kwh <= 0:
        return np.zeros(len(base))
    target = energy_kwh / slot_hours
    if target >= room.sum():
        return room.copy()
    points = np.unique(np.concatenate([base, base + room]))

    def filled(level):
        return np.clip(level - base, 0.0, room)

    totals = np.array([filled(p).sum() for p in points])
    k = int(np.searchsorted(totals, target))  # first breakpoint reaching target
    if k == len(points):  # headroom below float resolution of the base
        return room.copy()
    if k == 0:
        return filled(points[0])
    lo_p, hi_p = points[k - 1], points[k]
    lo_t, hi_t = totals[k - 1], totals[k]
    level = lo_p + (hi_p - lo_p) * (target - lo_t) / (hi_t - lo_t)
    return filled(level)


@dataclass
class FinishEstimate:
    finish: dict
    horizon: tuple = (0, 0)
    planned_charging_kw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    planned_aggregate_kw: np.ndarray = field(default_factory=lambda: np.zeros(0))


def estimate_finish(evs: Iterable[EvRecord], slot: int, grid: TimeGrid,
                    base_load_kw: np.ndarray, renewable_kwh: np.ndarray, peak_kw: float,
                    eps_c: float, completed: Optional[dict] = None) -> FinishEstimate:
    """Estimated finishing slot of every present EV, planning from ``slot + 1``.

    ``renewable_kwh`` is a (stations x slots) forecast.  The plan spreads the
    pending grid-side demand, net of forecast renewables, over the slots up
    to the earliest pending deadline so that base plus charging is flat; EDF
    is then simulated under those budgets.  Whatever is left is planned the
    same way up to the next deadline.  EVs that do not finish get their
    deadline.  ``completed`` maps ids of already finished EVs to the slot in
    which they finished (defaults to ``slot``).
    """
    completed = completed or {}
    evs = list(evs)
    finish = {}
    rem = {}
    pending = {}
    for ev in evs:
        if ev.done:
            finish[ev.id] = completed.get(ev.id, slot)
        else:
            pending[ev.id] = ev
            rem[ev.id] = ev.remaining_kwh
    base_load_kw = np.asarray(base_load_kw, dtype=float)
    renewable_kwh = np.atleast_2d(np.asarray(renewable_kwh, dtype=float))
    n_slots = min(grid.slot_count, len(base_load_kw))
    cur = slot + 1
    first = None
    while pending:
        for i in [i for i, ev in pending.items() if ev.deadline_slot <= cur or cur >= n_slots]:
            finish[i] = pending.pop(i).deadline_slot
        if not pending:
            break
        end = min(min(ev.deadline_slot for ev in pending.values()), n_slots)
        span = slice(cur, end)
        base = base_load_kw[span]
        stations = sorted({ev.station for ev in pending.values()})
        need = {m: sum(rem[i] for i, ev in pending.items() if ev.station == m) / eps_c
                for m in stations}
        ren = {m: renewable_kwh[m, span] for m in stations}
        net = {m: max(need[m] - float(ren[m].sum()), 0.0) for m in stations}
        total_net = sum(net.values())
        charging = water_fill(base, peak_kw - base, total_net, grid.slot_hours)
        if first is None:
            first = ((cur, end), charging.copy(), base + charging)
        grid_kwh = charging * grid.slot_hours
        for k, s in enumerate(range(cur, end)):
            for m in stations:
                share = net[m] / total_net if total_net > 0 else 0.0
                budget = float(ren[m][k] + share * grid_kwh[k])
                roster = sorted((ev for ev in pending.values() if ev.station == m),
                                key=lambda ev: (ev.deadline_slot, -rem[ev.id], ev.id))
                for ev in roster:
                    if budget <= 0:
                        break
                    give = min(ev.max_energy_per_slot(grid), rem[ev.id] / eps_c, budget)
                    budget -= give
                    rem[ev.id] -= give * eps_c
                    if rem[ev.id] <= ENERGY_TOL:
                        finish[ev.id] = s
                        del pending[ev.id]
        cur = end
    if first is None:
        first = ((slot + 1, slot + 1), np.zeros(0), np.zeros(0))
    (span, charging, aggregate) = first
    return FinishEstimate(finish, span, charging, aggregate)
