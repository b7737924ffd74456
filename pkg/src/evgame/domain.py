"""Domain types shared by every part of the simulator.

Units used internally:

- energy in kWh (per slot when it is a flow),
- power in kW (only at the boundaries: base load, peak, EV max rate),
- time as integer slot indices on a :class:`TimeGrid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SOC_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    slot_count: int = 96
    slot_hours: float = 0.25
    origin_hour: float = 0.0  # clock time of slot 0

    def __post_init__(self):
        if self.slot_count < 1:
            raise ValueError(f"slot_count must be >= 1, got {self.slot_count}")
        if not self.slot_hours > 0:
            raise ValueError(f"slot_hours must be > 0, got {self.slot_hours}")

    @property
    def slot_seconds(self) -> float:
        return self.slot_hours * 3600.0

    def check_slot(self, t: int) -> int:
        if not 0 <= t < self.slot_count:
            raise ValueError(f"slot {t} outside [0, {self.slot_count})")
        return t

    def slot_of_hour(self, hour: float) -> int:
        """Nearest slot index for a clock hour (not clipped)."""
        return int(round((hour - self.origin_hour) / self.slot_hours))

    def hour_of_slot(self, t: int) -> float:
        return self.origin_hour + t * self.slot_hours

    def kw_to_kwh(self, kw):
        return kw * self.slot_hours


@dataclass
class EvRecord:
    """One EV: static request plus mutable charging state.

    ``deadline_slot`` is the currently chosen deadline (it moves when the
    owner plays the deadline game); ``original_deadline_slot`` keeps the
    submitted one.  The EV may charge in slots ``arrival_slot < t <
    deadline_slot`` because arrivals are admitted at the end of their slot.
    """

    id: int
    station: int
    arrival_slot: int
    deadline_slot: int
    capacity_kwh: float = 40.0
    target_soc: float = 1.0
    soc: float = 0.0
    max_rate_kw: float = 6.6
    finish_estimate_slot: Optional[int] = None
    b_queue: float = 0.0
    b_max: float = 20.0
    v_dead: float = 200.0
    original_deadline_slot: Optional[int] = None
    initial_soc: Optional[float] = None

    def __post_init__(self):
        if self.original_deadline_slot is None:
            self.original_deadline_slot = self.deadline_slot
        if self.initial_soc is None:
            self.initial_soc = self.soc
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"EV {self.id}: soc {self.soc} outside [0, 1]")
        if not 0.0 <= self.target_soc <= 1.0:
            raise ValueError(f"EV {self.id}: target_soc {self.target_soc} outside [0, 1]")
        if self.arrival_slot > self.deadline_slot:
            raise ValueError(
                f"EV {self.id}: arrival {self.arrival_slot} after deadline {self.deadline_slot}"
            )
        if self.capacity_kwh <= 0 or self.max_rate_kw < 0:
            raise ValueError(f"EV {self.id}: capacity and rate must be positive")
        if not 0.0 <= self.b_queue <= self.b_max:
            raise ValueError(f"EV {self.id}: b_queue {self.b_queue} outside [0, {self.b_max}]")

    @property
    def remaining_kwh(self) -> float:
        """Battery-side energy still missing."""
        return ev_demand(self)

    @property
    def final_energy_kwh(self) -> float:
        return self.target_soc * self.capacity_kwh

    @property
    def demand_at_arrival_kwh(self) -> float:
        return max(self.target_soc - self.initial_soc, 0.0) * self.capacity_kwh

    @property
    def done(self) -> bool:
        return self.soc >= self.target_soc - SOC_TOL

    def max_energy_per_slot(self, grid: TimeGrid) -> float:
        return self.max_rate_kw * grid.slot_hours


@dataclass
class StationState:
    id: int
    roster: set = field(default_factory=set)
    q_queue: float = 0.0
    z_queue: float = 0.0
    eta: float = 1.0
    v_charg: float = 350.0
    solar_capacity: float = 30.0
    wind_capacity: float = 10.0
    lambda_max_kwh: float = 40.0

    def __post_init__(self):
        if self.q_queue < 0 or self.z_queue < 0:
            raise ValueError(f"station {self.id}: queues must be nonnegative")
        if not self.v_charg > 0:
            raise ValueError(f"station {self.id}: v_charg must be > 0")
        if not self.eta > 0:
            raise ValueError(f"station {self.id}: eta must be > 0")


@dataclass
class GridSignals:
    """Per-slot exogenous signals.  Renewables are per unit of capacity."""

    base_load_kw: np.ndarray
    price_per_kwh: np.ndarray
    solar_per_unit: np.ndarray
    wind_per_unit: np.ndarray
    peak_kw: float
    charging_efficiency: float = 0.9

    def __post_init__(self):
        self.base_load_kw = np.asarray(self.base_load_kw, dtype=float)
        self.price_per_kwh = np.asarray(self.price_per_kwh, dtype=float)
        self.solar_per_unit = np.asarray(self.solar_per_unit, dtype=float)
        self.wind_per_unit = np.asarray(self.wind_per_unit, dtype=float)
        n = len(self.base_load_kw)
        for name in ("price_per_kwh", "solar_per_unit", "wind_per_unit"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if np.any(self.price_per_kwh < 0):
            raise ValueError("prices must be nonnegative")
        if np.any(self.base_load_kw < 0):
            raise ValueError("base load must be nonnegative")
        for name in ("solar_per_unit", "wind_per_unit"):
            arr = getattr(self, name)
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 < self.charging_efficiency <= 1:
            raise ValueError("charging_efficiency must be in (0, 1]")
        if not self.peak_kw > 0:
            raise ValueError("peak_kw must be > 0")

    @property
    def slot_count(self) -> int:
        return len(self.base_load_kw)

    def renewable_kwh(self, station: StationState, t: int, grid: TimeGrid) -> float:
        kw = (station.solar_capacity * self.solar_per_unit[t]
              + station.wind_capacity * self.wind_per_unit[t])
        return float(kw * grid.slot_hours)

    def headroom_kwh(self, t: int, grid: TimeGrid) -> float:
        """Energy the grid can still supply in slot t under the peak cap."""
        headroom = self.peak_kw - self.base_load_kw[t]
        if headroom < 0:
            raise ValueError(
                f"base load {self.base_load_kw[t]:.3f} kW exceeds peak {self.peak_kw} kW at slot {t}"
            )
        return float(headroom * grid.slot_hours)


@dataclass(frozen=True)
class ActionSpace:
    offsets: tuple = (-2, -1, 0, 1, 2)

    def __post_init__(self):
        offs = tuple(int(o) for o in self.offsets)
        if len(offs) < 1:
            raise ValueError("action space needs at least one offset")
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError(f"offsets must be strictly increasing, got {offs}")
        object.__setattr__(self, "offsets", offs)

    @property
    def k(self) -> int:
        return len(self.offsets)

    def candidates(self, original_deadline: int, current_slot: int, slot_count: int) -> np.ndarray:
        """Absolute candidate deadlines, clipped to ``[current_slot + 1, slot_count - 1]``."""
        lo = min(current_slot + 1, slot_count - 1)
        d = np.array([original_deadline + o for o in self.offsets], dtype=float)
        return np.clip(d, lo, slot_count - 1)


@dataclass
class MixedStrategy:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0):
            raise ValueError(f"negative probability in {w}")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        self.weights = w

    @classmethod
    def uniform(cls, k: int) -> "MixedStrategy":
        return cls(np.full(k, 1.0 / k))

    def mean(self, values: Sequence[float]) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))


@dataclass
class SlotDecision:
    slot: int
    purchases_kwh: dict
    renewable_used_kwh: dict
    ev_rates_kw: dict
    finish_estimates: dict
    deadline_choices: dict
    queue_snapshot: dict
    cost: float
    price: float = 0.0
    base_load_kw: float = 0.0

    def available_kwh(self, station: int) -> float:
        return self.purchases_kwh[station] + self.renewable_used_kwh[station]


def qos(arrival: int, finish: int, deadline: int, grid: TimeGrid) -> float:
    """Log-fairness score of the split between charging time and slack.

    Durations are converted to hours before taking logs.
    """
    if not arrival <= finish <= deadline:
        raise ValueError(
            f"need arrival <= finish <= deadline, got {arrival}, {finish}, {deadline}"
        )
    charging = (finish - arrival) * grid.slot_hours
    waiting = (deadline - finish) * grid.slot_hours
    return math.log1p(charging) + math.log1p(waiting)


def ev_demand(ev: EvRecord) -> float:
    """Battery-side energy needed to reach the target SOC, clamped at zero."""
    return max(ev.target_soc - ev.soc, 0.0) * ev.capacity_kwh
