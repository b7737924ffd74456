"""Per-slot grid purchase decision (the drift-plus-penalty problem P1).

For station m let ``Y = x + r`` be the energy available for charging, where
``x`` is bought from the grid and ``r`` is the usable local renewable output.
The per-station objective is::

    0.5*eps^2*Y^2 + 0.5*(eta*Q - eps*Y)^2 + Q*(lam_max - eps*Y)
        + Z*(eta*Q - eps*Y) + price*V*x

subject to ``Y <= service cap`` per station and ``sum(x) <= grid headroom``.
Expanding in ``x`` gives a separable diagonal QP with one coupling row,
handed to :func:`solver.solve_boxed_coupled`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import EvRecord, GridSignals, StationState, TimeGrid
from .solver import BOXED_COUPLED, Constraint, QpProblem, QpSolution, solve_boxed_coupled


class SolverFault(RuntimeError):
    def __init__(self, message, problem=None, solution=None):
        super().__init__(message)
        self.problem = problem
        self.solution = solution


def service_cap(station: StationState, evs: dict, grid: TimeGrid, eps_c: float) -> float:
    """Largest grid-side energy the roster can absorb this slot.

    Each EV takes at most its rate cap and at most what completes it; the
    queue bound ``eps*Y <= Q`` is implied when Q tracks the roster's demand.
    """
    absorb = sum(min(evs[i].max_energy_per_slot(grid), evs[i].remaining_kwh / eps_c)
                 for i in station.roster)
    return max(min(absorb, station.q_queue / eps_c), 0.0)


@dataclass
class P1Terms:
    """Per-station data the QP was built from, kept for auditing."""

    renewable_kwh: np.ndarray
    usable_renewable_kwh: np.ndarray
    cap_kwh: np.ndarray
    headroom_kwh: float
    price: float


def assemble_p1(stations: Sequence[StationState], evs: dict, signals: GridSignals,
                slot: int, grid: TimeGrid) -> tuple:
    eps = signals.charging_efficiency
    price = float(signals.price_per_kwh[slot])
    headroom = signals.headroom_kwh(slot, grid)
    m = len(stations)
    h = np.empty(m)
    lin = np.empty(m)
    upper = np.empty(m)
    r = np.empty(m)
    r_used = np.empty(m)
    caps = np.empty(m)
    const = 0.0
    for j, st in enumerate(stations):
        cap = service_cap(st, evs, grid, eps)
        r[j] = signals.renewable_kwh(st, slot, grid)
        r_used[j] = min(r[j], cap)  # surplus is curtailed, never exported
        caps[j] = cap
        q, z, eta = st.q_queue, st.z_queue, st.eta
        # objective in Y: eps^2 Y^2 - eps*((1+eta) Q + Z) Y + const; Y = x + r_used
        h[j] = 2.0 * eps ** 2
        lin[j] = (2.0 * eps ** 2 * r_used[j] - eps * ((1.0 + eta) * q + z)
                  + price * st.v_charg)
        upper[j] = cap - r_used[j]
        y0 = r_used[j]
        const += (eps ** 2 * y0 ** 2 - eps * ((1.0 + eta) * q + z) * y0
                  + 0.5 * (eta * q) ** 2 + q * st.lambda_max_kwh + z * eta * q)
    problem = QpProblem(
        hessian_diag=h, linear=lin, lower=np.zeros(m), upper=np.maximum(upper, 0.0),
        constraints=[Constraint(np.ones(m), "<=", headroom)],
        variant=BOXED_COUPLED, constant=const,
    )
    return problem, P1Terms(r, r_used, caps, headroom, price)


@dataclass
class PurchaseDecision:
    purchases_kwh: np.ndarray
    available_kwh: np.ndarray
    renewable_used_kwh: np.ndarray
    cost: float
    objective: float
    multiplier: float
    solution: QpSolution
    terms: P1Terms


def decide_purchases(stations, evs, signals, slot, grid) -> PurchaseDecision:
    problem, terms = assemble_p1(stations, evs, signals, slot, grid)
    sol = solve_boxed_coupled(problem)
    if sol.status != "optimal":
        raise SolverFault(f"P1 {sol.status} at slot {slot}", problem, sol)
    x = np.maximum(sol.x, 0.0)
    y = x + terms.usable_renewable_kwh
    cost = terms.price * float(x.sum())
    mu = float(sol.multipliers[0]) if sol.multipliers is not None else 0.0
    return PurchaseDecision(x, y, terms.usable_renewable_kwh.copy(), cost, sol.objective,
                            mu, sol, terms)


def update_v_charg(v: float, deadline_shift_sum: float, alpha: float) -> float:
    if deadline_shift_sum < 0:
        return v * (1.0 - alpha)
    if deadline_shift_sum > 0:
        return v * (1.0 + alpha)
    return v


@dataclass
class CostLedger:
    """Cumulative realized cost per station (the cost-game payoff)."""

    per_station: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> "CostLedger":
        return cls(np.zeros(m))

    def record(self, price: float, purchases: np.ndarray):
        self.per_station += price * np.asarray(purchases, dtype=float)

    @property
    def total(self) -> float:
        return float(self.per_station.sum())
