"""Deadline selection: each EV owner picks a mixed strategy over candidate
deadlines by solving a small QP on the probability simplex (problem P2).

With ``s = w.d - f`` (expected deadline minus estimated finish) the per-EV
objective is::

    s^2 + 2*B*s + V_dead * (target - soc) * sum_j w_j * exp(f - d_j)

Because the weights sum to one, ``s = w.(d - f)``; the problem is built on the
centred times ``d - f`` which keeps the rank-one Hessian well scaled.
"""

from __future__ import annotations

import numpy as np

from .domain import ActionSpace, EvRecord, MixedStrategy
from .solver import SIMPLEX, QpProblem, QpSolution, solve_simplex


def risk_payoff(strategy: MixedStrategy, candidates, soc: float, target: float,
                finish: float) -> float:
    d = np.asarray(candidates, dtype=float)
    return float(np.sum(strategy.weights * (target - soc) * np.exp(finish - d)))


def p2_problem(candidates, finish: float, b: float, delta_soc: float, v_dead: float) -> QpProblem:
    """P2 for one EV from raw numbers (times in any consistent unit)."""
    d = np.asarray(candidates, dtype=float)
    if len(d) == 0:
        raise ValueError("empty action space")
    gap = d - finish
    linear = 2.0 * b * gap + v_dead * delta_soc * np.exp(-gap)
    return QpProblem(
        hessian_diag=np.zeros(len(d)),
        linear=linear,
        lower=0.0, upper=1.0,
        variant=SIMPLEX,
        hessian_lowrank=np.sqrt(2.0) * gap.reshape(-1, 1),
    )


def p2_objective(weights, candidates, finish, b, delta_soc, v_dead) -> float:
    """Direct evaluation, independent of the QP assembly."""
    w = np.asarray(weights, dtype=float)
    d = np.asarray(candidates, dtype=float)
    s = float(w @ d) - finish
    return s * s + 2.0 * b * s + v_dead * delta_soc * float(np.sum(w * np.exp(finish - d)))


def assemble_p2(ev: EvRecord, candidates, time_scale: float = 1.0) -> QpProblem:
    """P2 for an EV with a finish estimate.

    ``time_scale`` converts slot indices into the unit the game is played in
    (1 for slots, ``slot_hours`` for hours).
    """
    if ev.finish_estimate_slot is None:
        raise ValueError(f"EV {ev.id} has no finish estimate")
    d = np.asarray(candidates, dtype=float) * time_scale
    f = ev.finish_estimate_slot * time_scale
    return p2_problem(d, f, ev.b_queue, max(ev.target_soc - ev.soc, 0.0), ev.v_dead)


def solve_p2(problem: QpProblem) -> tuple:
    sol = solve_simplex(problem)
    w = np.maximum(sol.x, 0.0)
    w = w / w.sum()
    return MixedStrategy(w), sol


def choose_deadline(strategy: MixedStrategy, candidates) -> int:
    """Candidate with the largest weight; ties go to the earliest action."""
    j = int(np.argmax(strategy.weights))  # argmax returns the first maximum
    return int(round(float(np.asarray(candidates)[j])))


def play(ev: EvRecord, actions: ActionSpace, slot: int, slot_count: int,
         time_scale: float = 1.0):
    """Solve P2 for ``ev`` at ``slot``; returns (strategy, candidates, new deadline, solution)."""
    cands = actions.candidates(ev.original_deadline_slot, slot, slot_count)
    strategy, sol = solve_p2(assemble_p2(ev, cands, time_scale))
    return strategy, cands, choose_deadline(strategy, cands), sol
