"""Virtual queues and the one-step drift bounds used to audit them.

Q tracks unserved battery-side demand per station, Z integrates Q as a
deadline-pressure penalty, and B accumulates an EV's waiting-time pressure.
The ``drift_bound_*`` functions return upper bounds on ``X_{t+1}^2 - X_t^2``;
:class:`DriftAudit` records both sides so runs can be checked afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field


def _check_nonneg(**values):
    for name, v in values.items():
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")


def update_q(q: float, y: float, lambda_arriving: float, eps_c: float) -> float:
    _check_nonneg(q=q, y=y, lambda_arriving=lambda_arriving, eps_c=eps_c)
    return max(q - eps_c * y, 0.0) + lambda_arriving


def update_z(z: float, q: float, y: float, eta: float, eps_c: float) -> float:
    _check_nonneg(z=z, q=q, y=y, eta=eta, eps_c=eps_c)
    return max(z + eta * q - eps_c * y, 0.0)


def update_b(b: float, soc: float, target: float, mean_deadline: float,
             finish: float, b_max: float) -> float:
    """Waiting-time queue step, clamped to ``[0, b_max]``."""
    raw = b + (target - soc) * (mean_deadline - finish)
    return max(min(raw, b_max), 0.0)


def drift_bound_q(q: float, y: float, lambda_max: float, eps_c: float) -> float:
    # includes the lambda_max**2 term; without it an arrival into an empty
    # queue (q = y = 0) would already break the bound
    _check_nonneg(q=q, y=y, lambda_max=lambda_max, eps_c=eps_c)
    return (eps_c * y) ** 2 + lambda_max ** 2 + 2.0 * q * (lambda_max - eps_c * y)


def drift_bound_q_objective(q: float, y: float, lambda_max: float, eps_c: float) -> float:
    """The part of :func:`drift_bound_q` that depends on the decision."""
    return (eps_c * y) ** 2 + 2.0 * q * (lambda_max - eps_c * y)


def drift_bound_z(z: float, q: float, y: float, eta: float, eps_c: float) -> float:
    _check_nonneg(z=z, q=q, y=y, eta=eta, eps_c=eps_c)
    inner = eta * q - eps_c * y
    return 2.0 * z * inner + inner ** 2


def drift_bound_b(b: float, mean_deadline: float, finish: float) -> float:
    _check_nonneg(b=b)
    gap = mean_deadline - finish
    return gap ** 2 + 2.0 * b * gap


@dataclass
class DriftAudit:
    """Drift records for one slot.

    ``charging`` rows are ``(station, dq2, bound_q, dz2, bound_z)``; ``deadline``
    rows are ``(ev, db2, bound_b, clamped)``.
    """

    slot: int
    l_charg_before: float = 0.0
    l_charg_after: float = 0.0
    l_dead_before: float = 0.0
    l_dead_after: float = 0.0
    charging: list = field(default_factory=list)
    deadline: list = field(default_factory=list)

    def record_charging(self, station: int, q0: float, q1: float, z0: float, z1: float,
                        y: float, lambda_max: float, eta: float, eps_c: float):
        self.l_charg_before += 0.5 * (q0 ** 2 + z0 ** 2)
        self.l_charg_after += 0.5 * (q1 ** 2 + z1 ** 2)
        self.charging.append((
            station,
            q1 ** 2 - q0 ** 2,
            drift_bound_q(q0, y, lambda_max, eps_c),
            z1 ** 2 - z0 ** 2,
            drift_bound_z(z0, q0, y, eta, eps_c),
        ))

    def record_deadline(self, ev: int, b0: float, b1: float, mean_deadline: float,
                        finish: float, clamped: bool):
        self.l_dead_before += 0.5 * b0 ** 2
        self.l_dead_after += 0.5 * b1 ** 2
        self.deadline.append((ev, b1 ** 2 - b0 ** 2, drift_bound_b(b0, mean_deadline, finish), clamped))

    def charging_violations(self, tol: float = 1e-9) -> list:
        out = []
        for station, dq2, bq, dz2, bz in self.charging:
            if dq2 > bq + tol * (1 + abs(bq)):
                out.append(("Q", station, dq2, bq))
            if dz2 > bz + tol * (1 + abs(bz)):
                out.append(("Z", station, dz2, bz))
        return out

    def deadline_violations(self, tol: float = 1e-9) -> list:
        return [("B", ev, db2, bb) for ev, db2, bb, clamped in self.deadline
                if not clamped and db2 > bb + tol * (1 + abs(bb))]
