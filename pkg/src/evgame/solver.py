"""Small convex QP engine.

All problems have the form::

    minimize    0.5 * x' H x + linear' x + constant
    subject to  lower <= x <= upper,  a_i' x (<= or =) b_i

with ``H = diag(hessian_diag) + U U'`` (``U`` is an optional low-rank factor).
Three solvers exploit the three structures that show up in the simulator:

* :func:`solve_boxed_coupled` -- diagonal H > 0, one ``<=`` coupling row with
  nonnegative coefficients.  Exact: the minimizer is a clipped affine function
  of the coupling multiplier, which is located by bisection over the sorted
  breakpoints and then linear interpolation.
* :func:`solve_simplex` -- probability simplex, any PSD H.  Projected gradient
  with a fixed 1/L step from the uniform point, accelerated by momentum with
  adaptive restart.
* :func:`solve_general` -- sparse linear rows, diagonal H.  ADMM on the
  splitting ``z = A x`` (the operator-splitting scheme used by OSQP).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

BOXED_COUPLED = "boxed_coupled"
SIMPLEX = "simplex"
GENERAL = "general"

RIDGE = 1e-6


class Constraint(NamedTuple):
    """Linear row.  ``coeffs`` is a dense vector or a ``{index: value}`` map."""

    coeffs: Union[np.ndarray, dict]
    relation: str  # "<=" or "="
    rhs: float

    def dense(self, n: int) -> np.ndarray:
        if isinstance(self.coeffs, dict):
            a = np.zeros(n)
            for j, v in self.coeffs.items():
                a[j] += v
            return a
        return np.asarray(self.coeffs, dtype=float)


@dataclass
class QpProblem:
    hessian_diag: np.ndarray
    linear: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constraints: list = field(default_factory=list)
    variant: str = GENERAL
    hessian_lowrank: Optional[np.ndarray] = None
    constant: float = 0.0

    def __post_init__(self):
        self.hessian_diag = np.asarray(self.hessian_diag, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        n = len(self.linear)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if len(self.hessian_diag) != n:
            raise ValueError("hessian_diag and linear differ in length")
        if np.any(self.hessian_diag < 0):
            raise ValueError("hessian_diag must be nonnegative")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")
        if self.hessian_lowrank is not None:
            u = np.asarray(self.hessian_lowrank, dtype=float)
            self.hessian_lowrank = u.reshape(n, -1)
        self.constraints = [c if isinstance(c, Constraint) else Constraint(*c)
                            for c in self.constraints]
        for c in self.constraints:
            if c.relation not in ("<=", "="):
                raise ValueError(f"unknown relation {c.relation!r}")
        if self.variant not in (BOXED_COUPLED, SIMPLEX, GENERAL):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def n(self) -> int:
        return len(self.linear)

    def hess_vec(self, x: np.ndarray) -> np.ndarray:
        out = self.hessian_diag * x
        if self.hessian_lowrank is not None:
            u = self.hessian_lowrank
            out = out + u @ (u.T @ x)
        return out

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hess_vec(x) + self.linear @ x + self.constant)

    def to_json(self) -> str:
        """Debug dump for failure triage."""
        def enc(c):
            coeffs = ({str(k): v for k, v in c.coeffs.items()} if isinstance(c.coeffs, dict)
                      else np.asarray(c.coeffs).tolist())
            return {"coeffs": coeffs, "relation": c.relation, "rhs": c.rhs}
        return json.dumps({
            "variant": self.variant,
            "hessian_diag": self.hessian_diag.tolist(),
            "hessian_lowrank": None if self.hessian_lowrank is None else self.hessian_lowrank.tolist(),
            "linear": self.linear.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "constant": self.constant,
            "constraints": [enc(c) for c in self.constraints],
        })


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    multipliers: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def to_json(self) -> str:
        return json.dumps({
            "x": self.x.tolist(), "objective": self.objective,
            "kkt_residual": self.kkt_residual, "iterations": self.iterations,
            "status": self.status,
        })


# -- boxed + one coupling row ------------------------------------------------

def solve_boxed_coupled(p: QpProblem, tol: float = 1e-8) -> QpSolution:
    if p.variant != BOXED_COUPLED:
        raise ValueError(f"expected a {BOXED_COUPLED} problem, got {p.variant}")
    h, l, lo, up = p.hessian_diag, p.linear, p.lower, p.upper
    if np.any(h <= 0):
        raise ValueError("boxed_coupled needs a strictly positive diagonal Hessian")
    if len(p.constraints) > 1:
        raise ValueError("boxed_coupled takes at most one coupling constraint")
    if p.constraints:
        (row,) = p.constraints
        if row.relation != "<=":
            raise ValueError("coupling constraint must be '<='")
        c = row.dense(p.n)
        b = float(row.rhs)
        if np.any(c < 0):
            raise ValueError("coupling coefficients must be nonnegative")
    else:
        c, b = np.zeros(p.n), np.inf

    def x_of(mu):
        return np.clip((-l - mu * c) / h, lo, up)

    def slack(mu):
        return float(c @ x_of(mu)) - b

    mu = 0.0
    iterations = 0
    if np.isfinite(b) and slack(0.0) > 0:
        if float(c @ lo) > b + tol * (1 + abs(b)):
            x = lo.copy()
            return QpSolution(x, p.objective(x), float(c @ lo - b), 0, INFEASIBLE)
        # slack(mu) is piecewise linear and nonincreasing; kinks where a
        # coordinate enters or leaves its box
        act = c > 0
        kinks = np.concatenate([(-l[act] - h[act] * up[act]) / c[act],
                                (-l[act] - h[act] * lo[act]) / c[act]])
        kinks = np.unique(kinks[np.isfinite(kinks) & (kinks > 0)])
        # bisection for the first kink with slack <= 0; one exists because
        # past the last kink every coupled coordinate sits at its lower bound
        left, right = 0, len(kinks) - 1
        while left < right:
            mid = (left + right) // 2
            iterations += 1
            if slack(kinks[mid]) <= 0:
                right = mid
            else:
                left = mid + 1
        a_mu = kinks[left - 1] if left > 0 else 0.0
        b_mu = kinks[left]
        s_a, s_b = slack(a_mu), slack(b_mu)
        mu = b_mu if s_a == s_b else a_mu + (b_mu - a_mu) * s_a / (s_a - s_b)
        iterations += 1
    x = x_of(mu)
    if np.isfinite(b):
        over = float(c @ x) - b
        if over > 0:
            # rounding in the interpolation; push the free coordinates back
            free = (x > lo) & (c > 0)
            if np.any(free):
                x[free] -= over * c[free] / float(c[free] @ c[free])
                x = np.clip(x, lo, up)
    res = _box_coupled_residual(x, h, l, lo, up, c, b, mu)
    status = OPTIMAL if res <= tol * (1 + float(np.max(np.abs(l), initial=0.0)) + mu * float(np.max(c, initial=0.0))) else MAX_ITER
    return QpSolution(x, p.objective(x), res, iterations, status,
                      multipliers=np.array([mu]))


def _box_coupled_residual(x, h, l, lo, up, c, b, mu) -> float:
    grad = h * x + l + mu * c
    stat = float(np.max(np.abs(x - np.clip(x - grad, lo, up)), initial=0.0))
    if not np.isfinite(b):
        return stat
    gap = float(c @ x) - b
    return max(stat, max(gap, 0.0), abs(mu * gap))


# -- probability simplex -----------------------------------------------------

def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(y) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0)


def solve_simplex(p: QpProblem, tol: float = 1e-8, max_iter: int = 10_000) -> QpSolution:
    if p.variant != SIMPLEX:
        raise ValueError(f"expected a {SIMPLEX} problem, got {p.variant}")
    n = p.n
    if n == 0:
        raise ValueError("empty simplex problem")
    lip = float(np.max(p.hessian_diag, initial=0.0)) + 1.0
    if p.hessian_lowrank is not None:
        lip += float(np.sum(p.hessian_lowrank ** 2))
    x = np.full(n, 1.0 / n)
    y, x_prev, mom = x, x, 1.0
    best_x, best_f = x, p.objective(x)
    status = MAX_ITER
    pg = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        # fixed 1/L step from the extrapolated point (Nesterov momentum);
        # plain steps crawl along the flat valleys of the rank-1 objective
        x_new = project_simplex(y - (p.hess_vec(y) + p.linear) / lip)
        pg = lip * float(np.linalg.norm(x_new - y))
        if float((y - x_new) @ (x_new - x)) > 0:
            mom = 1.0  # restart when momentum points uphill
        mom_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom * mom))
        x_prev, x = x, x_new
        y = x + ((mom - 1.0) / mom_next) * (x - x_prev)
        mom = mom_next
        f = p.objective(x)
        if f <= best_f:
            best_x, best_f = x, f
        if pg <= tol or pg == 0.0:
            # certify at x itself with a plain projected-gradient step
            pg = lip * float(np.linalg.norm(
                project_simplex(x - (p.hess_vec(x) + p.linear) / lip) - x))
            if pg <= tol:
                status = OPTIMAL
                best_x, best_f = x, f
                break
    return QpSolution(best_x, best_f, pg, it, status)


# -- general sparse rows (ADMM) ----------------------------------------------

def _constraint_matrix(p: QpProblem):
    n = p.n
    rows, cols, vals = [], [], []
    lo_rows, up_rows, eq = [], [], []
    for i, c in enumerate(p.constraints):
        if isinstance(c.coeffs, dict):
            items = c.coeffs.items()
        else:
            dense = np.asarray(c.coeffs, dtype=float)
            items = ((j, v) for j, v in enumerate(dense) if v != 0)
        for j, v in items:
            rows.append(i)
            cols.append(j)
            vals.append(float(v))
        lo_rows.append(c.rhs if c.relation == "=" else -np.inf)
        up_rows.append(c.rhs)
        eq.append(c.relation == "=")
    m = len(p.constraints)
    a_rows = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    a = sp.vstack([a_rows, sp.identity(n, format="csc")], format="csc")
    lo = np.concatenate([np.array(lo_rows, dtype=float), p.lower])
    up = np.concatenate([np.array(up_rows, dtype=float), p.upper])
    is_eq = np.concatenate([np.array(eq, dtype=bool), p.lower == p.upper])
    return a, lo, up, is_eq, m


def solve_general(p: QpProblem, tol: float = 1e-6, max_iter: int = 50_000,
                  rho: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6) -> QpSolution:
    """ADMM with adaptive penalty; deterministic for identical input."""
    if p.variant != GENERAL:
        raise ValueError(f"expected a {GENERAL} problem, got {p.variant}")
    if p.hessian_lowrank is not None:
        raise ValueError("solve_general takes a diagonal Hessian only")
    n = p.n
    hdiag = np.where(p.hessian_diag > 0, p.hessian_diag, RIDGE)
    q = p.linear
    a, lo, up, is_eq, m = _constraint_matrix(p)
    at = a.T.tocsc()
    hmat = sp.diags(hdiag, format="csc")

    def rho_vec(r):
        return np.where(is_eq, 1e3 * r, r)

    def factor(rv):
        kkt = (hmat + sigma * sp.identity(n, format="csc") + at @ sp.diags(rv) @ a).tocsc()
        return factorized(kkt)

    rv = rho_vec(rho)
    solve = factor(rv)
    x = np.clip(np.zeros(n), p.lower, p.upper)
    z = np.clip(a @ x, lo, up)
    y = np.zeros(len(lo))
    status = MAX_ITER
    r_prim = r_dual = np.inf
    it = 0
    q_norm = float(np.max(np.abs(q), initial=0.0))
    for it in range(1, max_iter + 1):
        x_t = solve(sigma * x - q + at @ (rv * z - y))
        z_t = a @ x_t
        x_new = alpha * x_t + (1 - alpha) * x
        z_relax = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_relax + y / rv, lo, up)
        y_new = y + rv * (z_relax - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % 10 == 0 or it == max_iter:
            ax = a @ x
            hx = hdiag * x
            aty = at @ y
            r_prim = float(np.max(np.abs(ax - z)))
            r_dual = float(np.max(np.abs(hx + q + aty)))
            scale_p = max(float(np.max(np.abs(ax))), float(np.max(np.abs(z))), 1.0)
            scale_d = max(float(np.max(np.abs(hx))), float(np.max(np.abs(aty))), q_norm, 1.0)
            if r_prim <= 0.1 * tol and r_dual <= tol * scale_d:
                status = OPTIMAL
                break
            if _infeasibility_certificate(dy, at, lo, up):
                status = INFEASIBLE
                break
            if it % 50 == 0:
                ratio = np.sqrt((r_prim / scale_p) / max(r_dual / scale_d, 1e-30))
                new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rv = rho_vec(rho)
                    solve = factor(rv)
    x = np.clip(x, p.lower, p.upper)
    feas = _feasibility_residual(p, a, x, lo, up, m)
    if status == MAX_ITER and feas > tol:
        status = INFEASIBLE
    if status == OPTIMAL and feas > tol:
        status = MAX_ITER
    return QpSolution(x, p.objective(x), max(feas, r_dual if np.isfinite(r_dual) else 0.0),
                      it, status, multipliers=y[:m].copy())


def _infeasibility_certificate(dy, at, lo, up, eps: float = 1e-5) -> bool:
    norm = float(np.max(np.abs(dy)))
    if norm < 1e-12:
        return False
    d = dy / norm
    if float(np.max(np.abs(at @ d))) > eps:
        return False
    pos, neg = np.maximum(d, 0), np.minimum(d, 0)
    with np.errstate(invalid="ignore"):
        up_term = np.where(pos > 0, up * pos, 0.0)
        lo_term = np.where(neg < 0, lo * neg, 0.0)
    if np.any(~np.isfinite(up_term)) or np.any(~np.isfinite(lo_term)):
        return False
    return float(up_term.sum() + lo_term.sum()) < -eps


def _feasibility_residual(p, a, x, lo, up, m) -> float:
    if m == 0:
        return 0.0
    ax = (a @ x)[:m]
    return float(np.max(np.maximum(lo[:m] - ax, 0) + np.maximum(ax - up[:m], 0)))


def solve_lp_highs(p: QpProblem) -> QpSolution:
    """Exact LP route for a ``general`` problem with a zero Hessian (HiGHS)."""
    from scipy.optimize import linprog

    if p.variant != GENERAL or np.any(p.hessian_diag != 0) or p.hessian_lowrank is not None:
        raise ValueError("solve_lp_highs takes a general problem with zero Hessian")
    a, lo, up, is_eq, m = _constraint_matrix(p)
    rows = a[:m].tocsr()
    eq = is_eq[:m]
    res = linprog(
        p.linear,
        A_ub=rows[~eq] if np.any(~eq) else None, b_ub=up[:m][~eq] if np.any(~eq) else None,
        A_eq=rows[eq] if np.any(eq) else None, b_eq=up[:m][eq] if np.any(eq) else None,
        bounds=np.column_stack([p.lower, p.upper]), method="highs",
    )
    if res.status == 2:
        return QpSolution(np.clip(np.zeros(p.n), p.lower, p.upper), np.inf, np.inf, 0, INFEASIBLE)
    if res.status != 0:
        return QpSolution(np.zeros(p.n), np.inf, np.inf, int(res.nit), MAX_ITER)
    x = np.asarray(res.x, dtype=float)
    feas = _feasibility_residual(p, a, x, lo, up, m)
    return QpSolution(x, p.objective(x), feas, int(res.nit), OPTIMAL)


def solve(p: QpProblem) -> QpSolution:
    """Dispatch on ``p.variant``."""
    return {BOXED_COUPLED: solve_boxed_coupled, SIMPLEX: solve_simplex,
            GENERAL: solve_general}[p.variant](p)
