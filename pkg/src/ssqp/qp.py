"""Convex QP and bound-constrained least squares.

``solve_qp`` handles ``min 1/2 d'Bd + g'd  s.t.  A d = b, lb <= d <= ub`` with
a primal active-set method, so the returned active sets and multipliers are
exact. ``brute_force_qp`` enumerates every active set and is the test oracle.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, TooLarge
from .problem import ActiveSets

DEFAULT_TOL = 1e-9


class QpStatus(enum.IntEnum):
    Optimal = K.OPTIMAL
    Infeasible = K.INFEASIBLE
    RankDeficient = K.RANK_DEFICIENT
    IterationLimit = K.ITERATION_LIMIT
    IndefiniteReduced = K.INDEFINITE_REDUCED


@dataclass(frozen=True)
class QpProblem:
    B: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        B = np.ascontiguousarray(self.B, dtype=float)
        g = np.ascontiguousarray(self.g, dtype=float).reshape(-1)
        n = g.shape[0]
        A = np.ascontiguousarray(self.A, dtype=float).reshape(-1, n)
        b = np.ascontiguousarray(self.b, dtype=float).reshape(-1)
        lb = np.ascontiguousarray(self.lb, dtype=float).reshape(-1)
        ub = np.ascontiguousarray(self.ub, dtype=float).reshape(-1)
        if B.shape != (n, n) or lb.shape != (n,) or ub.shape != (n,) or b.shape != (A.shape[0],):
            raise DimensionMismatch("inconsistent QP dimensions")
        if np.max(np.abs(B - B.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(B), initial=0.0)):
            raise ValueError("B must be symmetric")
        if not np.all(lb < ub):
            raise ValueError("lb < ub must hold elementwise")
        for name, val in (("B", B), ("g", g), ("A", A), ("b", b), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, d) -> float:
        return float(0.5 * d @ self.B @ d + self.g @ d)


@dataclass(frozen=True)
class QpSolution:
    d: np.ndarray
    lam: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    active: ActiveSets
    status: QpStatus
    iterations: int = 0


def default_max_iter(n: int, me: int) -> int:
    return 10 * (n + me) + 100


def solve_qp(qp: QpProblem, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
             hint: Optional[ActiveSets] = None) -> QpSolution:
    """Solve the QP; ``hint`` warm-starts from a previous working set."""
    n = qp.n
    if max_iter is None:
        max_iter = default_max_iter(n, qp.A.shape[0])
    if hint is None:
        hlo = np.zeros(n, dtype=bool)
        hup = np.zeros(n, dtype=bool)
    else:
        hlo, hup = hint.masks(n)
    d, lam, mul, muu, alo, aup, status, its = K.qp_kernel(
        qp.B, qp.g, qp.A, qp.b, qp.lb, qp.ub, float(tol), int(max_iter), hlo, hup, hint is not None
    )
    return QpSolution(d, lam, mul, muu, ActiveSets.from_masks(alo, aup), QpStatus(status), int(its))


def solve_bcls(M, y, lb, ub, max_iter: Optional[int] = None):
    """``min ||M z - y||^2`` over ``lb <= z <= ub``; returns ``(z, value)``."""
    M = np.ascontiguousarray(M, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    if M.ndim != 2 or M.shape[0] != y.shape[0]:
        raise DimensionMismatch("M and y disagree")
    n = M.shape[1]
    lb = np.ascontiguousarray(lb, dtype=float).reshape(-1)
    ub = np.ascontiguousarray(ub, dtype=float).reshape(-1)
    if lb.shape != (n,) or ub.shape != (n,):
        raise DimensionMismatch("bounds have wrong length")
    if not np.all(lb <= ub):
        raise ValueError("lb <= ub must hold elementwise")
    if max_iter is None:
        max_iter = 10 * n + 100
    z, value, _ = K.bcls_kernel(M, y, lb, ub, int(max_iter))
    return z, float(value)


def kkt_violation(qp: QpProblem, sol: QpSolution) -> dict:
    """Stationarity, feasibility, sign and complementarity violations."""
    d = sol.d
    stat = qp.B @ d + qp.g + qp.A.T @ sol.lam - sol.mu_lower + sol.mu_upper
    lo_gap = np.where(np.isfinite(qp.lb), d - qp.lb, 0.0)
    up_gap = np.where(np.isfinite(qp.ub), qp.ub - d, 0.0)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "equality": float(np.max(np.abs(qp.A @ d - qp.b), initial=0.0)),
        "bounds": float(max(0.0, -np.min(lo_gap, initial=0.0), -np.min(up_gap, initial=0.0))),
        "sign": float(max(0.0, -np.min(sol.mu_lower, initial=0.0), -np.min(sol.mu_upper, initial=0.0))),
        "complementarity": float(
            max(np.max(np.abs(sol.mu_lower * lo_gap), initial=0.0), np.max(np.abs(sol.mu_upper * up_gap), initial=0.0))
        ),
    }


def brute_force_qp(qp: QpProblem, tol: float = 1e-9) -> QpSolution:
    """Enumerate every assignment of coordinates to {free, lower, upper}."""
    n = qp.n
    if n > 6:
        raise TooLarge(f"brute force is limited to d <= 6, got {n}")
    me = qp.A.shape[0]
    best = None
    best_obj = np.inf
    for assign in itertools.product((0, 1, 2), repeat=n):
        assign = np.array(assign)
        if np.any((assign == 1) & ~np.isfinite(qp.lb)) or np.any((assign == 2) & ~np.isfinite(qp.ub)):
            continue
        fixed = np.zeros(n)
        fixed[assign == 1] = qp.lb[assign == 1]
        fixed[assign == 2] = qp.ub[assign == 2]
        free = assign == 0
        nf = int(free.sum())
        Af = qp.A[:, free]
        kkt = np.zeros((nf + me, nf + me))
        kkt[:nf, :nf] = qp.B[np.ix_(free, free)]
        kkt[:nf, nf:] = Af.T
        kkt[nf:, :nf] = Af
        rhs = np.concatenate([-qp.g[free] - qp.B[np.ix_(free, ~free)] @ fixed[~free], qp.b - qp.A[:, ~free] @ fixed[~free]])
        if kkt.size and np.linalg.cond(kkt) > 1e12:
            continue
        sol = np.zeros(0)
        if kkt.size:
            sol = np.linalg.solve(kkt, rhs)
            sol += np.linalg.solve(kkt, rhs - kkt @ sol)  # one refinement step
        d = fixed.copy()
        d[free] = sol[:nf]
        lam = sol[nf:]
        if np.any(d < qp.lb - tol) or np.any(d > qp.ub + tol):
            continue
        if me and np.max(np.abs(qp.A @ d - qp.b)) > 1e-7:
            continue
        s = qp.B @ d + qp.g + qp.A.T @ lam
        mul = np.where(assign == 1, s, 0.0)
        muu = np.where(assign == 2, -s, 0.0)
        if np.any(mul < -tol) or np.any(muu < -tol):
            continue
        obj = qp.objective(d)
        if obj < best_obj - 1e-14 * max(1.0, abs(obj)):
            best_obj = obj
            best = QpSolution(
                d, lam, np.maximum(mul, 0.0), np.maximum(muu, 0.0),
                ActiveSets.from_masks(assign == 1, assign == 2), QpStatus.Optimal,
            )
    if best is None:
        return QpSolution(np.zeros(n), np.zeros(me), np.zeros(n), np.zeros(n), ActiveSets((), ()), QpStatus.Infeasible)
    return best


def random_qp(rng: np.random.Generator, max_n: int = 4, max_me: int = 2) -> QpProblem:
    """Feasible strongly convex instance with a finite box, for equivalence checks."""
    n = int(rng.integers(1, max_n + 1))
    me = int(rng.integers(0, min(max_me, n) + 1))
    L = rng.normal(size=(n, n))
    B = L.T @ L + 0.1 * np.eye(n)
    g = 3.0 * rng.normal(size=n)
    lb = -rng.uniform(0.1, 2.0, n)
    ub = rng.uniform(0.1, 2.0, n)
    A = rng.normal(size=(me, n))
    b = A @ rng.uniform(lb, ub)
    return QpProblem(B, g, A, b, lb, ub)
