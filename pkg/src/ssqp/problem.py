"""Problem abstraction: equality and box constrained stochastic programs.

A problem is ``min_x E F(x; sample)`` subject to ``c(x) = 0`` and
``lower <= x <= upper``. Bounds may be infinite. All derivative oracles are
hand-coded; :func:`finite_difference_check` exists to keep them honest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidStepSize,
    NoExactOracle,
    NonFiniteValue,
    TolTooLarge,
)


@dataclass(frozen=True)
class Kernels:
    """Compiled oracles used by the fused run loop.

    ``constraint_fn(x, params) -> (c, J, hessians)`` and
    ``sample_fn(x, sample, params) -> (F, grad, hess)`` must be jitted (or
    plain python when numba is disabled) and agree with the python oracles.
    """

    constraint_fn: Callable
    sample_fn: Callable
    params: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    d: int
    m: int
    lower: np.ndarray
    upper: np.ndarray
    constraint_oracle: Callable[[np.ndarray], tuple]
    sample_oracle: Callable[[np.ndarray, np.ndarray], tuple]
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    exact_oracle: Optional[Callable[[np.ndarray], tuple]] = None
    exact_is_approximate: bool = False
    kernels: Optional[Kernels] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if self.d < 1 or self.m < 0:
            raise DimensionMismatch(f"bad dimensions d={self.d}, m={self.m}")
        if lower.shape != (self.d,) or upper.shape != (self.d,):
            raise DimensionMismatch("bounds must have length d")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise NonFiniteValue("bounds contain NaN")
        if not np.all(lower < upper):
            raise ValueError("lower < upper must hold strictly; encode equal bounds as equalities")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


@dataclass
class PrimalDual:
    x: np.ndarray
    lam: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray

    @classmethod
    def initial(cls, p: ProblemSpec, x) -> "PrimalDual":
        """Primal point ``x`` with zero multipliers."""
        x = np.asarray(x, dtype=float).copy()
        if x.shape != (p.d,):
            raise DimensionMismatch(f"x has shape {x.shape}, expected ({p.d},)")
        return cls(x, np.zeros(p.m), np.zeros(p.d), np.zeros(p.d))

    def copy(self) -> "PrimalDual":
        return PrimalDual(self.x.copy(), self.lam.copy(), self.mu1.copy(), self.mu2.copy())

    def stack(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.mu1, self.mu2])


@dataclass(frozen=True)
class ActiveSets:
    a_lower: tuple
    a_upper: tuple

    @classmethod
    def from_masks(cls, lo, up) -> "ActiveSets":
        return cls(tuple(int(i) for i in np.flatnonzero(lo)), tuple(int(i) for i in np.flatnonzero(up)))

    def masks(self, d: int):
        lo = np.zeros(d, dtype=bool)
        up = np.zeros(d, dtype=bool)
        lo[list(self.a_lower)] = True
        up[list(self.a_upper)] = True
        return lo, up

    def __len__(self):
        return len(self.a_lower) + len(self.a_upper)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteValue(f"{name} returned non-finite values")


def eval_constraints(p: ProblemSpec, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (p.d,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({p.d},)")
    c, J, hs = p.constraint_oracle(x)
    c = np.asarray(c, dtype=float).reshape(-1)
    J = np.asarray(J, dtype=float).reshape(-1, p.d) if p.m else np.zeros((0, p.d))
    hs = np.asarray(hs, dtype=float).reshape(-1, p.d, p.d) if p.m else np.zeros((0, p.d, p.d))
    if c.shape != (p.m,) or J.shape != (p.m, p.d) or hs.shape != (p.m, p.d, p.d):
        raise DimensionMismatch(
            f"constraint oracle shapes c{c.shape} J{J.shape} H{hs.shape} for m={p.m}, d={p.d}"
        )
    _check_finite("constraint oracle", c, J, hs)
    return c, J, hs


def active_sets(x, lower, upper, tol: float = 0.0) -> ActiveSets:
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if tol < 0:
        raise TolTooLarge("tol must be nonnegative")
    both = np.isfinite(lower) & np.isfinite(upper)
    if np.any(both) and not tol < np.min((upper[both] - lower[both]) / 2):
        raise TolTooLarge(f"tol={tol} lets a coordinate be active at both bounds")
    lo = np.isfinite(lower) & (x - lower <= tol)
    up = np.isfinite(upper) & (upper - x <= tol)
    return ActiveSets.from_masks(lo, up)


def lagrangian_gradient(p: ProblemSpec, pd: PrimalDual, g, J=None):
    g = np.asarray(g, dtype=float)
    if g.shape != (p.d,):
        raise DimensionMismatch("gradient has wrong length")
    if J is None:
        _, J, _ = eval_constraints(p, pd.x)
    return g + J.T @ pd.lam - pd.mu1 + pd.mu2


def _complementarity(bound, diff, mu):
    out = np.zeros_like(mu)
    fin = np.isfinite(bound)
    out[fin] = mu[fin] * diff[fin]
    return out


def kkt_residual(p: ProblemSpec, pd: PrimalDual, g):
    c, J, _ = eval_constraints(p, pd.x)
    grad_l = lagrangian_gradient(p, pd, g, J)
    r = np.concatenate(
        [
            grad_l,
            c,
            _complementarity(p.lower, p.lower - pd.x, pd.mu1),
            _complementarity(p.upper, pd.x - p.upper, pd.mu2),
        ]
    )
    _check_finite("kkt residual", r)
    return r


def merit(p: ProblemSpec, x, rho: float) -> float:
    if p.exact_oracle is None:
        raise NoExactOracle(f"problem {p.name!r} has no population oracle")
    f = p.exact_oracle(np.asarray(x, dtype=float))[0]
    c, _, _ = eval_constraints(p, x)
    return float(f + rho * np.linalg.norm(c))


def _rel_err(approx, exact):
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if approx.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - exact) / np.maximum(1.0, np.abs(exact))))


def finite_difference_check(p: ProblemSpec, x, h: float = 1e-5, sample=None, use_exact: Optional[bool] = None):
    """Central differences against the analytic oracles.

    Returns ``(grad_err, hess_err)``: the worst elementwise relative error of
    the objective gradient and constraint Jacobian, and of the objective and
    constraint Hessians. The objective oracle is the population one when
    available (or ``use_exact=True``); otherwise the sample oracle at a fixed
    ``sample`` (drawn from the sampler with seed 0 if omitted).
    """
    if not (0 < h <= 1e-3):
        raise InvalidStepSize(f"h must lie in (0, 1e-3], got {h}")
    x = np.asarray(x, dtype=float)
    if use_exact is None:
        use_exact = p.exact_oracle is not None
    if use_exact:
        if p.exact_oracle is None:
            raise NoExactOracle(p.name)
        oracle = p.exact_oracle
    else:
        if sample is None:
            sample = p.sampler(np.random.default_rng(0), 1)[0]
        oracle = lambda z: p.sample_oracle(z, sample)  # noqa: E731

    f0, g0, h0 = oracle(x)
    _, J0, ch0 = eval_constraints(p, x)
    g_fd = np.empty(p.d)
    h_fd = np.empty((p.d, p.d))
    J_fd = np.empty((p.m, p.d))
    ch_fd = np.empty((p.m, p.d, p.d))
    for j in range(p.d):
        e = np.zeros(p.d)
        e[j] = h
        fp, gp, _ = oracle(x + e)
        fm, gm, _ = oracle(x - e)
        g_fd[j] = (fp - fm) / (2 * h)
        h_fd[:, j] = (np.asarray(gp) - np.asarray(gm)) / (2 * h)
        cp, Jp, _ = eval_constraints(p, x + e)
        cm, Jm, _ = eval_constraints(p, x - e)
        J_fd[:, j] = (cp - cm) / (2 * h)
        ch_fd[:, :, j] = (Jp - Jm) / (2 * h)
    grad_err = max(_rel_err(g_fd, g0), _rel_err(J_fd, J0))
    hess_err = max(_rel_err(h_fd, h0), _rel_err(ch_fd, ch0))
    return grad_err, hess_err
