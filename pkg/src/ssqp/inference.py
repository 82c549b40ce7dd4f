"""Plug-in sandwich covariance, confidence intervals and regions.

The joint estimate is ``w = (x, lambda, mu_A)``: the primal iterate, the
equality multipliers and the multipliers of the bounds active in the latest
subproblem. Its covariance is estimated by ``Omega = H^-1 Sigma H^-1`` with
``H`` the bordered KKT matrix and ``Sigma`` the running gradient covariance
padded with zeros on the dual blocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import _kernels as K
from .errors import (
    DimensionMismatch,
    DomainError,
    EmptyAccumulator,
    NegativeVariance,
    NoAnalyticMoments,
    SingularH,
)
from .problem import ActiveSets, PrimalDual, ProblemSpec, active_sets, eval_constraints

COND_LIMIT = 1e12
PINV_RTOL = 1e-10


@dataclass
class CovarianceAccumulator:
    """Welford running mean and scatter (sum of centred outer products)."""

    count: int
    mean: np.ndarray
    scatter: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "CovarianceAccumulator":
        return cls(0, np.zeros(d), np.zeros((d, d)))

    def copy(self) -> "CovarianceAccumulator":
        return CovarianceAccumulator(self.count, self.mean.copy(), self.scatter.copy())


def accumulate(acc: CovarianceAccumulator, grad_sample) -> CovarianceAccumulator:
    """Add one gradient sample in place and return the accumulator."""
    g = np.asarray(grad_sample, dtype=float)
    if g.shape != acc.mean.shape:
        raise DimensionMismatch(f"sample has shape {g.shape}, expected {acc.mean.shape}")
    count = np.array([float(acc.count)])
    K.welford(count, acc.mean, acc.scatter, g)
    acc.count = int(count[0])
    return acc


def merge(a: CovarianceAccumulator, b: CovarianceAccumulator) -> CovarianceAccumulator:
    """Pooled accumulator of two disjoint sample streams."""
    if a.count == 0:
        return b.copy()
    if b.count == 0:
        return a.copy()
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    scatter = a.scatter + b.scatter + np.outer(delta, delta) * (a.count * b.count / n)
    return CovarianceAccumulator(n, mean, scatter)


def sample_covariance(acc: CovarianceAccumulator) -> np.ndarray:
    """Divide-by-count covariance of the accumulated samples."""
    if acc.count < 1:
        raise EmptyAccumulator("no samples accumulated")
    cov = acc.scatter / acc.count
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class PluginCovariance:
    H: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray
    active: Optional[ActiveSets] = None


@dataclass(frozen=True)
class OracleCovariance:
    H_star: np.ndarray
    Sigma_star: np.ndarray
    Omega_star: np.ndarray
    eta: float
    active: Optional[ActiveSets] = None


def active_jacobian(J, active: ActiveSets, d: int) -> np.ndarray:
    """Rows of the equality Jacobian followed by the active bound gradients.

    A lower bound ``l_i - x_i <= 0`` contributes ``-e_i``; an upper bound
    ``x_i - u_i <= 0`` contributes ``+e_i``.
    """
    J = np.asarray(J, dtype=float).reshape(-1, d)
    rows = [J]
    for i in active.a_lower:
        e = np.zeros((1, d))
        e[0, i] = -1.0
        rows.append(e)
    for i in active.a_upper:
        e = np.zeros((1, d))
        e[0, i] = 1.0
        rows.append(e)
    return np.vstack(rows)


def _sandwich(B, J_active, Sigma_grad):
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    J_active = np.asarray(J_active, dtype=float).reshape(-1, d)
    Sigma_grad = np.asarray(Sigma_grad, dtype=float)
    if Sigma_grad.shape != (d, d):
        raise DimensionMismatch("gradient covariance must be d x d")
    r = J_active.shape[0]
    H = np.zeros((d + r, d + r))
    H[:d, :d] = 0.5 * (B + B.T)
    H[:d, d:] = J_active.T
    H[d:, :d] = J_active
    S = np.zeros_like(H)
    S[:d, :d] = Sigma_grad
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > COND_LIMIT:
        raise SingularH("KKT matrix is singular at this active set; inference is not valid")
    X = np.linalg.solve(H, S)
    omega = np.linalg.solve(H, X.T).T
    return H, S, 0.5 * (omega + omega.T)


def plugin_omega(B_bar, J_active, Sigma_grad, active: Optional[ActiveSets] = None) -> PluginCovariance:
    H, S, omega = _sandwich(B_bar, J_active, Sigma_grad)
    return PluginCovariance(H, S, omega, active)


def normality_eta(b1: float, iota1: float = 1.0) -> float:
    """Scaling of the limiting covariance: 1/2 for b1 < 1, iota1/(2 iota1 - 1) at b1 = 1."""
    if b1 < 1.0:
        return 0.5
    if iota1 <= 0.5:
        raise DomainError("iota1 must exceed 1/2 when b1 = 1")
    return iota1 / (2.0 * iota1 - 1.0)


def oracle_omega(p: ProblemSpec, pd_star: PrimalDual, moments=None, b1: float = 0.751,
                 iota1: float = 1.0) -> OracleCovariance:
    """Population sandwich at a known solution.

    ``moments`` is ``(hess_f, grad_cov)`` at ``pd_star.x``; when omitted it is
    taken from ``p.meta["population_moments"]``.
    """
    if moments is None:
        fn = p.meta.get("population_moments")
        if fn is None:
            raise NoAnalyticMoments(f"problem {p.name!r} has no closed-form moments")
        moments = fn(pd_star.x)
    hess_f, grad_cov = moments
    _, J, chess = eval_constraints(p, pd_star.x)
    hess_l = np.asarray(hess_f, dtype=float) + np.tensordot(pd_star.lam, chess, axes=1)
    act = active_sets(pd_star.x, p.lower, p.upper, 0.0)
    H, S, omega = _sandwich(hess_l, active_jacobian(J, act, p.d), grad_cov)
    return OracleCovariance(H, S, omega, normality_eta(b1, iota1), act)


def stack_w(pd: PrimalDual, active: ActiveSets) -> np.ndarray:
    """``w = (x, lambda, mu_A)`` in the row order of :func:`active_jacobian`."""
    return np.concatenate([pd.x, pd.lam, pd.mu1[list(active.a_lower)], pd.mu2[list(active.a_upper)]])


def normal_quantile(prob: float) -> float:
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    return float(special.ndtri(prob))


def chi2_quantile(dof: int, prob: float) -> float:
    if dof < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {dof}")
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    return float(special.chdtri(dof, 1.0 - prob))


def _variance(Omega, v):
    v = np.asarray(v, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    if Omega.shape != (v.size, v.size):
        raise DimensionMismatch("v and Omega disagree")
    var = float(v @ Omega @ v)
    if var < -1e-12:
        raise NegativeVariance(f"v'Omega v = {var}")
    return max(var, 0.0)


def confidence_interval(w, Omega, alpha_bar: float, v, level: float = 0.95, eta: float = 1.0):
    """Interval ``v'w -/+ z * sqrt(eta * alpha_bar * v'Omega v)``.

    ``eta`` is the normality scaling of :func:`normality_eta`; leave it at 1
    to use ``Omega`` as the full covariance of ``w / sqrt(alpha_bar)``.
    """
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must lie in (0, 1), got {level}")
    centre = float(np.asarray(v, dtype=float) @ np.asarray(w, dtype=float))
    half = normal_quantile(1.0 - (1.0 - level) / 2.0) * np.sqrt(eta * alpha_bar * _variance(Omega, v))
    return centre - half, centre + half


def p_value(w, Omega, alpha_bar: float, v, null_value: float = 0.0, eta: float = 1.0) -> float:
    """Two-sided p-value for ``v'w* = null_value``."""
    sd = np.sqrt(eta * alpha_bar * _variance(Omega, v))
    z = (float(np.asarray(v, dtype=float) @ np.asarray(w, dtype=float)) - null_value)
    if sd == 0.0:
        return 1.0 if z == 0.0 else 0.0
    return float(2.0 * special.ndtr(-abs(z) / sd))


def _pinv_sym(Omega):
    w, V = np.linalg.eigh(0.5 * (Omega + Omega.T))
    top = max(np.max(np.abs(w)), 0.0)
    keep = w > PINV_RTOL * top if top > 0 else np.zeros_like(w, dtype=bool)
    inv = (V[:, keep] / w[keep]) @ V[:, keep].T
    return inv, int(keep.sum())


def region_statistic(w_cand, w_k, Omega, alpha_bar: float, eta: float = 1.0):
    """``(dw' Omega^+ dw) / (eta * alpha_bar)`` and the numerical rank of Omega."""
    dw = np.asarray(w_cand, dtype=float) - np.asarray(w_k, dtype=float)
    inv, rank = _pinv_sym(np.asarray(Omega, dtype=float))
    return float(dw @ inv @ dw) / (eta * alpha_bar), rank


def region_membership(w_cand, w_k, Omega, alpha_bar: float, level: float = 0.95,
                      dof: Optional[int] = None, eta: float = 1.0) -> bool:
    """Membership of ``w_cand`` in the chi-square confidence region.

    ``dof`` defaults to the numerical rank of ``Omega``; a mismatching value is
    replaced by the rank with a warning.
    """
    stat, rank = region_statistic(w_cand, w_k, Omega, alpha_bar, eta)
    if rank == 0:
        return stat == 0.0
    if dof is None:
        dof = rank
    elif dof != rank:
        warnings.warn(f"Omega has numerical rank {rank}, expected {dof}; using {rank}", RuntimeWarning)
        dof = rank
    return stat <= chi2_quantile(dof, level)
