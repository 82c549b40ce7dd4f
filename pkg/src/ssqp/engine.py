"""The online SSQP estimator.

One iteration: pick the relaxation ``theta``, draw a sample, update the
gradient and Hessian averages, convexify the Lagrangian Hessian on the
null space of the near-active constraints, solve the relaxed QP and move the
primal-dual triple by the (possibly random) stepsize.

:func:`run` drives many iterations. When the problem ships compiled oracles
and no observer is attached it uses a fused compiled loop; otherwise it calls
:func:`ssqp_step` per sample. Both paths share kernels and the random stream
and therefore produce identical trajectories.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import _kernels as K
from .errors import EgmfcqFailure, NoConvergence, QpFailure
from .inference import CovarianceAccumulator, accumulate
from .problem import ActiveSets, PrimalDual, ProblemSpec, eval_constraints
from .qp import QpProblem, QpStatus, default_max_iter, solve_bcls, solve_qp

CHUNK = 1024


class HessianMode(str, enum.Enum):
    Averaged = "averaged"
    Identity = "identity"


class StepsizeMode(str, enum.Enum):
    Deterministic = "deterministic"
    UniformRandom = "uniform_random"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    key = str(value).strip().lower()
    for member in cls:
        if key in (member.value, member.name.lower()):
            return member
    raise ValueError(f"unknown {cls.__name__}: {value!r}")


@dataclass(frozen=True)
class SsqpConfig:
    iota1: float = 1.0
    b1: float = 0.751
    iota2: float = 1.0
    b2: float = 0.501
    iota3: float = 1.0
    b3: float = 1.0
    tau: float = 0.5
    psi: float = 1.0
    p_adapt: float = 2.0
    theta_min: float = 1e-8
    eps_active: float = 1e-2
    omega: float = 1e-2
    kappa_max: float = 1e6
    hessian_mode: HessianMode = HessianMode.Averaged
    stepsize_mode: StepsizeMode = StepsizeMode.Deterministic
    qp_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "hessian_mode", _enum(HessianMode, self.hessian_mode))
        object.__setattr__(self, "stepsize_mode", _enum(StepsizeMode, self.stepsize_mode))
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.psi < 0 or self.p_adapt < 1:
            raise ValueError("need psi >= 0 and p_adapt >= 1")
        for name in ("iota1", "iota2", "iota3", "theta_min", "eps_active", "omega", "kappa_max", "qp_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.kappa_max < self.omega:
            raise ValueError("kappa_max must be at least omega")

    def check_inference(self):
        """Raise unless the schedule satisfies 0.5 < b2 < b1 <= 1."""
        if not (0.5 < self.b2 < self.b1 <= 1.0):
            raise ValueError(f"inference needs 0.5 < b2 < b1 <= 1, got b1={self.b1}, b2={self.b2}")

    @property
    def schedule_array(self) -> np.ndarray:
        return np.array([self.iota1, self.b1, self.iota2, self.b2, self.iota3, self.b3])


@dataclass
class SsqpState:
    k: int
    pd: PrimalDual
    g_bar: np.ndarray
    q_bar: np.ndarray
    theta_last: float
    rng: np.random.Generator
    hint: Optional[ActiveSets] = None

    def copy(self) -> "SsqpState":
        return SsqpState(self.k, self.pd.copy(), self.g_bar.copy(), self.q_bar.copy(), self.theta_last, self.rng, self.hint)


def initial_state(p: ProblemSpec, init: PrimalDual, seed=0) -> SsqpState:
    x = np.asarray(init.x, dtype=float)
    if np.any(x < p.lower) or np.any(x > p.upper):
        raise ValueError("initial x must lie within the bounds")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return SsqpState(0, init.copy(), np.zeros(p.d), np.zeros((p.d, p.d)), 1.0, rng)


@dataclass(frozen=True)
class StepReport:
    delta_x: np.ndarray
    lambda_sub: np.ndarray
    mu_sub_lower: np.ndarray
    mu_sub_upper: np.ndarray
    theta: float
    alpha: float
    alpha_bar: float
    shift_delta: float
    hessian_level: int
    theta_retried: bool
    qp_status: QpStatus
    active: ActiveSets
    B_bar: np.ndarray
    J: np.ndarray
    grad_sample: np.ndarray


def schedules(k: int, cfg: SsqpConfig):
    if k < 0:
        raise ValueError("k must be nonnegative")
    s = cfg.schedule_array
    return K.schedule(k, s[0], s[1]), K.schedule(k, s[2], s[3]), K.schedule(k, s[4], s[5])


def _qp_max_iter(p: ProblemSpec) -> int:
    return default_max_iter(p.d, p.m)


def select_theta(p: ProblemSpec, x, cfg: SsqpConfig, c=None, J=None) -> float:
    """Largest theta in {1, tau, tau^2, ...} making the linearised constraints feasible."""
    x = np.asarray(x, dtype=float)
    if c is None or J is None:
        c, J, _ = eval_constraints(p, x)
    theta, ok = K.theta_kernel(c, J, x, p.lower, p.upper, cfg.tau, cfg.theta_min, _qp_max_iter(p))
    if not ok:
        raise EgmfcqFailure(f"relaxation fell below theta_min={cfg.theta_min} at x={x}")
    return float(theta)


def update_averages(state: SsqpState, grad_sample, hess_sample, beta: float, gamma: float) -> SsqpState:
    if not (0.0 < beta <= 1.0 and 0.0 < gamma <= 1.0):
        raise ValueError("averaging weights must lie in (0, 1]")
    new = state.copy()
    new.g_bar = (1.0 - beta) * state.g_bar + beta * np.asarray(grad_sample, dtype=float)
    new.q_bar = (1.0 - gamma) * state.q_bar + gamma * np.asarray(hess_sample, dtype=float)
    return new


def build_hessian(q_bar, lam, constraint_hessians, x, p: ProblemSpec, cfg: SsqpConfig, J=None):
    """Convexified Lagrangian Hessian and the diagonal shift applied."""
    if cfg.hessian_mode is HessianMode.Identity:
        return np.eye(p.d), 0.0
    x = np.asarray(x, dtype=float)
    if J is None:
        _, J, _ = eval_constraints(p, x)
    B, shift = K.hessian_kernel(
        np.asarray(q_bar, dtype=float), np.asarray(lam, dtype=float),
        np.asarray(constraint_hessians, dtype=float).reshape(p.m, p.d, p.d), np.asarray(J, dtype=float).reshape(p.m, p.d),
        x, p.lower, p.upper, cfg.eps_active, cfg.omega, cfg.kappa_max,
    )
    return B, float(shift)


def adaptive_stepsize(alpha: float, cfg: SsqpConfig, rng=None, u: Optional[float] = None) -> float:
    """Stepsize in the safeguard interval ``[alpha, alpha + psi alpha^p]``, capped at 1."""
    random_mode = cfg.stepsize_mode is StepsizeMode.UniformRandom
    if random_mode and u is None:
        u = rng.random()
    return float(K.stepsize(alpha, cfg.psi, cfg.p_adapt, random_mode, 0.0 if u is None else u))


def ssqp_step(p: ProblemSpec, state: SsqpState, sample, cfg: SsqpConfig, u: Optional[float] = None):
    """One SSQP iteration; returns ``(new_state, report)``.

    ``u`` is the uniform variate for the random stepsize; it is drawn from
    ``state.rng`` when omitted.
    """
    k = state.k
    alpha, beta, gamma = schedules(k, cfg)
    x = state.pd.x
    c, J, chess = eval_constraints(p, x)
    theta = select_theta(p, x, cfg, c, J)
    _, grad, hess = p.sample_oracle(x, sample)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    alpha_bar = adaptive_stepsize(alpha, cfg, state.rng, u)

    new = state.copy()
    pd = new.pd
    n = p.d
    if state.hint is None:
        hlo = np.zeros(n, dtype=bool)
        hup = np.zeros(n, dtype=bool)
    else:
        hlo, hup = state.hint.masks(n)
    B, dx, lam_sub, mul, muu, alo, aup, theta, shift, level, retried, status = K.step_kernel(
        pd.x, pd.lam, pd.mu1, pd.mu2, new.g_bar, new.q_bar, grad, hess, beta, gamma, alpha_bar, theta,
        c, J, chess, p.lower, p.upper, cfg.eps_active, cfg.omega, cfg.kappa_max, cfg.tau,
        cfg.hessian_mode is HessianMode.Identity, cfg.qp_tol, _qp_max_iter(p), hlo, hup, state.hint is not None,
    )
    if status != K.OPTIMAL:
        raise QpFailure(f"subproblem failed with status {QpStatus(status).name} at k={k}", QpStatus(status), k)
    active = ActiveSets.from_masks(alo, aup)
    new.k = k + 1
    new.theta_last = float(theta)
    new.hint = active
    report = StepReport(
        dx, lam_sub, mul, muu, float(theta), float(alpha), float(alpha_bar), float(shift), int(level),
        bool(retried), QpStatus.Optimal, active, B, J, grad,
    )
    return new, report


class DualLs(NamedTuple):
    lam: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    objective: float


def dual_least_squares(p: ProblemSpec, x, g, J=None) -> DualLs:
    """Least-squares multipliers minimising the KKT residual at ``x``.

    Minimises ``||g + J'lam - mu1 + mu2||^2 + ||mu1*(l-x)||^2 + ||mu2*(x-u)||^2``
    over ``lam`` free and ``mu >= 0``; multipliers of infinite bounds are 0.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if J is None:
        _, J, _ = eval_constraints(p, x)
    d, m = p.d, p.m
    lo = np.flatnonzero(np.isfinite(p.lower))
    up = np.flatnonzero(np.isfinite(p.upper))
    nl, nu = lo.size, up.size
    M = np.zeros((d + nl + nu, m + nl + nu))
    M[:d, :m] = J.T
    M[lo, m + np.arange(nl)] = -1.0
    M[up, m + nl + np.arange(nu)] = 1.0
    M[d + np.arange(nl), m + np.arange(nl)] = p.lower[lo] - x[lo]
    M[d + nl + np.arange(nu), m + nl + np.arange(nu)] = x[up] - p.upper[up]
    y = np.concatenate([-g, np.zeros(nl + nu)])
    lb = np.concatenate([np.full(m, -np.inf), np.zeros(nl + nu)])
    ub = np.full(m + nl + nu, np.inf)
    z, value = solve_bcls(M, y, lb, ub)
    mu1 = np.zeros(d)
    mu2 = np.zeros(d)
    mu1[lo] = z[m : m + nl]
    mu2[up] = z[m + nl :]
    return DualLs(z[:m], mu1, mu2, value)


def kkt_norm(p: ProblemSpec, x, g) -> float:
    """KKT residual norm with least-squares multipliers (constraint block included)."""
    c, J, _ = eval_constraints(p, x)
    res = dual_least_squares(p, x, g, J)
    return float(np.sqrt(res.objective + c @ c))


@dataclass
class RunSummary:
    last_theta_lt1_k: int
    last_active_change_k: int
    n_fallback: int
    n_theta_retry: int
    theta_last: float
    alpha_bar_last: float
    shift_last: float
    level_last: int
    min_theta: float
    B_bar: Optional[np.ndarray]
    J: Optional[np.ndarray]
    active: Optional[ActiveSets]
    kkt_log: list = field(default_factory=list)


@dataclass
class RunResult:
    state: SsqpState
    summary: RunSummary
    accumulator: CovarianceAccumulator


def _new_summary_array():
    s = np.zeros(K.N_SUMMARY)
    s[K.S_LAST_THETA_LT1] = -1
    s[K.S_LAST_ACTIVE_CHANGE] = -1
    s[K.S_THETA] = np.nan
    s[K.S_ALPHA_BAR] = np.nan
    s[K.S_SHIFT] = np.nan
    s[K.S_LEVEL] = -1
    s[K.S_MIN_THETA] = 1.0
    return s


def _summary_from(arr, B, J, active, log):
    return RunSummary(
        int(arr[K.S_LAST_THETA_LT1]), int(arr[K.S_LAST_ACTIVE_CHANGE]), int(arr[K.S_N_FALLBACK]),
        int(arr[K.S_N_THETA_RETRY]), float(arr[K.S_THETA]), float(arr[K.S_ALPHA_BAR]),
        float(arr[K.S_SHIFT]), int(arr[K.S_LEVEL]), float(arr[K.S_MIN_THETA]), B, J, active, log,
    )


def _draw_chunk(p: ProblemSpec, rng):
    samples = np.ascontiguousarray(p.sampler(rng, CHUNK), dtype=float)
    uniforms = rng.random(CHUNK)
    return samples, uniforms


def _log_gradient(p, x, g_bar):
    if p.exact_oracle is not None:
        return p.exact_oracle(x)[1]
    return g_bar


def run(p: ProblemSpec, init: PrimalDual, cfg: SsqpConfig, K_iter: int, observer: Optional[Callable] = None,
        seed=0, log_every: Optional[int] = None, fused: Optional[bool] = None, state: Optional[SsqpState] = None,
        accumulator: Optional[CovarianceAccumulator] = None) -> RunResult:
    """Run ``K_iter`` iterations from ``init`` (or continue ``state``).

    Samples are drawn in blocks of ``CHUNK`` from the state's generator, then
    one uniform per iteration, so trajectories do not depend on the path
    taken or on ``log_every``. ``observer(k, state, report)`` is called after
    every step and forces the per-step path. With ``log_every`` the KKT
    residual norm (population gradient if available, else the averaged one)
    is recorded every ``log_every`` iterations.
    """
    if K_iter < 0:
        raise ValueError("K must be nonnegative")
    if state is None:
        state = initial_state(p, init, seed)
    else:
        state = state.copy()
    acc = accumulator.copy() if accumulator is not None else CovarianceAccumulator.empty(p.d)
    if fused is None:
        fused = observer is None and p.kernels is not None
    if fused and (observer is not None or p.kernels is None):
        raise ValueError("the fused loop needs compiled kernels and no observer")
    if K_iter > 0 and p.sampler is None:
        raise ValueError("problem has no sampler")

    summary = _new_summary_array()
    log = []
    B_last = np.full((p.d, p.d), np.nan)
    J_last = np.full((p.m, p.d), np.nan)
    prev_lo, prev_up = state.hint.masks(p.d) if state.hint is not None else (np.zeros(p.d, bool), np.zeros(p.d, bool))
    have_hint = np.array([state.hint is not None])
    count = np.array([float(acc.count)])
    k_end = state.k + K_iter
    random_mode = cfg.stepsize_mode is StepsizeMode.UniformRandom
    identity_mode = cfg.hessian_mode is HessianMode.Identity
    sched = cfg.schedule_array
    qp_iter = _qp_max_iter(p)

    while state.k < k_end:
        samples, uniforms = _draw_chunk(p, state.rng)
        use = min(CHUNK, k_end - state.k)
        j = 0
        while j < use:
            j1 = use
            if log_every:
                j1 = min(use, ((state.k) // log_every + 1) * log_every - state.k + j)
            if fused:
                pd = state.pd
                status, k_fail = K.run_kernel(
                    p.kernels.constraint_fn, p.kernels.sample_fn, p.kernels.params, state.k,
                    samples[j:j1], uniforms[j:j1], pd.x, pd.lam, pd.mu1, pd.mu2, state.g_bar, state.q_bar,
                    p.lower, p.upper, sched, cfg.psi, cfg.p_adapt, random_mode, cfg.tau, cfg.theta_min,
                    cfg.eps_active, cfg.omega, cfg.kappa_max, identity_mode, cfg.qp_tol, qp_iter,
                    prev_lo, prev_up, have_hint, count, acc.mean, acc.scatter, summary, B_last, J_last,
                )
                acc.count = int(count[0])
                if status == K.EGMFCQ_FAILURE:
                    raise EgmfcqFailure(f"relaxation fell below theta_min at k={k_fail}", int(k_fail))
                if status != K.OPTIMAL:
                    raise QpFailure(f"subproblem failed with status {QpStatus(status).name} at k={k_fail}",
                                    QpStatus(status), int(k_fail))
                state.k += j1 - j
                if have_hint[0]:
                    state.hint = ActiveSets.from_masks(prev_lo, prev_up)
                state.theta_last = float(summary[K.S_THETA])
            else:
                for jj in range(j, j1):
                    k = state.k
                    try:
                        state, rep = ssqp_step(p, state, samples[jj], cfg, u=uniforms[jj])
                    except EgmfcqFailure as exc:
                        raise EgmfcqFailure(str(exc), k) from exc
                    accumulate(acc, rep.grad_sample)
                    K.track_summary(summary, k, rep.theta, rep.alpha_bar, rep.shift_delta, rep.hessian_level,
                                    rep.theta_retried, *rep.active.masks(p.d), prev_lo, prev_up)
                    B_last[:, :] = rep.B_bar
                    J_last[:, :] = rep.J
                    if observer is not None:
                        observer(k, state, rep)
            j = j1
            if log_every and state.k % log_every == 0:
                log.append((state.k, kkt_norm(p, state.pd.x, _log_gradient(p, state.pd.x, state.g_bar))))

    done = K_iter > 0
    res = _summary_from(summary, B_last if done else None, J_last if done else None, state.hint, log)
    return RunResult(state, res, acc)


def m_estimate(p_empirical: ProblemSpec, cfg: Optional[SsqpConfig] = None, tol: float = 1e-8,
               max_iter: int = 200, x0=None) -> PrimalDual:
    """Deterministic SQP on a problem whose exact oracle is the full-batch loss.

    Uses the exact Hessian (convexified as in the stochastic engine), a unit
    stepsize halved while the merit ``f + rho ||c||`` increases with
    ``rho = 10 ||lam|| + 1``, and stops when the least-squares KKT residual is
    below ``tol``. Returns the iterate with its least-squares multipliers.
    """
    if p_empirical.exact_oracle is None:
        raise ValueError("m_estimate needs an exact (full-batch) oracle")
    cfg = cfg or SsqpConfig()
    p = p_empirical
    x = np.clip(np.zeros(p.d) if x0 is None else np.asarray(x0, dtype=float), p.lower, p.upper)
    lam = np.zeros(p.m)
    hint = None
    for _ in range(max_iter):
        f, g, hess = p.exact_oracle(x)
        c, J, chess = eval_constraints(p, x)
        dls = dual_least_squares(p, x, g, J)
        if dls.objective + c @ c <= tol * tol:
            return PrimalDual(x, dls.lam, dls.mu1, dls.mu2)
        theta = select_theta(p, x, cfg, c, J)
        B, _ = build_hessian(hess, lam, chess, x, p, cfg, J)
        qp = QpProblem(B, g, J, -theta * c, p.lower - x, p.upper - x)
        sol = solve_qp(qp, cfg.qp_tol, hint=hint)
        if sol.status in (QpStatus.IndefiniteReduced, QpStatus.IterationLimit):
            B, _ = K.full_shift_kernel(np.asarray(hess, dtype=float), lam, chess, cfg.omega, cfg.kappa_max)
            sol = solve_qp(QpProblem(B, g, J, -theta * c, p.lower - x, p.upper - x), cfg.qp_tol)
        if sol.status is not QpStatus.Optimal:
            raise QpFailure(f"subproblem failed with status {sol.status.name}", sol.status)
        hint = sol.active
        rho = 10.0 * np.linalg.norm(sol.lam) + 1.0
        phi0 = f + rho * np.linalg.norm(c)
        step = 1.0
        tiny = np.max(np.abs(sol.d), initial=0.0) <= 1e-10 * (1.0 + np.max(np.abs(x)))
        while not tiny:
            xt = np.clip(x + step * sol.d, p.lower, p.upper)
            ct, _, _ = eval_constraints(p, xt)
            if p.exact_oracle(xt)[0] + rho * np.linalg.norm(ct) <= phi0 + 1e-14 * (1.0 + abs(phi0)) or step < 1e-6:
                break
            step *= 0.5
        x = np.clip(x + step * sol.d, p.lower, p.upper)
        lam = lam + step * (sol.lam - lam)
    raise NoConvergence(f"m_estimate did not reach tol={tol} in {max_iter} iterations")
