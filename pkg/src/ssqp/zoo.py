"""Experiment problems.

* constrained GLMs (linear, logistic, Poisson) with Gaussian covariates,
* portfolio models under a gross-exposure bound, in slack form,
* small noise-injected benchmarks with known solutions.

Each family provides compiled oracles (used by the fused run loop) and python
oracles that call the very same compiled functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special
from scipy.stats import qmc

from ._jit import njit
from .errors import (
    InfeasibleGrossBound,
    InvalidTrueParameter,
    NoAnalyticMoments,
    NoAnalyticSolution,
    NotPositiveDefinite,
    UnknownBenchmark,
)
from .problem import Kernels, PrimalDual, ProblemSpec

QMC_LOG2 = 14
QMC_SEED = 20240601


# ---------------------------------------------------------------------------
# covariance structures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovStructure:
    kind: str = "identity"
    r: float = 0.0

    def __post_init__(self):
        kind = self.kind.strip().lower()
        if kind not in ("identity", "toeplitz", "equicorr"):
            raise ValueError(f"unknown covariance structure {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    def label(self) -> str:
        names = {"identity": "Identity", "toeplitz": "Toeplitz", "equicorr": "EquiCorr"}
        return names[self.kind]


def covariance_matrix(structure: Union[CovStructure, str], d: int) -> np.ndarray:
    if isinstance(structure, str):
        structure = CovStructure(structure)
    if d < 1:
        raise ValueError("d must be positive")
    if structure.kind == "identity":
        S = np.eye(d)
    elif structure.kind == "toeplitz":
        idx = np.arange(d)
        S = structure.r ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    else:
        S = (1.0 - structure.r) * np.eye(d) + structure.r * np.ones((d, d))
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{structure} is not positive definite for d={d}") from None
    return S


def qmc_normal(d: int, log2n: int = QMC_LOG2, seed: int = QMC_SEED) -> np.ndarray:
    """Fixed scrambled-Sobol rule mapped to standard normals, shape (2**log2n, d)."""
    u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(log2n)
    return special.ndtri(u)


# ---------------------------------------------------------------------------
# shared compiled pieces
# ---------------------------------------------------------------------------


@njit
def _no_constraints(x, params):
    d = x.shape[0]
    return np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d))


@njit
def _sum_to_one(x, params):
    d = x.shape[0]
    c = np.array([x.sum() - 1.0])
    return c, np.ones((1, d)), np.zeros((1, d, d))


@njit
def _softplus(t):
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


@njit
def _sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# GLMs
# ---------------------------------------------------------------------------


@njit
def _linear_sample(x, s, params):
    d = x.shape[0]
    a = s[:d]
    r = s[d] - a @ x
    return 0.5 * r * r, -r * a, np.outer(a, a)


@njit
def _logistic_sample(x, s, params):
    d = x.shape[0]
    a = s[:d]
    b = s[d]
    z = a @ x
    w = _sigmoid(z)
    return _softplus(-b * z), -b * _sigmoid(-b * z) * a, w * (1.0 - w) * np.outer(a, a)


@njit
def _poisson_sample(x, s, params):
    d = x.shape[0]
    a = s[:d]
    b = s[d]
    z = a @ x
    ez = math.exp(z)
    return -(b * z - ez), -(b - ez) * a, ez * np.outer(a, a)


_GLM_SAMPLE = {"linear": _linear_sample, "logistic": _logistic_sample, "poisson": _poisson_sample}


@dataclass(frozen=True)
class GlmSpec:
    """Constrained GLM. ``constraint`` is "simplex", "none" or a tuple
    ``("nonnegative", indices)``; ``x_true``/``mu_a`` default to the balanced
    design (see :func:`default_x_true`)."""

    kind: str = "linear"
    d: int = 5
    x_true: Optional[Sequence[float]] = None
    cov_structure: CovStructure = field(default_factory=CovStructure)
    mu_a: Optional[Sequence[float]] = None
    constraint: Union[str, tuple] = "simplex"
    noise_sd: float = 1.0

    def __post_init__(self):
        kind = self.kind.strip().lower()
        if kind not in _GLM_SAMPLE:
            raise ValueError(f"unknown GLM kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if isinstance(self.cov_structure, str):
            object.__setattr__(self, "cov_structure", CovStructure(self.cov_structure))


def default_x_true(d: int) -> np.ndarray:
    """First ceil(d/2) entries 3/(2d), the rest 1/(2d), rescaled onto the simplex.

    For even d the rescaling is a no-op; for odd d the raw vector sums to
    slightly more than one.
    """
    h = (d + 1) // 2
    x = np.full(d, 1.0 / (2 * d))
    x[:h] = 3.0 / (2 * d)
    return x / x.sum()


def default_mu_a(d: int) -> np.ndarray:
    h = (d + 1) // 2
    mu = -np.ones(d)
    mu[:h] = 1.0
    return mu


def _glm_bounds(spec: GlmSpec):
    d = spec.d
    lower = np.full(d, -np.inf)
    upper = np.full(d, np.inf)
    if spec.constraint == "simplex":
        lower[:] = 0.0
        return lower, upper, 1
    if spec.constraint == "none":
        return lower, upper, 0
    name, idx = spec.constraint
    if str(name).lower() not in ("nonnegative", "nonnegative_subset", "nonneg"):
        raise ValueError(f"unknown constraint {spec.constraint!r}")
    lower[np.asarray(idx, dtype=int)] = 0.0
    return lower, upper, 0


def make_glm(spec: GlmSpec, rng_seed: int = 0) -> ProblemSpec:
    """GLM with covariates ``a ~ N(mu_a, Sigma_a)`` and responses drawn at ``x_true``.

    The design is fixed; ``rng_seed`` is only recorded in ``meta`` for callers
    that derive sample streams from it.
    """
    d = spec.d
    x_true = default_x_true(d) if spec.x_true is None else np.asarray(spec.x_true, dtype=float)
    mu_a = default_mu_a(d) if spec.mu_a is None else np.asarray(spec.mu_a, dtype=float)
    if x_true.shape != (d,) or mu_a.shape != (d,):
        raise ValueError("x_true and mu_a must have length d")
    sigma_a = covariance_matrix(spec.cov_structure, d)
    chol = np.linalg.cholesky(sigma_a)
    lower, upper, m = _glm_bounds(spec)
    if np.any(x_true < lower) or np.any(x_true > upper) or (m and abs(x_true.sum() - 1.0) > 1e-12):
        raise InvalidTrueParameter(f"x_true={x_true} violates the {spec.constraint} constraint")

    kind = spec.kind
    sd = float(spec.noise_sd)
    sample_fn = _GLM_SAMPLE[kind]
    con_fn = _sum_to_one if m else _no_constraints
    params = np.zeros(1)

    def sampler(rng, n):
        a = mu_a + rng.standard_normal((n, d)) @ chol.T
        eta = a @ x_true
        if kind == "linear":
            b = eta + sd * rng.standard_normal(n)
        elif kind == "logistic":
            b = np.where(rng.random(n) < special.expit(eta), 1.0, -1.0)
        else:
            b = rng.poisson(np.exp(eta)).astype(float)
        return np.column_stack([a, b])

    second = sigma_a + np.outer(mu_a, mu_a)
    approximate = kind != "linear"
    if kind == "linear":

        def exact(x):
            dx = x - x_true
            return 0.5 * (sd * sd + dx @ second @ dx), second @ dx, second.copy()

    else:
        A = mu_a + qmc_normal(d) @ chol.T
        eta_star = A @ x_true
        N = A.shape[0]

        def exact(x):
            z = A @ x
            if kind == "logistic":
                p1 = special.expit(eta_star)
                f = np.mean(p1 * np.logaddexp(0.0, -z) + (1.0 - p1) * np.logaddexp(0.0, z))
                s = special.expit(z)
                g = A.T @ (s - p1) / N
                H = (A * (s * (1.0 - s))[:, None]).T @ A / N
            else:
                lam = np.exp(eta_star)
                ez = np.exp(z)
                f = np.mean(ez - lam * z)
                g = A.T @ (ez - lam) / N
                H = (A * ez[:, None]).T @ A / N
            return float(f), g, 0.5 * (H + H.T)

    def moments(x):
        if kind != "linear" or not np.allclose(x, x_true, rtol=0, atol=1e-12):
            raise NoAnalyticMoments("closed-form moments exist for the linear model at x_true only")
        return second.copy(), sd * sd * second

    meta = {
        "x_true": x_true, "mu_a": mu_a, "sigma_a": sigma_a, "family": "glm", "glm": spec,
        "seed": rng_seed, "x0": _glm_start(lower, m, d),
    }
    if kind == "linear":
        meta["population_moments"] = moments
    return ProblemSpec(
        d=d, m=m, lower=lower, upper=upper,
        constraint_oracle=lambda x: con_fn(np.asarray(x, dtype=float), params),
        sample_oracle=lambda x, s: sample_fn(np.asarray(x, dtype=float), np.asarray(s, dtype=float), params),
        sampler=sampler, exact_oracle=exact, exact_is_approximate=approximate,
        kernels=Kernels(con_fn, sample_fn, params),
        name=f"{kind}-glm-d{d}", meta=meta,
    )


def _glm_start(lower, m, d):
    if m:
        return np.full(d, 1.0 / d)
    return np.where(np.isfinite(lower), np.maximum(lower, 0.0) + 0.1, 0.0)


def empirical_problem(p: ProblemSpec, samples: np.ndarray, name: Optional[str] = None) -> ProblemSpec:
    """Same constraints, with the exact oracle replaced by the average over ``samples``."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]

    def exact(x):
        f = 0.0
        g = np.zeros(p.d)
        H = np.zeros((p.d, p.d))
        for s in samples:
            fi, gi, hi = p.sample_oracle(x, s)
            f += fi
            g += gi
            H += hi
        return f / n, g / n, H / n

    def sampler(rng, k):
        return samples[rng.integers(0, n, size=k)]

    return ProblemSpec(
        d=p.d, m=p.m, lower=p.lower, upper=p.upper, constraint_oracle=p.constraint_oracle,
        sample_oracle=p.sample_oracle, sampler=sampler, exact_oracle=exact, kernels=p.kernels,
        name=name or f"{p.name}-empirical", meta=dict(p.meta),
    )


# ---------------------------------------------------------------------------
# portfolios
# ---------------------------------------------------------------------------

_MODELS = ("gmv", "mv", "exp", "log")


@dataclass(frozen=True)
class PortfolioSpec:
    model: str = "gmv"
    d: int = 30
    gross_bound: float = 3.0
    eta1: float = 0.1
    eta2: float = 15.0
    ridge: float = 0.0

    def __post_init__(self):
        model = self.model.strip().lower()
        if model not in _MODELS:
            raise ValueError(f"unknown portfolio model {self.model!r}")
        object.__setattr__(self, "model", model)
        if self.gross_bound < 1.0:
            raise InfeasibleGrossBound(f"gross bound {self.gross_bound} < 1 leaves no feasible weights")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("eta1 and eta2 must be positive")


@dataclass(frozen=True)
class ReturnWindow:
    """Finite training window; the empirical distribution is the population."""

    returns: np.ndarray


@dataclass(frozen=True)
class GaussianReturns:
    mean: np.ndarray
    cov: np.ndarray


# params layout: [gross_bound, eta1, eta2, ridge, center (d)]
@njit
def _portfolio_constraints(v, params):
    n = v.shape[0]
    d = (n - 1) // 2
    c = np.zeros(2)
    J = np.zeros((2, n))
    for i in range(d):
        c[0] += v[i] - v[d + i]
        c[1] += v[i] + v[d + i]
        J[0, i] = 1.0
        J[0, d + i] = -1.0
        J[1, i] = 1.0
        J[1, d + i] = 1.0
    c[0] -= 1.0
    c[1] += v[n - 1] - params[0]
    J[1, n - 1] = 1.0
    return c, J, np.zeros((2, n, n))


@njit
def _lift(v, fx, gx, hx, params):
    """Compose an x-space oracle with x = p - n and add the optional ridge."""
    n = v.shape[0]
    d = (n - 1) // 2
    g = np.zeros(n)
    H = np.zeros((n, n))
    g[:d] = gx
    g[d : 2 * d] = -gx
    H[:d, :d] = hx
    H[:d, d : 2 * d] = -hx
    H[d : 2 * d, :d] = -hx
    H[d : 2 * d, d : 2 * d] = hx
    ridge = params[3]
    f = fx
    if ridge > 0.0:
        for i in range(2 * d):
            f += ridge * v[i] * v[i]
            g[i] += 2.0 * ridge * v[i]
            H[i, i] += 2.0 * ridge
    return f, g, H


@njit
def _weights(v):
    d = (v.shape[0] - 1) // 2
    return v[:d] - v[d : 2 * d]


@njit
def _gmv_sample(v, s, params):
    d = s.shape[0]
    zc = s - params[4 : 4 + d]
    r = _weights(v) @ zc
    return _lift(v, r * r, 2.0 * r * zc, 2.0 * np.outer(zc, zc), params)


@njit
def _mv_sample(v, s, params):
    d = s.shape[0]
    x = _weights(v)
    zc = s - params[4 : 4 + d]
    r = x @ zc
    return _lift(v, r * r - x @ s, 2.0 * r * zc - s, 2.0 * np.outer(zc, zc), params)


@njit
def _exp_sample(v, s, params):
    eta = params[1]
    e = math.exp(-eta * (_weights(v) @ s))
    return _lift(v, e, -eta * e * s, eta * eta * e * np.outer(s, s), params)


@njit
def _log_sample(v, s, params):
    t = _weights(v) @ s + params[2]
    return _lift(v, -math.log(t), -s / t, np.outer(s, s) / (t * t), params)


_PORTFOLIO_SAMPLE = {"gmv": _gmv_sample, "mv": _mv_sample, "exp": _exp_sample, "log": _log_sample}


def encode_weights(x, gross_bound: float) -> np.ndarray:
    """Slack representation (p, n, s) of weights with ||x||_1 <= gross_bound."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0), [gross_bound - np.abs(x).sum()]])


def decode_weights(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    d = (v.size - 1) // 2
    return v[:d] - v[d : 2 * d]


def _batch_objective(model, X, x, center, eta1, eta2):
    """Average objective, gradient and Hessian in x-space over return rows ``X``."""
    T = X.shape[0]
    if model in ("gmv", "mv"):
        Z = X - center
        r = Z @ x
        f = np.mean(r * r)
        g = 2.0 * Z.T @ r / T
        H = 2.0 * Z.T @ Z / T
        if model == "mv":
            f -= np.mean(X @ x)
            g -= X.mean(axis=0)
    elif model == "exp":
        e = np.exp(-eta1 * (X @ x))
        f = np.mean(e)
        g = -eta1 * X.T @ e / T
        H = eta1 * eta1 * (X * e[:, None]).T @ X / T
    else:
        t = X @ x + eta2
        f = -np.mean(np.log(t))
        g = -X.T @ (1.0 / t) / T
        Xs = X / t[:, None]
        H = Xs.T @ Xs / T
    return float(f), g, 0.5 * (H + H.T)


def _gaussian_objective(model, mean, cov, x, eta1):
    if model in ("gmv", "mv"):
        f = x @ cov @ x
        g = 2.0 * cov @ x
        H = 2.0 * cov
        if model == "mv":
            f -= mean @ x
            g = g - mean
        return float(f), g, H
    # exp: E exp(-eta x'z) for z ~ N(mean, cov)
    q = -eta1 * mean + eta1 * eta1 * cov @ x
    e = math.exp(-eta1 * mean @ x + 0.5 * eta1 * eta1 * x @ cov @ x)
    return e, e * q, e * (np.outer(q, q) + eta1 * eta1 * cov)


def make_portfolio(spec: PortfolioSpec, return_source: Union[ReturnWindow, GaussianReturns]) -> ProblemSpec:
    """Gross-exposure constrained portfolio in slack variables (p, n, s)."""
    model = spec.model
    if isinstance(return_source, ReturnWindow):
        R = np.ascontiguousarray(return_source.returns, dtype=float)
        if R.ndim != 2 or R.shape[0] < 1:
            raise ValueError("return window must be a nonempty T x d matrix")
        d = R.shape[1]
        center = R.mean(axis=0)
        T = R.shape[0]

        def sampler(rng, k):
            return R[rng.integers(0, T, size=k)]

        def population(x):
            return _batch_objective(model, R, x, center, spec.eta1, spec.eta2)

        approximate = False
    elif isinstance(return_source, GaussianReturns):
        mean = np.asarray(return_source.mean, dtype=float)
        cov = np.asarray(return_source.cov, dtype=float)
        d = mean.size
        center = mean
        chol = np.linalg.cholesky(cov)

        def sampler(rng, k):
            return mean + rng.standard_normal((k, d)) @ chol.T

        if model == "log":
            Xq = mean + qmc_normal(d) @ chol.T

            def population(x):
                return _batch_objective(model, Xq, x, center, spec.eta1, spec.eta2)

            approximate = True
        else:

            def population(x):
                return _gaussian_objective(model, mean, cov, x, spec.eta1)

            approximate = False
    else:
        raise TypeError("return_source must be a ReturnWindow or GaussianReturns")
    if spec.d != d:
        spec = PortfolioSpec(spec.model, d, spec.gross_bound, spec.eta1, spec.eta2, spec.ridge)

    n = 2 * d + 1
    params = np.concatenate([[spec.gross_bound, spec.eta1, spec.eta2, spec.ridge], center])
    sample_fn = _PORTFOLIO_SAMPLE[model]

    def exact(v):
        v = np.asarray(v, dtype=float)
        fx, gx, hx = population(decode_weights(v))
        return _lift(v, fx, gx, hx, params)

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    return ProblemSpec(
        d=n, m=2, lower=lower, upper=upper,
        constraint_oracle=lambda v: _portfolio_constraints(np.asarray(v, dtype=float), params),
        sample_oracle=lambda v, s: sample_fn(np.asarray(v, dtype=float), np.asarray(s, dtype=float), params),
        sampler=sampler, exact_oracle=exact, exact_is_approximate=approximate,
        kernels=Kernels(_portfolio_constraints, sample_fn, params),
        name=f"portfolio-{model}-d{d}",
        meta={"family": "portfolio", "portfolio": spec, "assets": d,
              "x0": encode_weights(np.full(d, 1.0 / d), spec.gross_bound)},
    )


# ---------------------------------------------------------------------------
# noise-injected benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def variance(self) -> float:
        return self.sigma2

    def draw(self, rng, shape):
        return math.sqrt(self.sigma2) * rng.standard_normal(shape)

    def label(self) -> str:
        return f"gaussian({self.sigma2:g})"


@dataclass(frozen=True)
class StudentT:
    df: float

    def __post_init__(self):
        if not self.df >= 3:
            raise ValueError("df must be at least 3 for finite variance")

    @property
    def variance(self) -> float:
        return self.df / (self.df - 2.0)

    def draw(self, rng, shape):
        return rng.standard_t(self.df, size=shape)

    def label(self) -> str:
        return f"t({self.df:g})"


@dataclass(frozen=True)
class NoisySpec:
    base: str
    noise: Union[Gaussian, StudentT, None] = None


@njit
def _add_noise(f, g, H, s):
    d = g.shape[0]
    g2 = g + s[:d]
    H2 = H + s[d : d + d * d].copy().reshape((d, d))
    return f, g2, H2


@njit
def _circle_exact(x, params):
    return (x[0] - 1.0) ** 2, np.array([2.0 * (x[0] - 1.0)]), np.array([[2.0]])


@njit
def _circle_con(x, params):
    return np.array([x[0] * x[0] - 4.0]), np.array([[2.0 * x[0]]]), np.array([[[2.0]]])


@njit
def _circle_sample(x, s, params):
    f, g, H = _circle_exact(x, params)
    return _add_noise(f, g, H, s)


@njit
def _boundary_exact(x, params):
    return x @ x, 2.0 * x, 2.0 * np.eye(2)


@njit
def _boundary_con(x, params):
    return np.array([x[0] + x[1] - 1.0]), np.ones((1, 2)), np.zeros((1, 2, 2))


@njit
def _boundary_sample(x, s, params):
    f, g, H = _boundary_exact(x, params)
    return _add_noise(f, g, H, s)


# params: Q (9, row-major) then the anchor a (3)
@njit
def _ridge3_exact(x, params):
    Q = params[:9].copy().reshape((3, 3))
    r = x - params[9:12]
    g = Q @ r
    return 0.5 * r @ g, g, Q


@njit
def _ridge3_con(x, params):
    c = np.array([x @ x - 2.0])
    J = np.zeros((1, 3))
    J[0, :] = 2.0 * x
    H = np.zeros((1, 3, 3))
    H[0] = 2.0 * np.eye(3)
    return c, J, H


@njit
def _ridge3_sample(x, s, params):
    f, g, H = _ridge3_exact(x, params)
    return _add_noise(f, g, H, s)


RIDGE3_X = np.array([1.0, 0.6, 0.8])
RIDGE3_LAMBDA = 0.3
RIDGE3_MU_UPPER = np.array([0.5, 0.0, 0.0])


def _ridge3_params():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((3, 3))
    Q = G @ G.T / 3.0 + np.eye(3)
    # anchor chosen so that (RIDGE3_X, RIDGE3_LAMBDA, mu) is a KKT point
    a = RIDGE3_X + np.linalg.solve(Q, 2.0 * RIDGE3_LAMBDA * RIDGE3_X + RIDGE3_MU_UPPER)
    return np.concatenate([Q.ravel(), a])


_BENCHMARKS = {
    "circle": dict(d=1, m=1, lower=[0.0], upper=[3.0], exact=_circle_exact, con=_circle_con,
                   sample=_circle_sample, x0=[1.0]),
    "boundary": dict(d=2, m=1, lower=[0.6, -np.inf], upper=[np.inf, np.inf], exact=_boundary_exact,
                     con=_boundary_con, sample=_boundary_sample, x0=[0.8, 0.2]),
    "ridge3": dict(d=3, m=1, lower=[-2.0, -2.0, -2.0], upper=[1.0, 2.0, 2.0], exact=_ridge3_exact,
                   con=_ridge3_con, sample=_ridge3_sample, x0=[0.5, 0.5, 0.5]),
}


def benchmark_names():
    return tuple(_BENCHMARKS)


def make_benchmark(name: str, noise: Union[Gaussian, StudentT, NoisySpec, None] = None) -> ProblemSpec:
    """Deterministic benchmark whose sample oracle adds iid noise to the
    gradient and to every Hessian entry. ``noise=None`` gives exact samples."""
    if isinstance(noise, NoisySpec):
        name, noise = noise.base, noise.noise
    key = str(name).strip().lower()
    if key not in _BENCHMARKS:
        raise UnknownBenchmark(name)
    b = _BENCHMARKS[key]
    d = b["d"]
    params = _ridge3_params() if key == "ridge3" else np.zeros(1)
    exact_fn, con_fn, sample_fn = b["exact"], b["con"], b["sample"]
    width = d + d * d

    def sampler(rng, n):
        if noise is None:
            return np.zeros((n, width))
        return noise.draw(rng, (n, width))

    def moments(x):
        if noise is None:
            return exact_fn(np.asarray(x, dtype=float), params)[2], np.zeros((d, d))
        return exact_fn(np.asarray(x, dtype=float), params)[2], noise.variance * np.eye(d)

    return ProblemSpec(
        d=d, m=b["m"], lower=np.array(b["lower"]), upper=np.array(b["upper"]),
        constraint_oracle=lambda x: con_fn(np.asarray(x, dtype=float), params),
        sample_oracle=lambda x, s: sample_fn(np.asarray(x, dtype=float), np.asarray(s, dtype=float), params),
        sampler=sampler,
        exact_oracle=lambda x: exact_fn(np.asarray(x, dtype=float), params),
        kernels=Kernels(con_fn, sample_fn, params),
        name=key,
        meta={"family": "benchmark", "benchmark": key, "noise": noise, "x0": np.array(b["x0"], dtype=float),
              "population_moments": moments},
    )


def analytic_solution(problem: Union[str, ProblemSpec]) -> PrimalDual:
    """Known primal-dual solution of a benchmark or an interior linear GLM."""
    key = problem if isinstance(problem, str) else problem.meta.get("benchmark")
    if key == "circle":
        return PrimalDual(np.array([2.0]), np.array([-0.5]), np.zeros(1), np.zeros(1))
    if key == "boundary":
        return PrimalDual(np.array([0.6, 0.4]), np.array([-0.8]), np.array([0.4, 0.0]), np.zeros(2))
    if key == "ridge3":
        return PrimalDual(RIDGE3_X.copy(), np.array([RIDGE3_LAMBDA]), np.zeros(3), RIDGE3_MU_UPPER.copy())
    if isinstance(problem, ProblemSpec) and problem.meta.get("family") == "glm":
        spec = problem.meta["glm"]
        x_true = problem.meta["x_true"]
        if spec.kind == "linear":
            # the population loss is minimised at the generating parameter,
            # which is feasible, so the multipliers are zero there
            return PrimalDual(x_true.copy(), np.zeros(problem.m), np.zeros(problem.d), np.zeros(problem.d))
    raise NoAnalyticSolution(f"no closed-form solution for {problem!r}")


# ---------------------------------------------------------------------------
# catalog used by the derivative checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    """``samples_consistent`` is False when the sample oracle injects
    independent gradient and Hessian noise, so only the exact oracle can be
    differenced."""

    problem: ProblemSpec
    x: np.ndarray
    tol: float
    samples_consistent: bool = True


def catalog(d_glm: int = 5, assets: int = 6, seed: int = 0) -> dict:
    """One instance of every model family with a test point and the finite
    difference tolerance: 1e-5 for analytic oracles, 1e-3 for QMC surrogates."""
    rng = np.random.default_rng(seed)
    out = {}
    for kind in _GLM_SAMPLE:
        for structure in ("identity", "toeplitz", "equicorr"):
            p = make_glm(GlmSpec(kind, d_glm, cov_structure=CovStructure(structure, 0.5)))
            x = p.meta["x_true"] + 0.05 * rng.uniform(-1.0, 1.0, d_glm)
            out[p.name + "-" + structure] = CatalogEntry(p, x, 1e-3 if p.exact_is_approximate else 1e-5)
    mean = 0.05 * rng.uniform(0.0, 1.0, assets)
    G = rng.standard_normal((assets, assets))
    cov = 0.1 * (G @ G.T / assets + np.eye(assets))
    window = mean + rng.standard_normal((60, assets)) @ np.linalg.cholesky(cov).T
    w = rng.uniform(-0.5, 1.0, assets)
    w /= w.sum()
    for model in _MODELS:
        for label, source in (("window", ReturnWindow(window)), ("gaussian", GaussianReturns(mean, cov))):
            p = make_portfolio(PortfolioSpec(model, assets), source)
            v = encode_weights(w, 3.0) + 0.01
            out[f"{p.name}-{label}"] = CatalogEntry(p, v, 1e-3 if p.exact_is_approximate else 1e-5)
    for name in _BENCHMARKS:
        p = make_benchmark(name, Gaussian(1e-2))
        x = np.asarray(p.meta["x0"], dtype=float) + 0.01
        out[name] = CatalogEntry(p, x, 1e-5, samples_consistent=False)
    return out
