"""Experiment orchestration: Monte Carlo coverage studies and backtests."""

from __future__ import annotations

import concurrent.futures
import csv
import functools
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import engine, inference, zoo
from .engine import SsqpConfig
from .errors import (
    EmptyFile,
    EmptyRecords,
    EmptySeries,
    IntervalUndefined,
    NaNGuard,
    NonNumericCell,
    RaggedRows,
    SingularH,
    SsqpError,
)
from .problem import PrimalDual, ProblemSpec

FAIL_ALARM = 0.02


# ---------------------------------------------------------------------------
# configuration objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemRef:
    """Which problem a coverage study runs on.

    ``family="glm"`` uses ``kind, d, structure, r, constraint``;
    ``family="benchmark"`` uses ``name, noise, sigma2, df``.
    """

    family: str = "glm"
    kind: str = "linear"
    d: int = 5
    structure: str = "identity"
    r: float = 0.0
    constraint: str = "simplex"
    name: str = "circle"
    noise: str = "gaussian"
    sigma2: float = 1e-2
    df: float = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemRef = field(default_factory=ProblemRef)
    replications: int = 200
    iterations: int = 100_000
    base_seed: int = 0
    target: str = "group-mean-contrast"
    level: float = 0.95
    ssqp: SsqpConfig = field(default_factory=SsqpConfig)
    output_dir: str = ""
    parallel_workers: int = 1
    log_every: int = 0
    oracle_omega: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.parallel_workers < 1:
            raise ValueError("parallel_workers must be at least 1")


@dataclass(frozen=True)
class CoverageReport:
    cov_rate: float
    avg_len: float
    len_sd: float
    n: int
    n_failed: int = 0


@functools.lru_cache(maxsize=16)
def build_problem(ref: ProblemRef) -> ProblemSpec:
    if ref.family == "glm":
        if ref.constraint == "simplex" or ref.constraint == "none":
            constraint = ref.constraint
        else:
            raise ValueError(f"coverage studies support simplex or none constraints, got {ref.constraint!r}")
        spec = zoo.GlmSpec(ref.kind, ref.d, cov_structure=zoo.CovStructure(ref.structure, ref.r), constraint=constraint)
        return zoo.make_glm(spec)
    if ref.family == "benchmark":
        return zoo.make_benchmark(ref.name, noise_from(ref.noise, ref.sigma2, ref.df))
    raise ValueError(f"unknown problem family {ref.family!r}")


def noise_from(kind: str, sigma2: float, df: float):
    kind = kind.strip().lower()
    if kind in ("none", ""):
        return None
    if kind in ("gaussian", "normal"):
        return zoo.Gaussian(sigma2)
    if kind in ("t", "student", "student_t", "studentt"):
        return zoo.StudentT(df)
    raise ValueError(f"unknown noise {kind!r}")


def target_vector(target: Union[str, Sequence[float]], p: ProblemSpec) -> np.ndarray:
    """Functional ``v`` on ``(x, lambda)``, of length ``d + m``.

    Presets: ``group-mean-contrast`` (``mu_a`` on x), ``mean`` (average of x)
    and ``lambda`` (first equality multiplier). A comma list of ``d`` numbers
    acts on x alone; ``d + m`` numbers also weight the multipliers.
    """
    n = p.d + p.m
    if isinstance(target, str):
        key = target.strip().lower()
        if key == "group-mean-contrast":
            if "mu_a" not in p.meta:
                raise ValueError("group-mean-contrast needs a GLM problem")
            return _pad(np.asarray(p.meta["mu_a"], dtype=float), n)
        if key == "mean":
            return _pad(np.full(p.d, 1.0 / p.d), n)
        if key == "lambda":
            if p.m == 0:
                raise ValueError("lambda target needs an equality constraint")
            return _pad(np.zeros(p.d), n) + np.eye(n)[p.d]
        target = [float(t) for t in key.split(",")]
    v = np.asarray(target, dtype=float).ravel()
    if v.size not in (p.d, n):
        raise ValueError(f"target has {v.size} entries, expected {p.d} or {n}")
    return _pad(v, n)


def target_truth(v, p: ProblemSpec) -> float:
    """``v'(x*, lambda*)`` at the known solution."""
    pd = zoo.analytic_solution(p)
    return float(np.asarray(v, dtype=float) @ np.concatenate([pd.x, pd.lam]))


def _pad(v, n):
    out = np.zeros(n)
    out[: v.size] = v
    return out


def _final_gradient(p, res):
    if p.exact_oracle is not None:
        return p.exact_oracle(res.state.pd.x)[1]
    return res.state.g_bar


def run_replication(cfg: ExperimentConfig, rep: int) -> dict:
    """One seeded replication; engine errors are captured in the record."""
    seed = cfg.base_seed + rep
    p = build_problem(cfg.problem)
    record = {"rep": rep, "seed": seed, "covered": None, "lo": math.nan, "hi": math.nan, "len": math.nan,
              "final_kkt_residual": math.nan, "error": ""}
    try:
        init = PrimalDual.initial(p, p.meta["x0"])
        res = engine.run(p, init, cfg.ssqp, cfg.iterations, seed=seed)
        s = res.summary
        v = target_vector(cfg.target, p)
        truth = target_truth(v, p)
        if cfg.oracle_omega:
            oc = inference.oracle_omega(p, zoo.analytic_solution(p), b1=cfg.ssqp.b1, iota1=cfg.ssqp.iota1)
            omega, active = oc.Omega_star, oc.active
        else:
            sigma = inference.sample_covariance(res.accumulator)
            jac = inference.active_jacobian(s.J, s.active, p.d)
            omega, active = inference.plugin_omega(s.B_bar, jac, sigma).Omega, s.active
        w = inference.stack_w(res.state.pd, active)
        eta = inference.normality_eta(cfg.ssqp.b1, cfg.ssqp.iota1)
        lo, hi = inference.confidence_interval(w, omega, s.alpha_bar_last, _pad(v, w.size), cfg.level, eta)
        record.update(
            covered=int(lo <= truth <= hi), lo=lo, hi=hi, len=hi - lo,
            final_kkt_residual=engine.kkt_norm(p, res.state.pd.x, _final_gradient(p, res)),
        )
    except SsqpError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def coverage_report(records, truth_value: float, level: float = 0.95) -> CoverageReport:
    """Coverage of closed intervals; records are ``(lo, hi)`` pairs or dicts."""
    rows = [(r["lo"], r["hi"]) if isinstance(r, dict) else tuple(r) for r in records]
    if not rows:
        raise EmptyRecords("no records")
    lo = np.array([r[0] for r in rows], dtype=float)
    hi = np.array([r[1] for r in rows], dtype=float)
    covered = int(np.sum((lo <= truth_value) & (truth_value <= hi)))
    lengths = hi - lo
    return CoverageReport(covered / len(rows), float(lengths.mean()), float(lengths.std()), len(rows))


def _workers(requested: int) -> int:
    env = os.environ.get("SSQP_WORKERS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, requested)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


REP_COLUMNS = ("rep", "seed", "covered", "lo", "hi", "len", "final_kkt_residual")
SUMMARY_COLUMNS = ("problem", "d", "structure", "r", "cov_rate", "avg_len", "len_sd", "reps", "K", "seed")


def run_replications(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    workers = _workers(cfg.parallel_workers if workers is None else workers)
    reps = range(cfg.replications)
    if workers == 1:
        return [run_replication(cfg, r) for r in reps]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_replication, [cfg] * cfg.replications, reps))


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None):
    """Monte Carlo coverage study; returns ``(report, records)`` and writes CSVs
    to ``cfg.output_dir`` when set."""
    if cfg.iterations == 0:
        raise IntervalUndefined("no gradients are accumulated with K=0, so the interval is undefined")
    records = run_replications(cfg, workers)
    ok = [r for r in records if r["covered"] is not None]
    failed = len(records) - len(ok)
    if failed > FAIL_ALARM * len(records):
        warnings.warn(f"{failed} of {len(records)} replications failed", RuntimeWarning)
    if not ok:
        raise EmptyRecords("every replication failed: " + records[0]["error"])
    p = build_problem(cfg.problem)
    truth = target_truth(target_vector(cfg.target, p), p)
    rep = coverage_report(ok, truth, cfg.level)
    rep = CoverageReport(rep.cov_rate, rep.avg_len, rep.len_sd, rep.n, failed)
    if cfg.output_dir:
        write_coverage_csvs(cfg, records, rep)
    return rep, records


def _summary_row(cfg: ExperimentConfig, rep: CoverageReport) -> dict:
    ref = cfg.problem
    if ref.family == "glm":
        name, structure, r = f"{ref.kind}-glm", zoo.CovStructure(ref.structure).label(), ref.r
    else:
        noise = noise_from(ref.noise, ref.sigma2, ref.df)
        name, structure, r = ref.name, noise.label() if noise else "none", ""
    p = build_problem(ref)
    return {"problem": name, "d": p.d, "structure": structure, "r": r, "cov_rate": rep.cov_rate,
            "avg_len": rep.avg_len, "len_sd": rep.len_sd, "reps": rep.n, "K": cfg.iterations, "seed": cfg.base_seed}


def write_coverage_csvs(cfg: ExperimentConfig, records, rep: CoverageReport):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replications.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REP_COLUMNS)
        for r in records:
            w.writerow([_fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in REP_COLUMNS])
    row = _summary_row(cfg, rep)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in SUMMARY_COLUMNS])


# ---------------------------------------------------------------------------
# returns data and performance metrics
# ---------------------------------------------------------------------------


def load_returns_csv(path):
    """Header row of asset names, then one row of decimal returns per period.

    Errors carry 1-based file line numbers and 1-based column indices.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, r) for r in reader if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise EmptyFile(f"{path} has no data rows")
    header = [h.strip() for h in rows[0][1]]
    width = len(header)
    out = np.empty((len(rows) - 1, width))
    for i, (line, row) in enumerate(rows[1:]):
        if len(row) != width:
            raise RaggedRows(f"line {line} has {len(row)} cells, expected {width}", line)
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise NonNumericCell(f"line {line}, column {j + 1}: {cell!r} is not a number", line, j + 1) from None
    return out, header


def write_returns_csv(path, returns, names=None):
    returns = np.asarray(returns, dtype=float)
    names = names or [f"asset{i + 1}" for i in range(returns.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in returns:
            w.writerow([repr(float(v)) for v in row])


def synthetic_returns(T: int, d: int = 30, seed: int = 0) -> np.ndarray:
    """Daily decimal returns from a three-factor model with Gaussian noise."""
    rng = np.random.default_rng(seed)
    n_factors = 3
    loadings = np.column_stack([rng.uniform(0.6, 1.4, d), rng.normal(0, 0.5, (d, n_factors - 1))])
    alpha = rng.normal(2e-4, 2e-4, d)
    f_sd = np.array([0.009, 0.004, 0.003])
    f_mean = np.array([4e-4, 0.0, 0.0])
    factors = f_mean + f_sd * rng.standard_normal((T, n_factors))
    idio = rng.uniform(0.004, 0.010, d) * rng.standard_normal((T, d))
    return alpha + factors @ loadings.T + idio


def _series(r):
    r = np.asarray(r, dtype=float).ravel()
    if r.size == 0:
        raise EmptySeries("empty return series")
    return r


def cumulative_return(r) -> float:
    return float(np.prod(1.0 + _series(r)) - 1.0)


def max_drawdown(r) -> float:
    """Largest relative decline of the wealth curve from a running peak (initial wealth 1)."""
    wealth = np.cumprod(1.0 + _series(r))
    peak = np.maximum.accumulate(np.concatenate([[1.0], wealth]))[1:]
    return float(np.max((peak - wealth) / peak, initial=0.0))


def sharpe(r) -> float:
    """Mean over sample standard deviation; zero risk-free rate, not annualised."""
    r = _series(r)
    if r.size < 2:
        raise NaNGuard("Sharpe ratio needs at least two returns")
    sd = r.std(ddof=1)
    if sd == 0.0:
        raise NaNGuard("Sharpe ratio is undefined for zero dispersion")
    return float(r.mean() / sd)


def sortino(r) -> float:
    """Mean over the sample standard deviation of the negative returns.

    Returns ``inf`` when no return is negative.
    """
    r = _series(r)
    neg = r[r < 0]
    if neg.size == 0:
        return math.inf
    if neg.size < 2:
        raise NaNGuard("downside deviation needs at least two negative returns")
    sd = neg.std(ddof=1)
    if sd == 0.0:
        raise NaNGuard("downside deviation is zero")
    return float(r.mean() / sd)


@dataclass(frozen=True)
class Metrics:
    cumulative_return: float
    max_drawdown: float
    sharpe: float
    sortino: float

    @classmethod
    def of(cls, r) -> "Metrics":
        def guarded(fn):
            try:
                return fn(r)
            except NaNGuard:
                return math.nan

        return cls(cumulative_return(r), max_drawdown(r), guarded(sharpe), guarded(sortino))


@dataclass
class BacktestReport:
    """SSQP metrics at the top level, the M-estimation and equal-weight
    baselines alongside, and per-window weights with standard-deviation bands."""

    cumulative_return: float
    max_drawdown: float
    sharpe: float
    sortino: float
    m_estimate: Metrics
    equal_weight: Metrics
    rebalance_index: np.ndarray
    weights: np.ndarray
    weights_m: np.ndarray
    bands: np.ndarray
    objective_gap: np.ndarray
    sum_residual: np.ndarray
    gross_excess: np.ndarray
    returns_ssqp: np.ndarray
    returns_m: np.ndarray


def weight_bands(p: ProblemSpec, res: engine.RunResult, eta: float) -> np.ndarray:
    """Standard deviations of the decoded weights from the plug-in covariance."""
    d = (p.d - 1) // 2
    s = res.summary
    try:
        jac = inference.active_jacobian(s.J, s.active, p.d)
        omega = inference.plugin_omega(s.B_bar, jac, inference.sample_covariance(res.accumulator)).Omega
    except SingularH:
        return np.full(d, math.nan)
    E = np.zeros((d, p.d))
    E[:, :d] = np.eye(d)
    E[:, d : 2 * d] = -np.eye(d)
    var = np.einsum("ij,jk,ik->i", E, omega[: p.d, : p.d], E)
    return np.sqrt(np.maximum(eta * s.alpha_bar_last * var, 0.0))


def backtest(returns, window: int, rebalance: int, spec: zoo.PortfolioSpec, cfg: Optional[SsqpConfig] = None,
             iterations: int = 80000, seed: int = 0, scale: float = 100.0, out_dir: Optional[str] = None,
             max_windows: Optional[int] = None) -> BacktestReport:
    """Rolling-window comparison of SSQP against full-window M-estimation.

    Training uses returns multiplied by ``scale`` (percent units by default, the
    scale the utility parameters are meant for); held-out metrics use the raw
    decimal returns. SSQP streams rows resampled uniformly from the window.
    """
    cfg = cfg or SsqpConfig()
    R = np.asarray(returns, dtype=float)
    T, d = R.shape
    if T <= window + rebalance:
        raise ValueError(f"need more than window + rebalance = {window + rebalance} periods, got {T}")
    spec = zoo.PortfolioSpec(spec.model, d, spec.gross_bound, spec.eta1, spec.eta2, spec.ridge)
    eta = inference.normality_eta(cfg.b1, cfg.iota1)
    starts = list(range(window, T - rebalance + 1, rebalance))
    if max_windows is not None:
        starts = starts[:max_windows]
    x0 = zoo.encode_weights(np.full(d, 1.0 / d), spec.gross_bound)
    W, Wm, bands, gaps, sres, gross = [], [], [], [], [], []
    r_s, r_m, r_e = [], [], []
    for i, t0 in enumerate(starts):
        p = zoo.make_portfolio(spec, zoo.ReturnWindow(R[t0 - window : t0] * scale))
        res = engine.run(p, PrimalDual.initial(p, x0), cfg, iterations, seed=seed + i)
        pd_m = engine.m_estimate(p, cfg, tol=1e-8, max_iter=500, x0=x0)
        f_s = p.exact_oracle(res.state.pd.x)[0]
        f_m = p.exact_oracle(pd_m.x)[0]
        gaps.append((f_s - f_m) / max(abs(f_m), 1e-12))
        xs = zoo.decode_weights(res.state.pd.x)
        xm = zoo.decode_weights(pd_m.x)
        W.append(xs)
        Wm.append(xm)
        bands.append(weight_bands(p, res, eta))
        sres.append(abs(xs.sum() - 1.0))
        gross.append(np.abs(xs).sum() - spec.gross_bound)
        held = R[t0 : t0 + rebalance]
        r_s.append(held @ xs)
        r_m.append(held @ xm)
        r_e.append(held.mean(axis=1))
    r_s = np.concatenate(r_s)
    r_m = np.concatenate(r_m)
    ms = Metrics.of(r_s)
    report = BacktestReport(
        ms.cumulative_return, ms.max_drawdown, ms.sharpe, ms.sortino, Metrics.of(r_m), Metrics.of(np.concatenate(r_e)),
        np.array(starts), np.array(W), np.array(Wm), np.array(bands), np.array(gaps), np.array(sres),
        np.array(gross), r_s, r_m,
    )
    if out_dir:
        write_backtest_csvs(out_dir, spec, report)
    return report


def write_backtest_csvs(out_dir, spec: zoo.PortfolioSpec, rep: BacktestReport):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"metrics_{spec.model}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "method", "cumulative_return", "max_drawdown", "sharpe", "sortino"])
        rows = [("ssqp", Metrics(rep.cumulative_return, rep.max_drawdown, rep.sharpe, rep.sortino)),
                ("m_estimate", rep.m_estimate), ("equal_weight", rep.equal_weight)]
        for name, m in rows:
            w.writerow([spec.model, name, _fmt(m.cumulative_return), _fmt(m.max_drawdown), _fmt(m.sharpe), _fmt(m.sortino)])
    with open(out / f"weights_{spec.model}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "period", "asset", "weight_ssqp", "sd_ssqp", "weight_m", "objective_gap"])
        for i, t0 in enumerate(rep.rebalance_index):
            for j in range(rep.weights.shape[1]):
                w.writerow([i, int(t0), j + 1, _fmt(rep.weights[i, j]), _fmt(rep.bands[i, j]),
                            _fmt(rep.weights_m[i, j]), _fmt(rep.objective_gap[i])])
