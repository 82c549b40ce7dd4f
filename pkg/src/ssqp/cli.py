"""Command-line interface: ``ssqp {run,coverage,backtest,selftest}``.

Exit codes: 0 on success, 1 on runtime failures, 2 on configuration or usage
errors (the offending key is named).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import engine, harness, inference, selftest, zoo
from .config import load_config
from .errors import ConfigError, SsqpError
from .problem import PrimalDual

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--workers", type=int, default=None, help="parallel workers (SSQP_WORKERS wins)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    ap = argparse.ArgumentParser(prog="ssqp", description="Online stochastic SQP estimation and inference.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="single trajectory with a KKT residual log")
    p.add_argument("--config", required=True)

    p = sub.add_parser("coverage", parents=[common], help="Monte Carlo coverage study")
    p.add_argument("--config", required=True)

    p = sub.add_parser("backtest", parents=[common], help="rolling-window portfolio backtest")
    p.add_argument("--returns", required=True, help="CSV with a header and one row of decimal returns per period")
    p.add_argument("--model", required=True, choices=["gmv", "mv", "exp", "log"])
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--rebalance", type=int, required=True)
    p.add_argument("--iterations", type=int, default=80000, help="SSQP iterations per window")
    p.add_argument("--gross-bound", type=float, default=3.0)
    p.add_argument("--eta1", type=float, default=0.1)
    p.add_argument("--eta2", type=float, default=15.0)
    p.add_argument("--config", default=None, help="optional config supplying ssqp.* keys")

    p = sub.add_parser("selftest", parents=[common], help="QP equivalence and finite-difference suites")
    p.add_argument("--qp-instances", type=int, default=1000)
    return ap


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["base_seed"] = args.seed
    if args.workers is not None:
        out["parallel_workers"] = args.workers
    if args.out is not None:
        out["output_dir"] = args.out
    return out


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    p = harness.build_problem(cfg.problem)
    K_iter = cfg.iterations
    log_every = cfg.log_every or max(1, K_iter // 100)
    res = engine.run(p, PrimalDual.initial(p, p.meta["x0"]), cfg.ssqp, K_iter, seed=cfg.base_seed,
                     log_every=log_every)
    out = Path(cfg.output_dir or ".")
    fmt = harness._fmt
    _write_rows(out / "kkt_log.csv", ["k", "kkt_residual"], [[k, fmt(v)] for k, v in res.summary.kkt_log])
    pd = res.state.pd
    rows = [["x", i, fmt(v)] for i, v in enumerate(pd.x)]
    rows += [["lambda", i, fmt(v)] for i, v in enumerate(pd.lam)]
    rows += [["mu_lower", i, fmt(v)] for i, v in enumerate(pd.mu1)]
    rows += [["mu_upper", i, fmt(v)] for i, v in enumerate(pd.mu2)]
    _write_rows(out / "final_iterate.csv", ["block", "index", "value"], rows)
    _say(args, f"{p.name}: K={K_iter} x={np.array2string(pd.x, precision=6)} "
               f"lambda={np.array2string(pd.lam, precision=6)}")
    if res.summary.kkt_log:
        _say(args, f"final KKT residual {res.summary.kkt_log[-1][1]:.3e}; logs in {out}")
    if K_iter > 0:
        try:
            s = res.summary
            sigma = inference.sample_covariance(res.accumulator)
            omega = inference.plugin_omega(s.B_bar, inference.active_jacobian(s.J, s.active, p.d), sigma).Omega
            v = harness.target_vector(cfg.target, p)
            w = inference.stack_w(pd, s.active)
            vv = np.zeros(w.size)
            vv[: v.size] = v
            eta = inference.normality_eta(cfg.ssqp.b1, cfg.ssqp.iota1)
            lo, hi = inference.confidence_interval(w, omega, s.alpha_bar_last, vv, cfg.level, eta)
            _say(args, f"{cfg.level:.0%} interval for the target: [{lo:.6g}, {hi:.6g}]")
        except (SsqpError, ValueError) as exc:
            _say(args, f"no interval: {exc}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if not cfg.output_dir:
        cfg = dataclasses.replace(cfg, output_dir=".")
    rep, records = harness.run_experiment(cfg)
    _say(args, f"coverage {rep.cov_rate:.4f}  avg length {rep.avg_len:.4e} (sd {rep.len_sd:.2e})  "
               f"n={rep.n} failed={rep.n_failed}; CSVs in {cfg.output_dir}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = load_config(args.config).ssqp if args.config else engine.SsqpConfig()
    R, names = harness.load_returns_csv(args.returns)
    spec = zoo.PortfolioSpec(args.model, R.shape[1], args.gross_bound, args.eta1, args.eta2)
    out = args.out or "."
    rep = harness.backtest(R, args.window, args.rebalance, spec, cfg, iterations=args.iterations,
                           seed=args.seed or 0, out_dir=out)
    _say(args, f"{args.model}: cumulative {rep.cumulative_return:.4f}  max drawdown {rep.max_drawdown:.4f}  "
               f"sharpe {rep.sharpe:.4f}  sortino {rep.sortino:.4f}  windows {len(rep.rebalance_index)}  "
               f"max gap {np.max(rep.objective_gap):.3%}; CSVs in {out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run_all(args.qp_instances, args.seed or 0)
    ok = True
    for name, (passed, total, failures) in results.items():
        _say(args, f"{name}: {passed}/{total} passed")
        if failures:
            ok = False
            print(f"{name} failures: {failures[:10]}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "coverage": cmd_coverage, "backtest": cmd_backtest, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        key = f" [key: {exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SsqpError, ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
