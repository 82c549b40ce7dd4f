"""Compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because ``SSQP_DISABLE_NUMBA`` is
read at import time. Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from ssqp import _kernels as K, backend, engine, harness, zoo
from ssqp.problem import PrimalDual

repeat = int(sys.argv[1])
out = {"backend": backend()}


def timed(name, fn, n):
    fn()  # warm-up, includes compilation for numba
    t = time.perf_counter()
    for _ in range(n):
        fn()
    out[name] = (time.perf_counter() - t) / n


rng = np.random.default_rng(0)
n = 20
L = rng.normal(size=(n, n))
B = L.T @ L + 0.1 * np.eye(n)
g = rng.normal(size=n)
A = rng.normal(size=(2, n))
lb, ub = -np.ones(n), np.ones(n)
b = A @ rng.uniform(-0.5, 0.5, n)
no = np.zeros(n, dtype=np.bool_)
timed("qp_kernel n=20", lambda: K.qp_kernel(B, g, A, b, lb, ub, 1e-9, 500, no, no, False), repeat)

S = B - 2.0 * np.eye(n)
timed("min_eig n=20", lambda: K.min_eig(S), repeat)

chess = np.zeros((2, n, n))
x = np.full(n, 0.5)
timed("hessian_kernel n=20", lambda: K.hessian_kernel(S, np.zeros(2), chess, A, x, lb, ub, 1e-2, 1e-2, 1e6),
      repeat)

p = zoo.make_benchmark("circle", zoo.Gaussian(1e-2))
iters = 50 * repeat
timed(f"run circle K={iters}", lambda: engine.run(p, PrimalDual.initial(p, p.meta["x0"]), engine.SsqpConfig(),
                                                  iters, seed=0), 1)
R = harness.synthetic_returns(120, 10, seed=0)
q = zoo.make_portfolio(zoo.PortfolioSpec("gmv", 10), zoo.ReturnWindow(100 * R))
timed(f"run gmv-10 K={iters}", lambda: engine.run(q, PrimalDual.initial(q, q.meta["x0"]), engine.SsqpConfig(),
                                                  iters, seed=0), 1)
print(json.dumps(out))
"""


def measure(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["SSQP_DISABLE_NUMBA"] = "1"
    else:
        env.pop("SSQP_DISABLE_NUMBA", None)
    proc = subprocess.run([sys.executable, "-W", "ignore", "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    t = time.perf_counter()
    fast = measure(False, args.repeat)
    slow = measure(True, args.repeat)
    print(f"{'kernel':28s} {'numba':>12s} {'numpy':>12s} {'speed-up':>9s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:28s} {fast[key] * 1e6:10.1f}us {slow[key] * 1e6:10.1f}us {slow[key] / fast[key]:8.1f}x")
    print(f"backends: {fast['backend']} / {slow['backend']}; wall {time.perf_counter() - t:.1f}s")


if __name__ == "__main__":
    main()
