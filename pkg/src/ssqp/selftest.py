"""Built-in checks run by ``ssqp selftest``."""

from __future__ import annotations

import numpy as np

from . import zoo
from .problem import finite_difference_check
from .qp import QpStatus, brute_force_qp, kkt_violation, random_qp, solve_qp

QP_PRIMAL_TOL = 1e-8
QP_KKT_TOL = 1e-9


def qp_equivalence(n_instances: int = 1000, seed: int = 0):
    """Active-set solver against enumeration of active sets.

    Returns ``(passed, total, failures)`` where ``failures`` lists the indices
    of mismatching instances.
    """
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_instances):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        ref = brute_force_qp(qp)
        ok = sol.status is QpStatus.Optimal and np.max(np.abs(sol.d - ref.d)) <= QP_PRIMAL_TOL
        ok = ok and max(kkt_violation(qp, sol).values()) <= QP_KKT_TOL
        if not ok:
            failures.append(i)
    return n_instances - len(failures), n_instances, failures


def finite_differences(seed: int = 0):
    """Every catalog problem against central differences.

    Returns ``(passed, total, failures)`` with failures as ``(name, oracle, err)``.
    """
    failures = []
    total = 0
    for name, entry in zoo.catalog(seed=seed).items():
        checks = [("exact", True)]
        if entry.samples_consistent:
            checks.append(("sample", False))
        for label, exact in checks:
            total += 1
            err = max(finite_difference_check(entry.problem, entry.x, use_exact=exact))
            if not err <= entry.tol:
                failures.append((name, label, err))
    return total - len(failures), total, failures


def run_all(n_qp: int = 1000, seed: int = 0) -> dict:
    return {"qp-equivalence": qp_equivalence(n_qp, seed), "finite-differences": finite_differences(seed)}
