import dataclasses
import math

import numpy as np
import pytest

from ssqp import engine, harness, inference, zoo
from ssqp.errors import (
    EgmfcqFailure,
    EmptyFile,
    EmptyRecords,
    EmptySeries,
    IntervalUndefined,
    NaNGuard,
    NonNumericCell,
    RaggedRows,
)
from ssqp.harness import ExperimentConfig, ProblemRef
from ssqp.problem import PrimalDual

CIRCLE = ProblemRef(family="benchmark", name="circle", noise="gaussian", sigma2=1e-2)


def _circle_cfg(**kw):
    base = dict(problem=CIRCLE, replications=6, iterations=2000, base_seed=3, target="lambda")
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# performance metrics
# ---------------------------------------------------------------------------


def test_drawdown_example():
    r = [0.1, -0.2, 0.1]
    np.testing.assert_allclose(np.cumprod(np.add(1.0, r)), [1.1, 0.88, 0.968])
    assert harness.max_drawdown(r) == pytest.approx(0.2)
    assert harness.cumulative_return(r) == pytest.approx(-0.032)


def test_constant_positive_returns_have_no_drawdown():
    assert harness.max_drawdown([0.01] * 10) == 0.0


def test_sharpe_example():
    assert harness.sharpe([0.01, 0.03]) == pytest.approx(1.4142, abs=1e-4)


def test_all_zero_returns():
    r = [0.0, 0.0, 0.0]
    assert harness.cumulative_return(r) == 0.0
    assert harness.max_drawdown(r) == 0.0
    with pytest.raises(NaNGuard):
        harness.sharpe(r)
    assert harness.sortino(r) == math.inf


def test_single_return():
    assert harness.cumulative_return([0.05]) == pytest.approx(0.05)
    assert harness.max_drawdown([0.05]) == 0.0
    with pytest.raises(NaNGuard):
        harness.sharpe([0.05])


def test_sortino_uses_downside_deviation():
    r = np.array([0.02, -0.01, 0.03, -0.03])
    assert harness.sortino(r) == pytest.approx(r.mean() / np.std([-0.01, -0.03], ddof=1))


@pytest.mark.parametrize("fn", [harness.cumulative_return, harness.max_drawdown, harness.sharpe, harness.sortino])
def test_empty_series_rejected(fn):
    with pytest.raises(EmptySeries):
        fn([])


def test_drawdown_in_unit_interval():
    r = np.random.default_rng(0).normal(0.0, 0.05, 500)
    assert 0.0 <= harness.max_drawdown(r) <= 1.0


def test_metrics_guard_to_nan():
    m = harness.Metrics.of([0.0, 0.0])
    assert math.isnan(m.sharpe) and m.sortino == math.inf


# ---------------------------------------------------------------------------
# coverage reports
# ---------------------------------------------------------------------------


def test_two_of_three_covering():
    rep = harness.coverage_report([(0.0, 1.0), (0.5, 2.0), (2.0, 3.0)], 0.75)
    assert rep.cov_rate == pytest.approx(0.6667, abs=1e-4)
    assert rep.n == 3


def test_identical_lengths_have_zero_sd():
    rep = harness.coverage_report([(0.0, 1.0), (1.0, 2.0)], 0.5)
    assert rep.len_sd == 0.0 and rep.avg_len == 1.0


def test_closed_interval_endpoints_count():
    assert harness.coverage_report([(0.0, 1.0), (1.0, 2.0)], 1.0).cov_rate == 1.0


def test_hand_recount_on_ten_rows():
    rows = [(-0.3, 0.1), (-0.1, 0.4), (0.05, 0.2), (-0.5, -0.01), (-0.2, 0.0),
            (0.0, 0.3), (-0.05, 0.05), (0.1, 0.9), (-1.0, 1.0), (-0.02, 0.02)]
    # truth 0: rows 0, 1, 4, 5, 6, 8, 9 contain it
    lengths = [0.4, 0.5, 0.15, 0.49, 0.2, 0.3, 0.1, 0.8, 2.0, 0.04]
    mean = sum(lengths) / 10
    sd = math.sqrt(sum((x - mean) ** 2 for x in lengths) / 10)
    rep = harness.coverage_report([{"lo": a, "hi": b} for a, b in rows], 0.0)
    assert rep.cov_rate == 0.7
    assert rep.avg_len == pytest.approx(mean, abs=1e-15)
    assert rep.len_sd == pytest.approx(sd, abs=1e-15)


def test_empty_records():
    with pytest.raises(EmptyRecords):
        harness.coverage_report([], 0.0)


def test_zero_iterations_interval_undefined():
    with pytest.raises(IntervalUndefined):
        harness.run_experiment(_circle_cfg(replications=1, iterations=0))


@pytest.mark.parametrize("kw", [dict(replications=0), dict(level=1.0), dict(iterations=-1), dict(parallel_workers=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _circle_cfg(**kw)


def test_target_vector_presets():
    p = harness.build_problem(ProblemRef(d=4))
    np.testing.assert_array_equal(harness.target_vector("group-mean-contrast", p), [1, 1, -1, -1, 0])
    np.testing.assert_array_equal(harness.target_vector("mean", p), [0.25] * 4 + [0])
    np.testing.assert_array_equal(harness.target_vector("lambda", p), [0, 0, 0, 0, 1])
    np.testing.assert_array_equal(harness.target_vector("1,0,0,2", p), [1, 0, 0, 2, 0])
    np.testing.assert_array_equal(harness.target_vector("1,0,0,2,3", p), [1, 0, 0, 2, 3])
    with pytest.raises(ValueError):
        harness.target_vector("1,2", p)


def test_target_truth_on_benchmarks():
    circle = harness.build_problem(CIRCLE)
    assert harness.target_truth(harness.target_vector("lambda", circle), circle) == -0.5
    assert harness.target_truth(harness.target_vector("mean", circle), circle) == 2.0
    glm = harness.build_problem(ProblemRef(d=4))
    assert harness.target_truth(harness.target_vector("group-mean-contrast", glm), glm) == pytest.approx(0.5)


def test_pinned_primal_gives_degenerate_interval():
    # on the circle the equality fixes x, so only the multiplier has spread
    rec = harness.run_replication(_circle_cfg(target="mean"), 0)
    assert rec["len"] == 0.0
    assert harness.run_replication(_circle_cfg(), 0)["len"] > 0.0


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def test_experiment_writes_schemas(tmp_path):
    cfg = _circle_cfg(output_dir=str(tmp_path))
    rep, records = harness.run_experiment(cfg)
    assert rep.n == 6 and rep.n_failed == 0
    assert rep.avg_len > 0
    reps = (tmp_path / "replications.csv").read_text().splitlines()
    assert reps[0] == ",".join(harness.REP_COLUMNS)
    assert len(reps) == 7
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "problem,d,structure,r,cov_rate,avg_len,len_sd,reps,K,seed"
    fields = summary[1].split(",")
    assert fields[0] == "circle" and fields[1] == "1" and fields[8] == "2000" and fields[9] == "3"
    assert float(fields[4]) == rep.cov_rate
    assert [r["seed"] for r in records] == [3, 4, 5, 6, 7, 8]


def test_replication_seed_reproduces_standalone_run():
    cfg = _circle_cfg()
    rec = harness.run_replication(cfg, 2)
    p = harness.build_problem(CIRCLE)
    res = engine.run(p, PrimalDual.initial(p, p.meta["x0"]), cfg.ssqp, cfg.iterations, seed=5)
    s = res.summary
    omega = inference.plugin_omega(s.B_bar, inference.active_jacobian(s.J, s.active, 1),
                                   inference.sample_covariance(res.accumulator)).Omega
    w = inference.stack_w(res.state.pd, s.active)
    v = np.zeros(w.size)
    v[1] = 1.0
    lo, hi = inference.confidence_interval(w, omega, s.alpha_bar_last, v, 0.95, 0.5)
    assert (rec["lo"], rec["hi"]) == (lo, hi)
    assert rec["covered"] == int(lo <= -0.5 <= hi)


def test_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    harness.run_experiment(_circle_cfg(output_dir=str(a)))
    harness.run_experiment(_circle_cfg(output_dir=str(b)))
    for name in ("replications.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    a, b = tmp_path / "w1", tmp_path / "w2"
    harness.run_experiment(_circle_cfg(output_dir=str(a), replications=4), workers=1)
    harness.run_experiment(_circle_cfg(output_dir=str(b), replications=4), workers=2)
    for name in ("replications.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_workers_environment_override(monkeypatch):
    monkeypatch.setenv("SSQP_WORKERS", "3")
    assert harness._workers(1) == 3
    monkeypatch.setenv("SSQP_WORKERS", "")
    assert harness._workers(2) == 2


def test_failed_replications_are_recorded_and_excluded(monkeypatch, tmp_path):
    real = engine.run

    def flaky(p, init, cfg, K, seed=0, **kw):
        if seed % 3 == 0:
            raise EgmfcqFailure("injected")
        return real(p, init, cfg, K, seed=seed, **kw)

    monkeypatch.setattr(engine, "run", flaky)
    cfg = _circle_cfg(output_dir=str(tmp_path))
    with pytest.warns(RuntimeWarning, match="2 of 6"):
        rep, records = harness.run_experiment(cfg, workers=1)
    assert rep.n == 4 and rep.n_failed == 2
    failed = [r for r in records if r["covered"] is None]
    assert [r["seed"] for r in failed] == [3, 6]
    assert all("EgmfcqFailure" in r["error"] for r in failed)
    rows = (tmp_path / "replications.csv").read_text().splitlines()
    assert rows[1].split(",")[2] == ""


def test_oracle_covariance_hook_uses_population_sandwich():
    ref = ProblemRef(d=3)
    cfg = ExperimentConfig(problem=ref, replications=1, iterations=3000, base_seed=1, oracle_omega=True)
    rec = harness.run_replication(cfg, 0)
    p = harness.build_problem(ref)
    res = engine.run(p, PrimalDual.initial(p, p.meta["x0"]), cfg.ssqp, 3000, seed=1)
    oc = inference.oracle_omega(p, zoo.analytic_solution(p))
    w = inference.stack_w(res.state.pd, oc.active)
    v = np.zeros(w.size)
    v[:3] = p.meta["mu_a"]
    lo, hi = inference.confidence_interval(w, oc.Omega_star, res.summary.alpha_bar_last, v, 0.95, 0.5)
    assert rec["lo"] == lo and rec["hi"] == hi


# ---------------------------------------------------------------------------
# returns files
# ---------------------------------------------------------------------------


def _write(tmp_path, text, name="r.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_two_rows(tmp_path):
    R, names = harness.load_returns_csv(_write(tmp_path, "a,b,c\n0.01,0.02,-0.01\n0.0,0.5,1e-3\n"))
    assert names == ["a", "b", "c"]
    np.testing.assert_array_equal(R, [[0.01, 0.02, -0.01], [0.0, 0.5, 1e-3]])


def test_round_trip(tmp_path):
    R = harness.synthetic_returns(20, 30, seed=1)
    path = tmp_path / "s.csv"
    harness.write_returns_csv(path, R)
    back, names = harness.load_returns_csv(path)
    np.testing.assert_array_equal(back, R)
    assert len(names) == 30


def test_ragged_row_reports_line(tmp_path):
    with pytest.raises(RaggedRows) as info:
        harness.load_returns_csv(_write(tmp_path, "a,b\n0.1,0.2\n\n0.3\n"))
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_non_numeric_cell_reports_position(tmp_path):
    with pytest.raises(NonNumericCell) as info:
        harness.load_returns_csv(_write(tmp_path, "a,b\n0.1,0.2\n0.3,abc\n"))
    assert (info.value.row, info.value.col) == (3, 2)


@pytest.mark.parametrize("text", ["", "a,b\n", "\n\n"])
def test_empty_file(tmp_path, text):
    with pytest.raises(EmptyFile):
        harness.load_returns_csv(_write(tmp_path, text))


# ---------------------------------------------------------------------------
# backtests
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_backtest():
    R = harness.synthetic_returns(150, 6, seed=2)
    spec = zoo.PortfolioSpec("gmv", 6)
    return spec, harness.backtest(R, window=100, rebalance=20, spec=spec, iterations=3000, seed=4)


def test_backtest_windows_and_constraints(small_backtest):
    spec, rep = small_backtest
    np.testing.assert_array_equal(rep.rebalance_index, [100, 120])
    assert rep.returns_ssqp.size == 40
    assert np.all(rep.sum_residual <= 1e-8)
    assert np.all(rep.gross_excess <= 1e-8)
    assert np.all(rep.bands >= 0.0)
    assert 0.0 <= rep.max_drawdown <= 1.0
    assert rep.cumulative_return == pytest.approx(harness.cumulative_return(rep.returns_ssqp))


def test_backtest_matches_m_estimate_closely(small_backtest):
    _, rep = small_backtest
    assert np.all(rep.objective_gap <= 0.05)
    assert np.all(rep.objective_gap >= -1e-6)


def test_backtest_csvs_reproducible(tmp_path):
    R = harness.synthetic_returns(90, 4, seed=5)
    spec = zoo.PortfolioSpec("exp", 4)
    for sub in ("a", "b"):
        harness.backtest(R, 60, 15, spec, iterations=500, seed=1, out_dir=str(tmp_path / sub))
    for name in ("metrics_exp.csv", "weights_exp.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "weights_exp.csv").read_text().splitlines()
    assert lines[0] == "window,period,asset,weight_ssqp,sd_ssqp,weight_m,objective_gap"
    assert len(lines) == 1 + 2 * 4


def test_backtest_needs_enough_periods():
    R = harness.synthetic_returns(50, 3)
    with pytest.raises(ValueError):
        harness.backtest(R, 40, 10, zoo.PortfolioSpec("gmv", 3))


def test_synthetic_returns_shape_and_scale():
    R = harness.synthetic_returns(500, 30, seed=0)
    assert R.shape == (500, 30)
    assert 0.003 < R.std() < 0.03
    np.testing.assert_array_equal(R, harness.synthetic_returns(500, 30, seed=0))


def test_config_dataclass_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        _circle_cfg().iterations = 5
