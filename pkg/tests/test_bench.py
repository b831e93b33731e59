import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from scaleup.bench import (FIELDS, CustomEstimator, bias_gap, compute_metrics, plot_data,
                           read_raw_csv, run_benchmark)
from scaleup.core import ConfigError, EstimateResult
from scaleup.dgp import DgpConfig
from scaleup.estimators import EstimatorSpec

SMALL = DgpConfig(scale=0.05)


def oracle(shift=0.0):
    def fn(rep):
        t = rep.truth.true_tatt + shift
        return EstimateResult("TATT", t, t, t)
    return fn


def test_oracle_estimator_is_unbiased_and_covers():
    res = run_benchmark(SMALL, [CustomEstimator("oracle", "TATT", oracle())], reps=3, seed=1)
    row = res.row("oracle", "TATT")
    assert row.bias == 0 and row.rmse == 0 and row.coverage == 1.0 and row.n_effective == 3


def test_shifted_zero_width_interval():
    res = run_benchmark(SMALL, [CustomEstimator("plus1", "TATT", oracle(1.0))], reps=3, seed=1)
    row = res.row("plus1", "TATT")
    assert row.bias == pytest.approx(1.0)
    assert row.coverage == 0.0 and row.bias_adjusted_coverage == 1.0 and row.ci_width == 0.0


def test_three_replication_hand_row():
    est, truth = [1.0, 4.0, 2.0], [0.0, 2.0, 2.0]
    iv = [(0.5, 1.5), (2.5, 5.0), (-1.0, 3.0)]
    row = compute_metrics(est, iv, [0.3, 0.6, 1.0], truth, "X", "SATT", [0.2, None, 0.6])
    # errors 1, 2, 0
    assert row.bias == pytest.approx(1.0)
    assert row.se == pytest.approx(math.sqrt(2 / 3))
    assert row.rmse == pytest.approx(math.sqrt(5 / 3))
    assert row.coverage == pytest.approx(1 / 3)
    # shifted intervals (-0.5, 0.5), (1.5, 4), (-2, 2) cover 0, 2, 2
    assert row.bias_adjusted_coverage == 1.0
    assert row.ci_width == pytest.approx((1 + 2.5 + 4) / 3)
    assert row.mean_estimate == pytest.approx(7 / 3)
    assert row.mean_estimated_se == pytest.approx(1.9 / 3)
    assert row.prob_savings == pytest.approx(0.4)
    assert row.mc_se_of_bias == pytest.approx(math.sqrt(2 / 3) / math.sqrt(3))


def test_rmse_formula_fixture():
    # a reported row: bias 5.13, SE 6.01, RMSE 7.90
    assert math.hypot(5.13, 6.01) == pytest.approx(7.90, abs=0.005)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1,
                max_size=40))
def test_rmse_identity(pairs):
    est = np.array([p[0] for p in pairs])
    truth = np.array([p[1] for p in pairs])
    row = compute_metrics(est, np.column_stack([est - 1, est + 1]), np.ones(est.size), truth)
    assert math.hypot(row.bias, row.se) == pytest.approx(row.rmse, rel=1e-6, abs=1e-9)


def test_validity_flags_and_errors():
    row = compute_metrics([], np.empty((0, 2)), [], [], n_reps=5)
    assert not row.valid and math.isnan(row.bias)
    row = compute_metrics([1.0] * 9, [(0, 2)] * 9, [1] * 9, [1.0] * 9, n_reps=10)
    assert row.valid
    row = compute_metrics([1.0] * 8, [(0, 2)] * 8, [1] * 8, [1.0] * 8, n_reps=10)
    assert not row.valid
    with pytest.raises(ConfigError):
        compute_metrics([1.0], [(0, 1), (0, 1)], [1], [1.0])
    with pytest.raises(ConfigError):
        run_benchmark(SMALL, [], reps=1, seed=0)


def failing(rep):
    raise RuntimeError("boom")


def test_failures_are_skipped_and_flagged():
    res = run_benchmark(SMALL, [CustomEstimator("bad", "TATT", failing)], reps=2, seed=0)
    row = res.row("bad", "TATT")
    assert row.n_effective == 0 and not row.valid
    assert all("boom" in r["error"] for r in res.raw)


def test_jobs_do_not_change_results():
    specs = [EstimatorSpec("OLS", "SATT", bootstrap_b=10), EstimatorSpec("IPW", "TATT",
                                                                        bootstrap_b=10)]
    one = run_benchmark(SMALL, specs, reps=2, seed=4, jobs=1)
    two = run_benchmark(SMALL, specs, reps=2, seed=4, jobs=2)
    assert one.table_csv() == two.table_csv()
    assert one.raw_csv() == two.raw_csv()


def test_csv_layout_and_raw_round_trip():
    res = run_benchmark(SMALL, [CustomEstimator("oracle", "TATT", oracle())], reps=2, seed=1)
    lines = res.table_csv().splitlines()
    assert lines[0].split(",") == FIELDS and len(lines) == 2
    raw = read_raw_csv(res.raw_csv())
    assert [r["rep"] for r in raw] == [0, 1]
    assert_allclose([r["estimate"] for r in raw], [r["estimate"] for r in res.raw])
    assert plot_data(raw).splitlines()[0] == "rep,estimator,estimand,metric,value"


def test_bias_gap_hand_example():
    raw = []
    for rep, (e1, e2) in enumerate([(1.0, 3.0), (2.0, 5.0), (0.0, 4.0)]):
        raw.append({"rep": rep, "estimator": "A", "estimand": "SATT", "estimate": e1,
                    "truth": 0.0, "error": ""})
        raw.append({"rep": rep, "estimator": "B", "estimand": "SATT", "estimate": e2,
                    "truth": 0.0, "error": ""})
    gap, se = bias_gap(raw, "A", "B", "SATT")
    # paired differences 2, 3, 4
    assert gap == pytest.approx(3.0) and se == pytest.approx(1 / math.sqrt(3))
    assert math.isnan(bias_gap(raw[:2], "A", "B", "SATT")[0])
