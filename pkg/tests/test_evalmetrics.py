import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epiforge.errors import DataError
from epiforge.evalmetrics import (UNDEFINED, evaluate_run, load_report, mape, metrics_by_county, pcorr, ratio_report,
                                  rmse, write_ratio_csv, write_report)


def rmse_oracle(y, f):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(y, f)) / len(y))


def mape_oracle(y, f):
    return 100.0 * math.fsum(abs(a - b) / (a + 1.0) for a, b in zip(y, f)) / len(y)


def pcorr_oracle(y, f):
    my, mf = math.fsum(y) / len(y), math.fsum(f) / len(f)
    sxy = math.fsum((a - my) * (b - mf) for a, b in zip(y, f))
    sxx = math.fsum((a - my) ** 2 for a in y)
    syy = math.fsum((b - mf) ** 2 for b in f)
    return sxy / math.sqrt(sxx * syy)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([0, 0], [1, 1]) == 1.0


def test_mape_examples():
    assert mape([4, 5], [4, 5]) == 0.0
    assert mape([0, 0], [1, 1]) == 100.0
    assert mape([9], [4]) == 50.0


def test_pcorr_examples():
    y = np.array([1.0, 3.0, 2.0, 7.0])
    assert pcorr(y, 2 * y + 3) == pytest.approx(1.0, abs=1e-15)
    assert pcorr(y, -y) == pytest.approx(-1.0, abs=1e-15)
    assert pcorr([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) is UNDEFINED


@settings(max_examples=60)
@given(st.integers(2, 60), st.integers(0, 2**32))
def test_metrics_match_oracles(n, seed):
    rng = np.random.default_rng(seed)
    y, f = rng.uniform(0, 500, n), rng.uniform(0, 500, n)
    assert abs(rmse(y, f) - rmse_oracle(y, f)) <= 1e-12 * max(1.0, rmse_oracle(y, f))
    assert abs(mape(y, f) - mape_oracle(y, f)) <= 1e-12 * max(1.0, mape_oracle(y, f))
    assert abs(pcorr(y, f) - pcorr_oracle(y, f)) <= 1e-12


def test_length_mismatch():
    with pytest.raises(DataError):
        rmse([1, 2], [1])


def by_county(values):
    return {"state": {h: dict(zip(("rmse", "mape", "pcorr"), v)) for h, v in values.items()}}


def test_ratio_examples():
    a = by_county({1: (2.0, 10.0, 1.0), 2: (4.0, 20.0, 1.0)})
    assert ratio_report(a, a)["state"] == {"rmse_ratio": 1.0, "mape_ratio": 1.0, "pcorr_ratio": 1.0}
    b = by_county({1: (4.0, 10.0, 0.0), 2: (8.0, 20.0, 0.0)})
    r = ratio_report(a, b)["state"]
    assert r["rmse_ratio"] == 2.0 and r["pcorr_ratio"] == 2.0


def test_ratio_propagates_undefined():
    a = by_county({1: (0.0, 0.0, UNDEFINED)})
    b = by_county({1: (1.0, 1.0, 0.5)})
    r = ratio_report(a, b)["state"]
    assert r == {"rmse_ratio": UNDEFINED, "mape_ratio": UNDEFINED, "pcorr_ratio": UNDEFINED}


def test_perfect_forecaster():
    truth = np.array([[3.0, 1.0, 2.0], [5.0, 2.0, 3.0], [9.0, 4.0, 5.0], [4.0, 1.0, 3.0]])
    fc = {(i, h): truth[i + h - 1] for i in range(4) for h in (1, 2) if i + h <= 4}
    rep = evaluate_run(truth, fc)
    for h in (1, 2):
        for col in ("state", "county_1", "county_2"):
            m = rep["per_horizon"][h][col]
            assert m["rmse"] == 0.0 and m["mape"] == 0.0 and m["pcorr"] == pytest.approx(1.0)
    assert rep["excluded"] == 0


def test_single_week_reduces_to_scalar_definitions():
    truth = np.array([[9.0, 9.0]])
    rep = evaluate_run(truth, {(0, 1): np.array([4.0, 10.0])})
    assert rep["per_horizon"][1]["state"]["rmse"] == 5.0
    assert rep["per_horizon"][1]["state"]["mape"] == 50.0
    assert rep["per_horizon"][1]["state"]["pcorr"] is UNDEFINED


def test_three_week_hand_computation():
    truth = np.array([[10.0, 10.0], [20.0, 20.0], [40.0, 40.0]])
    fc = {(0, 1): np.array([12.0, 12.0]), (1, 1): np.array([18.0, 18.0]), (2, 1): np.array([43.0, 43.0]),
          (0, 2): np.array([25.0, 25.0]), (3, 1): np.array([1.0, 1.0])}
    rep = evaluate_run(truth, fc)
    h1 = rep["per_horizon"][1]["state"]
    # errors 2, -2, 3 against truths 10, 20, 40
    assert h1["rmse"] == pytest.approx(math.sqrt((4 + 4 + 9) / 3), rel=1e-14)
    assert h1["mape"] == pytest.approx(100 * (2 / 11 + 2 / 21 + 3 / 41) / 3, rel=1e-14)
    assert h1["n"] == 3
    assert rep["per_horizon"][2]["state"]["rmse"] == 5.0
    assert rep["excluded"] == 1                           # issue 3 targets week 4
    assert rep["per_week"][2]["state"]["rmse"] == pytest.approx((2 + 5) / 2)


def test_missing_truth_rows_are_excluded():
    truth = np.array([[1.0, 1.0], [np.nan, np.nan], [3.0, 3.0]])
    rep = evaluate_run(truth, {(0, 1): np.ones(2), (1, 1): np.ones(2), (0, 2): np.ones(2), (1, 2): np.ones(2)})
    # (1, 1) and (0, 2) both target the missing week 2
    assert rep["excluded"] == 2
    assert rep["per_horizon"][1]["state"]["n"] == 1 and rep["per_horizon"][2]["state"]["n"] == 1


def test_report_files_round_trip(tmp_path):
    truth = np.array([[3.0, 3.0], [5.0, 5.0], [4.0, 4.0]])
    rep = evaluate_run(truth, {(0, 1): np.array([3.0, 3.0]), (1, 1): np.array([4.0, 5.0]),
                               (2, 1): np.array([1.0, 1.0])})
    write_report(rep, tmp_path)
    back = load_report(tmp_path)
    assert metrics_by_county(back)["state"][1]["rmse"] == rep["per_horizon"][1]["state"]["rmse"]
    ratios = ratio_report(metrics_by_county(back), metrics_by_county(back))
    write_ratio_csv(ratios, tmp_path / "ratio.csv")
    assert (tmp_path / "ratio.csv").read_text().splitlines()[1] == "state,1.0,1.0,1.0"
    one_week = evaluate_run(truth[:1], {(0, 1): np.array([2.0, 2.0])})
    write_report(one_week, tmp_path / "one")
    assert "NA" in (tmp_path / "one" / "per_county.csv").read_text()
