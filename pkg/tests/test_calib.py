import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epiforge.calib import (TAU_LOWER, CalibrationSample, SurveillanceSeries, attack_rate, calibrate_tau,
                            collect_samples, ew_to_sw, load_samples, load_surveillance, mean_attack_rate,
                            nelder_mead, read_ew_csv, replicate_seeds, rescale_to_network, save_samples,
                            scale_surveillance, sw_to_ew, write_ew_csv)
from epiforge.errors import ConfigError, DataError, NumericError
from epiforge.netgen import generate_network
from epiforge.simcore import DiseaseParams

from conftest import make_surveillance


def series(region="r", season="s", counts=None, population=1000, ratio=1.0):
    counts = np.zeros(52) if counts is None else counts
    return SurveillanceSeries(region, season, counts, population, ratio)


def test_week_conversion_examples():
    assert ew_to_sw(40) == 1
    assert ew_to_sw(39) == 52
    assert ew_to_sw(1) == 14
    with pytest.raises(DataError):
        ew_to_sw(53)


@given(st.integers(1, 52))
def test_week_conversion_is_a_bijection(sw):
    assert ew_to_sw(sw_to_ew(sw)) == sw


def test_scaling_examples():
    c = np.zeros(52)
    c[0] = 100
    assert scale_surveillance(series(counts=c, ratio=1.0))[0] == 100
    assert scale_surveillance(series(counts=c, ratio=0.0692))[0] == pytest.approx(1445.09, abs=0.01)
    assert scale_surveillance(series(counts=np.zeros(52), ratio=0.3)).sum() == 0


def test_attack_rate_examples():
    assert attack_rate(np.zeros(52), 10) == 0.0
    assert attack_rate(np.full(52, 5.0), 260) == 1.0
    rng = np.random.default_rng(1)
    c = rng.uniform(0, 50, 52)
    assert attack_rate(c, 10**6) == math.fsum(c[::-1]) / 10**6 or \
        attack_rate(c, 10**6) == pytest.approx(math.fsum(c) / 10**6, rel=1e-15)
    with pytest.warns(RuntimeWarning):
        assert attack_rate(np.full(52, 10.0), 100) == 1.0


def test_collect_samples_counts_and_values():
    regions = [f"r{i}" for i in range(4)]
    ss = [series(r, str(s)) for r in regions for s in range(6)]
    assert len(collect_samples("r2", ss)) == 24
    assert collect_samples("r2", ss)[0].region == "r2"

    c = np.arange(52, dtype=float)
    one = collect_samples("x", [series("x", "2015", c, 5000, 0.5)])
    assert one == [CalibrationSample("x", "2015", attack_rate(c / 0.5, 5000), 0.0)]
    zero = collect_samples("x", [series("x", "2016")])[0]
    assert (zero.attack_rate, zero.initial_cases) == (0.0, 0.0)


def test_rescale_keeps_fraction():
    s = [CalibrationSample("a", "1", 0.1, 500.0)]
    assert rescale_to_network(s, {"a": 100000}, 1000)[0].initial_cases == pytest.approx(5.0)


def test_nelder_mead_examples():
    r = nelder_mead(lambda x: (x - 2.0) ** 2, 0.0)
    assert abs(r.x - 2.0) <= 1e-6
    r = nelder_mead(lambda v: v[0] ** 2 + v[1] ** 2, [3.0, 4.0])
    assert np.all(np.abs(r.x) <= 1e-6)
    rosen = lambda v: (1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2
    r = nelder_mead(rosen, [-1.2, 1.0], max_iter=500)
    assert r.iterations <= 500
    assert np.all(np.abs(r.x - 1.0) <= 1e-3)


def test_nelder_mead_agrees_with_scipy_on_quadratic():
    from scipy.optimize import minimize
    f = lambda v: (v[0] - 1.5) ** 2 + 3 * (v[1] + 0.5) ** 2 + v[0] * v[1]
    ours = nelder_mead(f, [0.0, 0.0]).x
    ref = minimize(f, [0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12}).x
    assert np.allclose(ours, ref, atol=1e-6)


def test_nelder_mead_non_finite_start():
    with pytest.raises(NumericError):
        nelder_mead(lambda x: float("nan"), 1.0)


@pytest.fixture(scope="module")
def small_net():
    return generate_network({"county_sizes": [300], "mean_household_size": 4, "mean_external_degree": 12}, 2)


def test_target_zero_returns_lower_bound(small_net):
    res = calibrate_tau(0.0, small_net, N_I=3, replicates=2, weeks=10)
    assert res.tau == TAU_LOWER
    assert res.residual == pytest.approx(0.0, abs=0.02)


def test_calibration_monotone_in_target(small_net):
    kw = dict(N_I=3, replicates=3, weeks=20, seed=1)
    lo = calibrate_tau(0.1, small_net, **kw)
    hi = calibrate_tau(0.4, small_net, **kw)
    assert lo.tau <= hi.tau
    assert lo.residual < 0.05 and hi.residual < 0.05
    seeds = replicate_seeds(1, 3)
    assert mean_attack_rate(small_net, DiseaseParams(hi.tau, 3), 20, seeds) == pytest.approx(hi.achieved_attack_rate)


def test_unreachable_target_is_low_confidence(small_net):
    # without seeds no tau can produce incidence
    res = calibrate_tau(0.5, small_net, N_I=0, replicates=2, weeks=5)
    assert res.low_confidence
    assert res.residual == pytest.approx(0.5)


def test_calibrate_rejects_bad_inputs(small_net):
    with pytest.raises(ConfigError):
        calibrate_tau(1.5, small_net)
    with pytest.raises(ConfigError):
        calibrate_tau(0.1, small_net, replicates=0)


def test_ew_csv_round_trip_and_week_53(tmp_path):
    counts = np.arange(52, dtype=float)
    write_ew_csv(tmp_path / "a.csv", counts)
    assert np.array_equal(read_ew_csv(tmp_path / "a.csv"), counts)
    text = (tmp_path / "a.csv").read_text() + "53,999\n"
    (tmp_path / "b.csv").write_text(text)
    assert np.array_equal(read_ew_csv(tmp_path / "b.csv"), counts)
    (tmp_path / "c.csv").write_text("ew,count\n40,1\n")
    with pytest.raises(DataError):
        read_ew_csv(tmp_path / "c.csv")


def test_load_surveillance_and_samples_round_trip(tmp_path):
    d = make_surveillance(tmp_path / "surv", seasons=3)
    target, ss = load_surveillance(d)
    assert target == "alpha" and len(ss) == 6
    samples = collect_samples(target, ss)
    assert {round(s.attack_rate, 3) for s in samples} == {0.08, 0.1, 0.12}
    taus = [calibrate_tau(0.0, generate_network({"county_sizes": [20]}, 0), N_I=0, replicates=1, weeks=1)
            for _ in samples]
    save_samples(tmp_path / "s.json", samples, taus, {"target": target})
    back, back_taus = load_samples(tmp_path / "s.json")
    assert back == samples and back_taus == [TAU_LOWER] * 6
    assert json.loads((tmp_path / "s.json").read_text())["target"] == "alpha"


def test_load_surveillance_errors(tmp_path):
    with pytest.raises(DataError):
        load_surveillance(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError):
        load_surveillance(tmp_path / "empty")
