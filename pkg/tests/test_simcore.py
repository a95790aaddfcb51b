import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epiforge.errors import ConfigError, DataError, ParameterError
from epiforge.netgen import ContactNetwork, generate_network
from epiforge.simcore import (INCUBATION_DEFAULT, INFECTIOUS_DEFAULT, DiseaseParams, DurationDistribution, Epicurve,
                              HealthState, Scenario, SimState, Streams, VaccineSchedule, apply_vaccine_week,
                              load_epicurve, run_simulation, save_epicurve, step_day, transmission_probability)

S, E, I, R = HealthState.S, HealthState.E, HealthState.I, HealthState.R


def star(n_leaves, w=60.0):
    return ContactNetwork(np.zeros(n_leaves + 1, int), np.arange(n_leaves + 1), np.zeros(n_leaves, int),
                          np.arange(1, n_leaves + 1), np.full(n_leaves, w))


def test_transmission_probability_examples():
    assert transmission_probability(0.0, 480) == 0.0
    assert transmission_probability(0.5, 3, multiplier=2.0) == 1.0
    assert transmission_probability(2.0, 1) == 1.0
    expected = 1 - (1 - 4.88e-5) ** 480
    assert transmission_probability(4.88e-5, 480) == pytest.approx(expected, rel=1e-12)


@given(st.floats(0, 1e-2), st.floats(0, 1e3), st.floats(0, 5))
def test_transmission_probability_in_unit_interval(tau, w, m):
    p = transmission_probability(tau, w, m)
    assert 0.0 <= p <= 1.0


def test_duration_distribution_validation_and_quantile():
    d = DurationDistribution.from_dict({"3": 0.3, "4": 0.4, "5": 0.2, "6": 0.1})
    assert d == INFECTIOUS_DEFAULT
    assert d.mean() == pytest.approx(4.1)
    assert d.quantile(np.array([0.0, 0.29, 0.31, 0.71, 0.95])).tolist() == [3, 3, 4, 5, 6]
    with pytest.raises(ConfigError):
        DurationDistribution((1, 2), (0.5, 0.4))
    with pytest.raises(ConfigError):
        DurationDistribution((0,), (1.0,))


def test_step_without_infectious_only_counts_down():
    net = star(3)
    state = SimState.susceptible(4)
    state.status[1] = E
    state.days_left[1] = 2
    new, per_county = step_day(state, net, DiseaseParams(1e-3, 0), 0, Streams(0))
    assert per_county.sum() == 0
    assert new.status.tolist() == [S, E, S, S]
    assert new.days_left[1] == 1


def test_step_with_certain_transmission_exposes_all_neighbours():
    net = star(5)
    state = SimState.susceptible(6)
    state.status[0] = I
    state.days_left[0] = 3
    new, per_county = step_day(state, net, DiseaseParams(1.0, 1), 0, Streams(1))
    assert new.status[1:].tolist() == [E] * 5
    assert per_county.tolist() == [5]
    assert set(new.days_left[1:]) <= {1, 2, 3}


def test_step_uses_start_of_day_states():
    # a node exposed today cannot pass infection on the same day
    net = ContactNetwork([0, 0, 0], [0, 1, 2], [0, 1], [1, 2], [60.0, 60.0])
    state = SimState.susceptible(3)
    state.status[0] = I
    state.days_left[0] = 5
    new, _ = step_day(state, net, DiseaseParams(1.0, 1), 0, Streams(0))
    assert new.status.tolist() == [I, E, S]


def test_vaccine_quota_examples():
    rng = np.random.default_rng(0)
    state = SimState.susceptible(1000)
    assert not apply_vaccine_week(state, VaccineSchedule({1: 0.0}), 1, rng).any()
    full = apply_vaccine_week(state, VaccineSchedule({1: 1.0}), 1, rng)
    assert full.all()
    part = apply_vaccine_week(state, VaccineSchedule({1: 0.5}, compliance=0.6), 1, rng)
    assert part.sum() == 300


def test_vaccine_schedule_validation():
    with pytest.raises(Exception):
        VaccineSchedule({1: 0.7, 2: 0.6})
    with pytest.raises(Exception):
        VaccineSchedule({1: 0.1}, efficacy=1.5)


def test_no_seeds_gives_zero_curve():
    net = generate_network({"county_sizes": [40, 20]}, 0)
    curve = run_simulation(net, DiseaseParams(1e-3, 0), 6, 0)
    assert curve.values.shape == (6, 3)
    assert not curve.values.any()


def test_too_many_seeds_is_parameter_error():
    net = generate_network({"county_sizes": [10]}, 0)
    with pytest.raises(ParameterError):
        run_simulation(net, DiseaseParams(1e-3, 11), 2, 0)


def _trajectories(net, params, weeks, seed):
    days = []
    run_simulation(net, params, weeks, seed, observer=lambda d, s: days.append(s.status.copy()))
    return np.array(days)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(2e-5, 3e-3), st.integers(0, 8), st.integers(1, 6))
def test_run_invariants(seed, tau, n_i, weeks):
    net = generate_network({"county_sizes": [25, 15], "mean_external_degree": 4}, seed % 7)
    params = DiseaseParams(tau, n_i, vaccine=VaccineSchedule({1: 0.2}))
    traj = _trajectories(net, params, weeks, seed)
    curve = run_simulation(net, params, weeks, seed)
    assert curve.spatially_consistent()
    assert np.all(traj >= 0) and np.all(traj <= 3)
    # compartments only move forward S -> E -> I -> R (seeds start in I)
    assert np.all(np.diff(traj.astype(int), axis=0) >= 0)
    seeds = traj[0] == I
    assert seeds.sum() == n_i
    entered_e = (traj[-1] != S) & ~seeds
    assert curve.state.sum() == entered_e.sum()


def test_same_seed_same_curve_and_different_seed_differs():
    net = generate_network({"county_sizes": [200]}, 0)
    p = DiseaseParams(2e-4, 5)
    a = run_simulation(net, p, 10, 42)
    assert a == run_simulation(net, p, 10, 42)
    assert a != run_simulation(net, p, 10, 43)


def test_attack_rate_nondecreasing_in_tau():
    net = generate_network({"county_sizes": [300], "mean_household_size": 4, "mean_external_degree": 10}, 0)
    seeds = range(50)
    ars = []
    for tau in (5e-5, 1e-4):
        ars.append(np.mean([run_simulation(net, DiseaseParams(tau, 3), 20, s).state.sum() for s in seeds]))
    assert ars[0] <= ars[1]


def test_zero_multiplier_week_has_no_incidence():
    net = generate_network({"county_sizes": [200], "mean_external_degree": 10}, 0)
    p = DiseaseParams(3e-4, 10, scenario=Scenario({3: 0.0, 4: 0.0}, "lockdown"))
    curve = run_simulation(net, p, 6, 5)
    assert curve.state[2] == 0 and curve.state[3] == 0
    assert curve.state[:2].sum() > 0


def test_epicurve_round_trip_and_missing_values(tmp_path):
    c = Epicurve.from_counties([[1, 2], [3, 4]])
    assert c.state.tolist() == [3, 7]
    save_epicurve(c, tmp_path / "c.csv")
    assert load_epicurve(tmp_path / "c.csv") == c
    (tmp_path / "na.csv").write_text("week,state,county_1\n1,NA,NA\n2,5,5\n")
    back = load_epicurve(tmp_path / "na.csv")
    assert math.isnan(back.values[0, 0]) and back.values[1, 1] == 5
    with pytest.raises(DataError):
        load_epicurve(tmp_path / "missing.csv")


def test_defaults_match_published_durations():
    assert INCUBATION_DEFAULT.to_dict() == {"1": 0.3, "2": 0.5, "3": 0.2}
    assert INFECTIOUS_DEFAULT.to_dict() == {"3": 0.3, "4": 0.4, "5": 0.2, "6": 0.1}


def test_params_round_trip():
    p = DiseaseParams(1e-4, 3, vaccine=VaccineSchedule({2: 0.1}, label="v"), scenario=Scenario({5: 0.5}, "s"))
    assert DiseaseParams.from_dict(p.to_dict()) == p
    with pytest.raises(ParameterError):
        DiseaseParams(0.0, 1)
    with pytest.raises(ParameterError):
        DiseaseParams(1e-4, -1)
