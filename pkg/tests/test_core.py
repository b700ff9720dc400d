import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hmmsv import (
    InvalidParameterError,
    ModelConfig,
    ObservationSeries,
    ParameterSet,
    brute_force_joint,
    emission_density,
    param_count,
    reorder_states,
    simulate,
    validate,
)

from conftest import random_parameters


def make_params(early, pi, sigma):
    return ParameterSet(early=tuple(np.asarray(e) for e in early), pi=np.asarray(pi), sigma=np.asarray(sigma))


# ---------------------------------------------------------------------------
# configuration


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ModelConfig(k=0, h=1)
    with pytest.raises(ValueError):
        ModelConfig(k=2, h=-1)
    with pytest.raises(ValueError):
        ModelConfig(k=2, h=1, emission="poisson")


# ---------------------------------------------------------------------------
# parameter counting


@pytest.mark.parametrize(
    "h,k,expected",
    [
        (1, 3, 11),
        (2, 4, 67),
        (0, 1, 1),
    ],
)
def test_param_count_spot_values(h, k, expected):
    assert param_count(ModelConfig(k=k, h=h)) == expected


@pytest.mark.parametrize("h", [0, 1, 2])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_param_count_matches_free_coordinates(h, k, rng):
    params = random_parameters(k, h, rng)
    rows = sum(t.shape[0] for t in params.early) + params.pi.shape[0]
    free = k + rows * (k - 1)
    assert param_count(ModelConfig(k=k, h=h)) == free


# ---------------------------------------------------------------------------
# emission density


def test_emission_standard_normal_mode():
    params = make_params([], [[1.0]], [1.0])
    assert emission_density(0.0, 1, params) == pytest.approx(0.3989422804014327, abs=1e-12)


def test_emission_one_sigma_ratio():
    for s in (0.3, 1.0, 4.2):
        params = make_params([], [[1.0]], [s])
        at_zero = emission_density(0.0, 1, params)
        assert emission_density(s, 1, params) == pytest.approx(at_zero * math.exp(-0.5), rel=1e-12)


def test_emission_frozen_value():
    # independent scalar evaluation of (2 pi s^2)^(-1/2) exp(-y^2 / (2 s^2))
    params = make_params([], [[1.0]], [1.609])
    assert emission_density(2.0, 1, params) == pytest.approx(0.1145108221189711, abs=1e-14)


def test_emission_rejects_bad_input():
    params = make_params([], [[0.5, 0.5]], [1.0, 2.0])
    with pytest.raises(ValueError):
        emission_density(float("nan"), 1, params)
    with pytest.raises(ValueError):
        emission_density(float("inf"), 2, params)
    with pytest.raises(ValueError):
        emission_density(0.0, 0, params)
    with pytest.raises(ValueError):
        emission_density(0.0, 3, params)


@pytest.mark.parametrize("s", [0.2, 0.865, 1.609, 3.770])
def test_emission_integrates_to_one(s):
    params = make_params([], [[1.0]], [s])
    total, _ = quad(lambda y: emission_density(y, 1, params), -10 * s, 10 * s)
    assert total == pytest.approx(1.0, abs=1e-6)


# |y / s| stays below ~38 so the double-precision density cannot underflow
@given(y=st.floats(-30, 30), s=st.floats(0.8, 20))
@settings(deadline=None, max_examples=60)
def test_emission_positive_and_symmetric(y, s):
    params = make_params([], [[1.0]], [s])
    d = emission_density(y, 1, params)
    assert d > 0
    assert d == pytest.approx(emission_density(-y, 1, params), rel=1e-12)


# ---------------------------------------------------------------------------
# validate


def test_validate_accepts_valid_set(rng):
    params = random_parameters(3, 2, rng)
    assert validate(params, ModelConfig(k=3, h=2)) == []


def test_validate_reports_bad_row_sum():
    params = make_params([[[0.5, 0.5]]], [[0.5, 0.4], [0.3, 0.7]], [1.0, 2.0])
    problems = validate(params, ModelConfig(k=2, h=1))
    assert len(problems) == 1
    assert "row (1)" in problems[0] and "0.9" in problems[0]


def test_validate_reports_nonpositive_sigma():
    params = make_params([[[0.5, 0.5]]], [[0.5, 0.5], [0.5, 0.5]], [1.0, 0.0])
    problems = validate(params, ModelConfig(k=2, h=1))
    assert any("state 2" in p for p in problems)


def test_validate_reports_negative_entry_and_shape():
    params = make_params([[[1.5, -0.5]]], [[0.5, 0.5], [0.5, 0.5]], [1.0, 2.0])
    problems = validate(params, ModelConfig(k=2, h=1))
    assert any("negative" in p for p in problems)
    wrong_shape = make_params([], [[0.5, 0.5]], [1.0, 2.0])
    problems = validate(wrong_shape, ModelConfig(k=2, h=1))
    assert problems


# ---------------------------------------------------------------------------
# simulation


def test_simulate_single_state_chain():
    config = ModelConfig(k=1, h=1)
    params = make_params([[[1.0]]], [[1.0]], [2.0])
    states, series = simulate(config, params, 50, seed=1)
    assert np.all(states == 1)
    assert len(series) == 50
    # weak sanity on the scale: sample std of N(0, 2) over 50 draws
    assert 1.0 < np.std(series.y) < 3.5


def test_simulate_absorbing_chain_is_constant():
    config = ModelConfig(k=2, h=1)
    params = make_params([[[0.5, 0.5]]], np.eye(2), [1.0, 3.0])
    for seed in range(6):
        states, _ = simulate(config, params, 40, seed=seed)
        assert np.all(states == states[0])


def test_simulate_rejects_bad_length_and_params():
    config = ModelConfig(k=2, h=1)
    params = make_params([[[0.5, 0.5]]], [[0.9, 0.1], [0.2, 0.8]], [1.0, 2.0])
    with pytest.raises(ValueError):
        simulate(config, params, 0, seed=1)
    broken = make_params([[[0.5, 0.5]]], [[0.9, 0.2], [0.2, 0.8]], [1.0, 2.0])
    with pytest.raises(InvalidParameterError):
        simulate(config, broken, 5, seed=1)


def test_simulate_deterministic_per_seed():
    config = ModelConfig(k=3, h=2)
    params = random_parameters(3, 2, np.random.default_rng(5))
    s1, y1 = simulate(config, params, 200, seed=99)
    s2, y2 = simulate(config, params, 200, seed=99)
    s3, _ = simulate(config, params, 200, seed=100)
    assert np.array_equal(s1, s2) and np.array_equal(y1.y, y2.y)
    assert not np.array_equal(s1, s3)


def test_simulate_empirical_frequencies_recover_pi():
    config = ModelConfig(k=2, h=1)
    pi = np.array([[0.85, 0.15], [0.25, 0.75]])
    params = make_params([[[0.5, 0.5]]], pi, [1.0, 3.0])
    T = 100_000
    states, _ = simulate(config, params, T, seed=7)
    counts = np.zeros((2, 2))
    for a, b in zip(states[:-1] - 1, states[1:] - 1):
        counts[a, b] += 1
    totals = counts.sum(axis=1, keepdims=True)
    freq = counts / totals
    assert np.abs(freq - pi).max() < 0.01
    # each cell within three binomial standard errors
    se = np.sqrt(pi * (1 - pi) / totals)
    assert np.all(np.abs(freq - pi) <= 3 * se)


# ---------------------------------------------------------------------------
# containers and relabeling


def test_observation_series_validation():
    with pytest.raises(ValueError):
        ObservationSeries(np.array([]))
    with pytest.raises(ValueError):
        ObservationSeries(np.array([1.0, np.inf]))
    series = ObservationSeries([0.1, -0.2], label="x")
    assert series.T == 2 and len(series) == 2


def test_parameters_are_frozen(rng):
    params = random_parameters(2, 1, rng)
    with pytest.raises(ValueError):
        params.pi[0, 0] = 0.5
    with pytest.raises(ValueError):
        params.sigma[0] = 9.0


def test_reorder_states_preserves_likelihood(rng):
    config = ModelConfig(k=3, h=1)
    params = random_parameters(3, 1, rng)
    y = rng.normal(0, 2, size=5)
    swapped = reorder_states(params, [3, 1, 2])
    assert np.allclose(swapped.sigma, params.sigma[[2, 0, 1]])
    ll_a = brute_force_joint(params, config, y).loglik
    ll_b = brute_force_joint(swapped, config, y).loglik
    assert ll_a == pytest.approx(ll_b, abs=1e-12)
    with pytest.raises(ValueError):
        reorder_states(params, [1, 1, 2])
