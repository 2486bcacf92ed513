import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from pricing_ope.core import EXTENDED_ACTIONS, HISTORICAL_ACTIONS, fixed_probability_policy
from pricing_ope.simenv import (
    N_FULL,
    N_OBSERVED,
    POPULATION_ENCODER,
    EnvironmentConfig,
    EnvironmentParams,
    FeatureEncoder,
    RawCovariates,
    _conversion,
    baseline_conversion,
    charged_premium,
    conversion_probability,
    elasticity,
    encode_full,
    expected_rewards,
    fair_premium,
    higher_order_terms,
    load_environment,
    read_dataset_csv,
    sample_covariates,
    save_environment,
    simulate,
    simulate_config,
    write_dataset_csv,
)


def zero_params(**kw):
    return EnvironmentParams(np.zeros(N_FULL), np.zeros(N_FULL), np.zeros(4), **kw)


@pytest.mark.parametrize("ticket,expected", [(1000.0, 100.0), (100.0, 10.0), (2000.0, 200.0)])
def test_fair_premium(ticket, expected):
    assert fair_premium(RawCovariates.single(ticket_price=ticket), zero_params())[0] == pytest.approx(expected)


@pytest.mark.parametrize("a,expected", [(0.0, 105.0), (0.2, 106.0), (-1.0, 100.0)])
def test_charged_premium(a, expected):
    raw = RawCovariates.single(ticket_price=1000.0)
    assert charged_premium(raw, a, zero_params())[0] == pytest.approx(expected, abs=1e-12)


def test_elasticity_zero_weights_and_cap():
    raw = sample_covariates(zero_params(seed=3), 50)
    np.testing.assert_array_equal(elasticity(raw, zero_params()), -1.0)
    # log-elasticity of 10 activates the cap
    big = zero_params(intercept2=10.0)
    assert np.all(elasticity(raw, big) == -4.0)


def test_hx_ablation_is_bit_exact(env):
    raw = sample_covariates(env.params, 500)
    no_hx = env.params.without_hx()
    zero_a3 = EnvironmentParams(env.params.alpha1, env.params.alpha2, np.zeros(4),
                                env.params.intercept1, env.params.intercept2)
    np.testing.assert_array_equal(elasticity(raw, no_hx), elasticity(raw, zero_a3))
    assert not np.array_equal(elasticity(raw, no_hx), elasticity(raw, env.params))
    np.testing.assert_array_equal(baseline_conversion(raw, no_hx), baseline_conversion(raw, env.params))


def test_conversion_formula_examples():
    assert _conversion(np.array([0.5]), np.array([-2.0]), 0.2)[0] == pytest.approx(0.30)
    assert _conversion(np.array([0.9]), np.array([-4.0]), -0.3)[0] == 1.0
    assert _conversion(np.array([0.9]), np.array([-4.0]), 0.3)[0] == 0.0  # lower clamp


def test_conversion_at_zero_action_is_baseline(env):
    raw = sample_covariates(env.params, 300)
    X = encode_full(raw)
    base = expit(env.params.intercept1 + X @ np.asarray(env.params.alpha1))
    np.testing.assert_array_equal(conversion_probability(raw, 0.0, env.params), base)


def test_elasticity_range_and_higher_order_terms(env):
    raw = sample_covariates(env.params, 20_000)
    E = elasticity(raw, env.params)
    assert np.all(E < 0) and np.all(E >= -4.0)
    assert np.mean(E == -4.0) < 0.10
    X = encode_full(raw)
    H = higher_order_terms(X)
    np.testing.assert_allclose(H[:, 0], X[:, 0] ** 3)
    np.testing.assert_allclose(H[:, 3], X[:, 2] * X[:, 10])


def test_default_calibration_targets(env):
    raw = sample_covariates(env.params, 100_000)
    base = baseline_conversion(raw, env.params)
    assert 0.2 <= base.mean() <= 0.6
    # upper truncation never binds on the historical grid
    assert base.max() * (1 + 4 * 0.2) <= 1.0


def test_sample_covariates_rejects_empty():
    with pytest.raises(ValueError):
        sample_covariates(zero_params(), 0)


def test_covariate_support_enforced():
    with pytest.raises(ValueError):
        RawCovariates.single(ticket_price=50.0)
    with pytest.raises(ValueError):
        RawCovariates.single(origin=8)


def test_covariate_marginals():
    raw = sample_covariates(zero_params(seed=5), 100_000)
    assert abs(raw.ticket_price.mean() - 1050.0) < 20.0
    counts = np.bincount(raw.lead_time, minlength=366)[1:]
    p = 1 / 365
    se = np.sqrt(100_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100_000 * p) <= 5 * se)
    for field, k in (("passengers", 5), ("origin", 7), ("destination", 7), ("trip_duration", 30)):
        assert set(np.unique(getattr(raw, field))) == set(range(1, k + 1))
    assert abs(raw.return_trip.mean() - 0.5) < 0.01


def test_encoding_layout():
    raw = RawCovariates.single(ticket_price=1050.0, lead_time=183, passengers=3, origin=3, destination=7,
                               return_trip=1, trip_duration=15)
    obs = POPULATION_ENCODER.transform(raw)
    full = encode_full(raw)
    assert obs.shape == (1, N_OBSERVED) and full.shape == (1, N_FULL)
    np.testing.assert_allclose(obs[0, :4], [0.0, 0.0, 0.0, -0.5 / POPULATION_ENCODER.sd[3]])
    assert obs[0, 4:10].tolist() == [0, 1, 0, 0, 0, 0]  # origin 3, first category dropped
    assert obs[0, 10] == 1.0
    assert full[0, 11:].tolist() == [0, 0, 0, 0, 0, 1]
    np.testing.assert_array_equal(full[:, :N_OBSERVED], obs)


def test_encoder_round_trip():
    raw = sample_covariates(zero_params(seed=2), 1000)
    enc = FeatureEncoder.fit(raw)
    Z = enc.transform(raw)
    np.testing.assert_allclose(Z[:, :4].mean(axis=0), 0.0, atol=1e-12)
    assert FeatureEncoder.from_dict(enc.to_dict()) == enc


def test_simulation_is_deterministic_and_prefix_stable(env):
    a = simulate_config(env, 3000, seed=9)
    b = simulate_config(env, 3000, seed=9)
    c = simulate_config(env, 1500, seed=9)
    np.testing.assert_array_equal(a.sample.rewards, b.sample.rewards)
    np.testing.assert_array_equal(a.sample.actions[:1500], c.sample.actions)
    np.testing.assert_array_equal(a.sample.features[:1500], c.sample.features)
    d = simulate_config(env, 3000, seed=10)
    assert not np.array_equal(a.sample.actions, d.sample.actions)


def test_simulated_record_invariants(small_sim):
    s = small_sim.sample
    a = small_sim.historical.values[s.actions]
    margin = fair_premium(small_sim.raw, small_sim.params) * (1 + a) * small_sim.params.lambda_loading
    np.testing.assert_array_equal(s.rewards, np.where(s.conversions == 1, margin, 0.0))
    assert s.features.shape[1] == N_OBSERVED  # destination excluded
    T = small_sim.true_rewards
    cap = fair_premium(small_sim.raw, small_sim.params)[:, None] * (1 + small_sim.evaluation.values.max()) * 0.05
    assert np.all(T >= 0) and np.all(T <= cap + 1e-12)
    p = conversion_probability(small_sim.raw, small_sim.evaluation.values[None, :], small_sim.params)
    fair = fair_premium(small_sim.raw, small_sim.params)[:, None]
    np.testing.assert_array_equal(T, p * fair * (1 + small_sim.evaluation.values[None, :]) * 0.05)
    rec = small_sim.record(7)
    assert rec.reward == s.rewards[7] and rec.action_index == s.actions[7]
    assert len(small_sim.records()) == small_sim.n


def test_reward_moments_are_bernoulli(small_sim):
    mu, s2 = small_sim.historical_moments()
    margin = fair_premium(small_sim.raw, small_sim.params)[:, None] * (1 + HISTORICAL_ACTIONS.values) * 0.05
    p = mu / margin
    np.testing.assert_allclose(s2, margin**2 * p * (1 - p))
    np.testing.assert_allclose(mu, expected_rewards(small_sim.raw, HISTORICAL_ACTIONS.values, small_sim.params))


def test_true_rewards_are_quadratic_on_the_historical_grid(small_sim):
    # no truncation on the historical grid, so the reward is exactly quadratic in the action
    a = HISTORICAL_ACTIONS.values
    T = small_sim.true_rewards_on(HISTORICAL_ACTIONS)
    D = np.column_stack([np.ones(5), a, a**2])
    coef, *_ = np.linalg.lstsq(D, T.T, rcond=None)
    np.testing.assert_allclose(D @ coef, T.T, atol=1e-10)


def test_monte_carlo_conversion_and_action_frequencies(env):
    sim = simulate_config(env, 200_000, seed=21)
    s = sim.sample
    counts = np.bincount(s.actions, minlength=5)
    se = np.sqrt(200_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 40_000) <= 5 * se)
    mu, _ = sim.historical_moments()
    p_true = conversion_probability(sim.raw, sim.historical.values[s.actions], sim.params)
    for j in range(5):
        m = s.actions == j
        # conversions and rewards agree with the oracle in expectation
        assert abs(s.conversions[m].mean() - p_true[m].mean()) <= 3 * np.sqrt(np.sum(p_true[m] * (1 - p_true[m]))) / m.sum()
        r_se = s.rewards[m].std(ddof=1) / np.sqrt(m.sum())
        assert abs(s.rewards[m].mean() - mu[m, j].mean()) <= 3 * r_se


def test_zero_propensity_logging_rejected(env):
    with pytest.raises(ValueError, match="positive probability"):
        simulate(env.params, 100, fixed_probability_policy([0.5, 0.5, 0.0, 0.0, 0.0]), HISTORICAL_ACTIONS,
                 HISTORICAL_ACTIONS)


def test_environment_yaml_round_trip(tmp_path, env):
    path = tmp_path / "env.yaml"
    save_environment(env, str(path))
    again = load_environment(str(path))
    assert again == env
    assert again.evaluation.same_as(EXTENDED_ACTIONS)
    bad = env.to_dict()
    bad["version"] = 99
    with pytest.raises(ValueError, match="version"):
        EnvironmentConfig.from_dict(bad)


def test_dataset_csv_round_trip_and_determinism(tmp_path, env):
    sim = simulate_config(env, 300, seed=4)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_dataset_csv(sim, str(p1))
    write_dataset_csv(simulate_config(env, 300, seed=4), str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    data = read_dataset_csv(str(p1))
    s = data.learning_sample()
    np.testing.assert_array_equal(s.features, sim.sample.features)
    np.testing.assert_array_equal(s.rewards, sim.sample.rewards)
    np.testing.assert_array_equal(data.true_rewards, sim.true_rewards)
    assert data.evaluation.same_as(sim.evaluation)


@given(st.integers(0, 2**63 - 1), st.integers(1, 3000))
def test_any_seed_gives_valid_records(seed, n):
    raw = sample_covariates(zero_params(seed=seed), n)
    assert len(raw) == n
    assert raw.ticket_price.min() >= 100.0 and raw.ticket_price.max() <= 2000.0
