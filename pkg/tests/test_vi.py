import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiovi.bayesopt import BoConfig
from cardiovi.errors import ParameterError
from cardiovi.vi import (
    GaussianPosterior,
    PriorSpec,
    default_noise_std,
    draw_samples,
    elbo_estimate,
    fit_mean_stage,
    fit_variance_stage,
    kl_diag_gaussians,
    log_likelihood,
    misfit_objective,
    sigma_box,
)

pos = st.floats(0.05, 5.0)
real = st.floats(-5.0, 5.0)


def linear_toy(seed, p=2, n=20, noise=0.2):
    """y = A theta + noise with orthogonal columns, so the posterior is diagonal."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    A = q * rng.uniform(1, 4, p)
    prior = PriorSpec.for_box(np.zeros(p), np.ones(p))
    theta = np.clip(prior.mean + prior.std * rng.normal(size=p), 0.1, 0.9)
    y = A @ theta + noise * rng.normal(size=n)
    prec = 1 / prior.std**2 + np.diag(A.T @ A) / noise**2
    post_s = 1 / np.sqrt(prec)
    post_m = post_s**2 * (prior.mean / prior.std**2 + A.T @ y / noise**2)
    C = A @ np.diag(prior.std**2) @ A.T + noise**2 * np.eye(n)
    r = y - A @ prior.mean
    log_z = -0.5 * (n * math.log(2 * math.pi) + np.linalg.slogdet(C)[1] + r @ np.linalg.solve(C, r))
    return A, y, prior, GaussianPosterior(post_m, post_s), log_z


def test_kl_spot_values():
    assert kl_diag_gaussians(GaussianPosterior([0.0], [1.0]), PriorSpec([1.0], [1.0])) == pytest.approx(0.5, abs=1e-12)
    expected = math.log(2) + 1 / 8 - 0.5
    assert kl_diag_gaussians(GaussianPosterior([0.0], [1.0]), PriorSpec([0.0], [2.0])) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.31815, abs=1e-5)


def test_kl_adds_over_dimensions():
    q = GaussianPosterior([0.0, 0.0], [1.0, 1.0])
    p = PriorSpec([1.0, 0.0], [1.0, 2.0])
    assert kl_diag_gaussians(q, p) == pytest.approx(0.5 + math.log(2) + 1 / 8 - 0.5, abs=1e-12)


@settings(max_examples=300)
@given(st.lists(st.tuples(real, pos, real, pos), min_size=1, max_size=5))
def test_kl_is_nonnegative(rows):
    mq, sq, mp, sp = map(np.array, zip(*rows))
    assert kl_diag_gaussians(GaussianPosterior(mq, sq), PriorSpec(mp, sp)) >= -1e-12


@settings(max_examples=100)
@given(st.lists(st.tuples(real, pos), min_size=1, max_size=5))
def test_kl_vanishes_for_identical_distributions(rows):
    m, s = map(np.array, zip(*rows))
    assert abs(kl_diag_gaussians(GaussianPosterior(m, s), PriorSpec(m, s))) < 1e-12


def test_kl_dimension_mismatch():
    with pytest.raises(ParameterError):
        kl_diag_gaussians(GaussianPosterior([0.0], [1.0]), PriorSpec([0.0, 0.0], [1.0, 1.0]))


def test_posterior_rejects_zero_sigma():
    with pytest.raises(ParameterError):
        GaussianPosterior([0.0], [0.0])


def test_log_likelihood_hand_value():
    obs, sim = np.array([1.0, 2.0]), np.array([1.5, 1.0])
    expected = -math.log(2 * math.pi * 0.25) - (0.25 + 1.0) / 0.5
    assert log_likelihood(obs, sim, 0.5) == pytest.approx(expected, rel=1e-14)


def test_log_likelihood_rejects_bad_input():
    with pytest.raises(ParameterError):
        log_likelihood([1.0], [1.0], 0.0)
    with pytest.raises(ParameterError):
        log_likelihood([1.0, 2.0], [1.0], 1.0)


def test_default_noise_is_five_percent_of_range():
    assert default_noise_std(np.array([-1.0, 3.0])) == pytest.approx(0.2)


def test_draws_stay_in_box_and_fall_back_to_clamping():
    q = GaussianPosterior([0.5, 0.5], [0.3, 0.3])
    d = draw_samples(q, 200, 0, np.zeros(2), np.ones(2))
    assert np.all((d >= 0) & (d <= 1))
    # a distribution centred far outside the box can only be clamped
    far = draw_samples(GaussianPosterior([5.0], [0.01]), 3, 0, [0.0], [1.0])
    assert np.all(far == 1.0)


def test_elbo_with_tiny_sigma_is_likelihood_minus_kl():
    A, y, prior, _, _ = linear_toy(0)
    mu = np.array([0.4, 0.6])
    q = GaussianPosterior(mu, [1e-9, 1e-9])
    got = elbo_estimate(q, prior, lambda t: A @ t, y, 8, 0, 0.2)
    expected = log_likelihood(y, A @ mu, 0.2) - kl_diag_gaussians(q, prior)
    assert got == pytest.approx(expected, rel=1e-6)


def test_elbo_is_seeded_and_thread_invariant():
    A, y, prior, q, _ = linear_toy(1)
    sim = lambda t: A @ t
    a = elbo_estimate(q, prior, sim, y, 32, 5, 0.2)
    assert a == elbo_estimate(q, prior, sim, y, 32, 5, 0.2)
    assert a == elbo_estimate(q, prior, sim, y, 32, 5, 0.2, workers=4)


def test_elbo_at_exact_posterior_matches_evidence():
    A, y, prior, q, log_z = linear_toy(2)
    sim = lambda t: A @ t
    for seed in range(5):
        draws = draw_samples(q, 64, seed, np.zeros(2), np.ones(2))
        ll = np.array([log_likelihood(y, sim(t), 0.2) for t in draws])
        se = ll.std(ddof=1) / math.sqrt(64)
        assert abs(elbo_estimate(q, prior, sim, y, 64, seed, 0.2) - log_z) <= 3 * se


def test_elbo_is_lower_at_wrong_posterior():
    A, y, prior, q, log_z = linear_toy(3)
    wrong = GaussianPosterior(q.mu + 0.1, q.sigma * 3)
    assert elbo_estimate(wrong, prior, lambda t: A @ t, y, 64, 0, 0.2) < log_z - 1


def test_variance_stage_recovers_posterior_spread():
    A, y, prior, q, _ = linear_toy(0)
    box = (np.zeros(2), np.ones(2))
    post, trace = fit_variance_stage(q.mu, y, prior, lambda t: A @ t, box, BoConfig.for_dim(2, budget=30), 64, 0.2)
    ratio = post.sigma / q.sigma
    assert np.all((ratio > 0.5) & (ratio < 2))
    assert np.array_equal(post.mu, q.mu)
    assert np.all(np.diff(trace.best_so_far) <= 0)


def test_sigma_box_range():
    box = sigma_box(np.zeros(3), np.full(3, 2.0))
    np.testing.assert_allclose(box.bounds[0], math.log(1e-3))
    np.testing.assert_allclose(box.bounds[1], 0.0)


def test_misfit_objective_maps_failures_to_inf():
    def sim(theta):
        raise ValueError("bad parameters")

    assert misfit_objective(np.zeros(3), sim)(np.zeros(2)) == math.inf


def test_mean_stage_improves_on_design(small_sim):
    space = small_sim.space
    obs = small_sim(space.from_unit(np.full(space.dim, 0.6)))
    raw, trace = fit_mean_stage(obs, small_sim, space, BoConfig(budget=14, n_init=8, seed=0))
    assert trace.best_value <= trace.values[:8].min()
    assert np.array_equal(raw, trace.best_raw)



def test_log_likelihood_reference_values():
    obs = np.arange(24.0)
    assert log_likelihood(obs, obs, 1.0) == pytest.approx(-12 * math.log(2 * math.pi), rel=1e-14)
    sim = obs.copy()
    sim[5] += 0.7
    assert log_likelihood(obs, obs, 1.0) - log_likelihood(obs, sim, 1.0) == pytest.approx(0.49 / 2, rel=1e-12)


def test_exact_posterior_beats_perturbations(rng):
    A, y, prior, q, _ = linear_toy(4)
    sim = lambda t: A @ t
    draws = draw_samples(q, 64, 0, np.zeros(2), np.ones(2))
    se = np.std([log_likelihood(y, sim(t), 0.2) for t in draws], ddof=1) / 8
    best = elbo_estimate(q, prior, sim, y, 64, 0, 0.2)
    for _ in range(10):
        other = GaussianPosterior(q.mu + rng.normal(0, 0.05, 2), q.sigma * np.exp(rng.normal(0, 0.5, 2)))
        assert best - elbo_estimate(other, prior, sim, y, 64, 0, 0.2) >= -3 * se


def test_elbo_concentrates_with_more_draws():
    # the expected ratio is exactly 1/2, so a 20-seed estimate lands near it
    A, y, prior, q, _ = linear_toy(0)
    sim = lambda t: A @ t
    spread = {n: np.std([elbo_estimate(q, prior, sim, y, n, s, 0.2) for s in range(20)]) for n in (16, 64)}
    assert spread[64] < 0.5 * spread[16]


def test_variance_stage_beats_prior_spread():
    A, y, prior, q, _ = linear_toy(6)
    sim = lambda t: A @ t
    box = (np.zeros(2), np.ones(2))
    post, _ = fit_variance_stage(q.mu, y, prior, sim, box, BoConfig.for_dim(2), 64, 0.2)
    at_prior = elbo_estimate(GaussianPosterior(q.mu, prior.std), prior, sim, y, 64, 0, 0.2)
    assert elbo_estimate(post, prior, sim, y, 64, 0, 0.2) >= at_prior
    assert np.all(post.sigma >= 1e-3 * (1 - 1e-12)) and np.all(post.sigma <= 0.5 * (1 + 1e-12))
