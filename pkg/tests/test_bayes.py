import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from piml_uq.bayes import (PRIOR_SIGMA_FLOOR, VariationalLayer, elbo_loss, gaussian_kl,
                           gaussian_log_likelihood, gaussian_log_likelihood_grad,
                           init_prior_from_deterministic, kl_gradients, kl_to_prior,
                           sample_weights, softplus, softplus_inverse)

from _oracles import central_difference, rel_err


def kl_quadrature(mq, sq, mp, sp):
    q, p = stats.norm(mq, sq), stats.norm(mp, sp)
    f = lambda w: q.pdf(w) * (q.logpdf(w) - p.logpdf(w))
    lo, hi = mq - 40 * sq, mq + 40 * sq
    return integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400, points=[mq])[0]


def layer(seed=0, out=2, inp=3):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(out, inp)), rng.normal(size=out)
    return VariationalLayer.from_dense(W, b)


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 60))
def test_softplus_inverse_round_trip(x):
    s = softplus(x)
    assert s > 0
    assert softplus_inverse(s) == pytest.approx(x, rel=1e-9, abs=1e-9)


def test_softplus_is_stable_for_large_arguments():
    assert softplus(800.0) == 800.0
    assert softplus(-800.0) >= 0.0
    assert softplus_inverse(100.0) == 100.0


def test_kl_matches_quadrature_on_fixed_cases():
    cases = [(0.0, 1.0, 0.0, 1.0), (0.3, 0.2, -0.1, 0.7), (2.0, 1.5, 0.0, 0.4)]
    for c in cases:
        assert gaussian_kl(*c) == pytest.approx(kl_quadrature(*c), abs=1e-8)
    assert gaussian_kl(0.0, 1.0, 0.0, 1.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(-3, 3), st.floats(0.01, 3))
def test_kl_is_non_negative(mq, sq, mp, sp):
    assert gaussian_kl(mq, sq, mp, sp) >= -1e-12


def test_kl_rejects_non_positive_sigma():
    with pytest.raises(ValueError):
        gaussian_kl(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_kl(0.0, 1.0, 0.0, -1.0)


def test_kl_gradients_match_finite_differences():
    v = layer(3)
    rng = np.random.default_rng(1)
    for p in v.parameters():
        p += rng.normal(0, 0.2, p.shape)
    grads = kl_gradients(v)
    for p, g in zip(v.parameters(), grads):
        def f(x, p=p):
            old = p.copy()
            p[...] = x.reshape(p.shape)
            try:
                return kl_to_prior(v)
            finally:
                p[...] = old
        fd = central_difference(f, p.ravel().copy(), 1e-6)
        assert np.max(rel_err(g.ravel(), fd, 1e-6)) < 1e-6


def test_log_likelihood_matches_scipy():
    rng = np.random.default_rng(2)
    pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    ref = stats.norm(pred, 0.3).logpdf(target).sum()
    assert gaussian_log_likelihood(pred, target, 0.3) == pytest.approx(ref, rel=1e-12)
    fd = central_difference(lambda p: gaussian_log_likelihood(p.reshape(4, 3), target, 0.3),
                            pred.ravel(), 1e-6)
    np.testing.assert_allclose(gaussian_log_likelihood_grad(pred, target, 0.3).ravel(), fd,
                               rtol=1e-6)


def test_elbo_loss():
    assert elbo_loss(-10.0, 4.0, n_batches=2) == 12.0
    with pytest.raises(ValueError):
        elbo_loss(-1.0, -0.1)


def test_prior_is_population_std_of_final_layer():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([5.0, 6.0])
    (pmw, pmb), (psw, psb) = init_prior_from_deterministic((W, b))
    np.testing.assert_array_equal(pmw, W)
    np.testing.assert_array_equal(pmb, b)
    expected = np.std([1, 2, 3, 4, 5, 6])  # ddof=0
    assert np.all(psw == expected) and np.all(psb == expected)


def test_prior_floor_and_degenerate_inputs():
    (_, _), (psw, psb) = init_prior_from_deterministic((np.zeros((2, 2)), np.zeros(2)))
    assert np.all(psw == PRIOR_SIGMA_FLOOR) and np.all(psb == PRIOR_SIGMA_FLOOR)
    with pytest.raises(ValueError):
        init_prior_from_deterministic(np.array([1.0]))


def test_per_weight_prior_uses_magnitudes():
    W = np.array([[0.5, -2.0]])
    b = np.array([0.0])
    (_, _), (psw, psb) = init_prior_from_deterministic((W, b), per_weight=True)
    np.testing.assert_array_equal(psw, [[0.5, 2.0]])
    np.testing.assert_array_equal(psb, [PRIOR_SIGMA_FLOOR])


def test_from_dense_initialisation():
    rng = np.random.default_rng(0)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    v = VariationalLayer.from_dense(W, b)
    np.testing.assert_array_equal(v.mu_weights, W)
    np.testing.assert_array_equal(v.prior_mu_weights, W)
    np.testing.assert_allclose(v.sigma_weights, 0.5 * v.prior_sigma_weights, rtol=1e-12)
    np.testing.assert_allclose(v.sigma_biases, 0.5 * v.prior_sigma_biases, rtol=1e-12)
    W[0, 0] = 99.0
    assert v.mu_weights[0, 0] != 99.0


def test_validation_rejects_bad_shapes():
    v = layer()
    with pytest.raises(ValueError):
        VariationalLayer(v.mu_weights, v.mu_biases, v.rho_weights[:, :1], v.rho_biases,
                         v.prior_mu_weights, v.prior_mu_biases, v.prior_sigma_weights,
                         v.prior_sigma_biases)
    with pytest.raises(ValueError):
        VariationalLayer(v.mu_weights, v.mu_biases, v.rho_weights, v.rho_biases,
                         v.prior_mu_weights, v.prior_mu_biases, 0 * v.prior_sigma_weights,
                         v.prior_sigma_biases)


def test_sampling_is_seeded_and_reparameterised():
    v = layer(4)
    a, b, c = sample_weights(v, (1, 0)), sample_weights(v, (1, 0)), sample_weights(v, (1, 1))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    np.testing.assert_allclose(a.weights, v.mu_weights + v.sigma_weights * a.noise_weights)


def test_sample_moments():
    v = layer(5)
    draws = np.stack([sample_weights(v, (9, i)).weights for i in range(20000)])
    se = v.sigma_weights / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - v.mu_weights) < 5 * se)
    np.testing.assert_allclose(draws.std(axis=0, ddof=1), v.sigma_weights, rtol=0.03)


def test_force_zero_sigma_returns_the_mean_exactly():
    v = layer(6)
    v.force_zero_sigma()
    s = sample_weights(v, 3)
    np.testing.assert_array_equal(s.weights, v.mu_weights)
    np.testing.assert_array_equal(s.biases, v.mu_biases)


def test_scale_sigma():
    v = layer(7)
    before = v.sigma_weights.copy()
    v.scale_sigma(0.1)
    np.testing.assert_allclose(v.sigma_weights, 0.1 * before, rtol=1e-10)
