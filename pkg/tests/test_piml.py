import numpy as np
import pytest

from piml_uq.data import NormStats
from piml_uq.nn import DenseNetwork
from piml_uq.physics import AffinePhysics, FixedWingForces, GramacyLeePartial, gl_partial
from piml_uq.piml import PimlModel, make_ann, make_piml
from piml_uq.train import promote_to_bayesian

from _oracles import (aero_batch, architectures, gl_stats, gradient_probe_errors,
                      stage1_objective, stage2_objective)


def test_untrained_residual_model_is_the_raw_physics():
    s_in, s_out = gl_stats()
    m = make_piml(GramacyLeePartial(), s_in, s_out, 5, 10, seed=0)
    x = np.linspace(0.5, 2.5, 33)[:, None]
    y, t = m.forward(x)
    np.testing.assert_array_equal(t, x)
    np.testing.assert_array_equal(y, gl_partial(x))


def test_ann_head_denormalises():
    s_in, s_out = gl_stats()
    m = make_ann(s_in, s_out, 2, 4, seed=1)
    x = np.array([[0.7], [2.2]])
    raw = m.network.forward(s_in.normalize(x))
    np.testing.assert_allclose(m.predict(x), raw * s_out.std + s_out.mean, rtol=1e-15)
    assert m.transfer == "direct"


def test_dimension_checks():
    s_in, s_out = gl_stats()
    with pytest.raises(ValueError):
        PimlModel(DenseNetwork.build([1, 4, 2], 0), GramacyLeePartial(), s_in, s_out)
    with pytest.raises(ValueError):
        PimlModel(DenseNetwork.build([1, 4, 1], 0), GramacyLeePartial(), s_in, s_out, "warp")
    with pytest.raises(ValueError):
        PimlModel(DenseNetwork.build([2, 4, 1], 0), GramacyLeePartial(),
                  NormStats.identity(2), s_out, "residual")


@pytest.mark.parametrize("case", range(4))
def test_gradients_small_networks(case):
    name, model, X, T = architectures()[case]
    for objective in (stage1_objective, stage2_objective):
        errs = gradient_probe_errors(*objective(model, X, T), n_probes=30, seed=case)
        assert errs.max() < 1e-5, name


def test_single_input_and_batch_agree():
    a_in = NormStats.fit(aero_batch(np.random.default_rng(0), 50))
    F = FixedWingForces().evaluate(aero_batch(np.random.default_rng(1), 50))
    m = make_piml(FixedWingForces(), a_in, NormStats.fit(F), 2, 8, seed=0)
    m.network.layers[-1].weights[...] = 0.01
    X = aero_batch(np.random.default_rng(2), 4)
    y, t = m.forward(X[1])
    assert y.shape == (3,) and t.shape == (6,)
    np.testing.assert_allclose(y, m.forward(X)[0][1], rtol=1e-12)


def bayes_gl(seed=0):
    s_in, s_out = gl_stats()
    m = make_piml(GramacyLeePartial(), s_in, s_out, 2, 8, seed=seed)
    rng = np.random.default_rng(seed)
    m.network.layers[-1].weights[...] = rng.normal(0, 0.1, (1, 8))
    return promote_to_bayesian(m)


def test_sampling_shapes_and_seed_sharing():
    m = bayes_gl()
    X = np.linspace(0.6, 2.4, 5)[:, None]
    Y, T, ok = m.predict_with_sampling(X, 7, seed=3)
    assert Y.shape == (7, 5, 1) and T.shape == (7, 5, 1) and ok.shape == (7, 5)
    Y2, _, _ = m.predict_with_sampling(X, 7, seed=3)
    np.testing.assert_array_equal(Y, Y2)
    # sample i draws the same weights whatever rows are evaluated with it
    Y1, _, _ = m.predict_with_sampling(X[2:3], 7, seed=3)
    np.testing.assert_allclose(Y1[:, 0], Y[:, 2], rtol=1e-12)
    # and the first draws do not depend on how many draws follow
    Y3, _, _ = m.predict_with_sampling(X, 3, seed=3)
    np.testing.assert_array_equal(Y3, Y[:3])


def test_out_of_domain_samples_are_flagged():
    m = bayes_gl(1)
    m.variational.rho_biases[...] = np.log(np.expm1(1.0))  # sigma = 1 on the bias
    X = np.array([[0.55], [1.5]])
    Y, T, ok = m.predict_with_sampling(X, 200, seed=0)
    assert not ok.all() and ok.any()
    assert np.all(np.isnan(Y[~ok])) and np.all(np.isfinite(Y[ok]))
    inside = (T[..., 0] >= 0.25) & (T[..., 0] <= 3.0)
    np.testing.assert_array_equal(ok, inside)


def test_sampling_requires_bayesian_layer():
    s_in, s_out = gl_stats()
    with pytest.raises(ValueError):
        make_piml(GramacyLeePartial(), s_in, s_out, 1, 3, 0).predict_with_sampling([[1.0]], 2, 0)


def test_affine_physics_model_with_direct_transfer():
    A = np.array([[2.0, 0.0], [1.0, -1.0]])
    m = PimlModel(DenseNetwork.build([3, 5, 2], 0), AffinePhysics(A, [1.0, 0.0]),
                  NormStats.identity(3), NormStats.identity(2), "direct")
    x = np.array([0.1, 0.2, 0.3])
    t = m.transfer_parameters(x)
    np.testing.assert_allclose(m.predict(x), A @ t + [1.0, 0.0], rtol=1e-14)
    assert m.n_params == m.network.n_params
    assert promote_to_bayesian(m).n_params == m.n_params + 2 * 5 + 2
