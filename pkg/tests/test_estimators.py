import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.utils.estimator_checks import check_estimator

from piml_uq.data import generate_gramacy_lee
from piml_uq.estimators import PimlRegressor
from piml_uq.physics import gl_partial


@pytest.fixture(scope="module")
def gl():
    d = generate_gramacy_lee(300, seed=0)
    return d.inputs, d.targets[:, 0]


def test_sklearn_estimator_checks():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        check_estimator(PimlRegressor(physics=None, epochs=30))


def test_params_round_trip():
    r = PimlRegressor(hidden_units=7, lambda_elbo=0.2)
    assert clone(r).get_params()["hidden_units"] == 7
    r.set_params(bayesian=True)
    assert r.get_params()["bayesian"] is True


def test_unfitted_and_bad_inputs(gl):
    X, y = gl
    with pytest.raises(NotFittedError):
        PimlRegressor().predict(X)
    with pytest.raises(ValueError):
        PimlRegressor(physics="rocket").fit(X, y)
    r = PimlRegressor(epochs=5).fit(X, y)
    with pytest.raises(ValueError):
        r.predict(np.ones((3, 2)))
    with pytest.raises(ValueError):
        r.predict(X, return_std=True)


def test_untrained_physics_regressor_transform_is_identity(gl):
    X, y = gl
    r = PimlRegressor(epochs=1, learning_rate=1e-12).fit(X, y)
    np.testing.assert_allclose(r.transform(X), X, atol=1e-9)
    np.testing.assert_allclose(r.predict(X), gl_partial(X[:, 0]), atol=1e-8)


def test_bayesian_regressor(gl):
    X, y = gl
    r = PimlRegressor(epochs=1000, bayesian=True, stage2_epochs=200, random_state=7).fit(X, y)
    assert r.score(X, y) > 0.9
    assert r.transform(X).shape == (300, 1)
    mean, std = r.predict(X[:20], return_std=True)
    assert mean.shape == std.shape == (20,) and np.all(std > 0)
    rep = r.predict_uncertainty(X[:5], scheme="hybrid", n_samples=50, seed=1)
    assert rep.y_spread.shape == (5, 1)
    np.testing.assert_array_equal(r.predict(X[:5]), r.predict(X[:5]))
    assert len(r.stage1_history_) == 1000 and len(r.history_) == 200


def test_multi_output_and_cross_validation():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 3))
    Y = np.column_stack([X @ [1.0, -2.0, 0.5], np.sin(X[:, 0])])
    r = PimlRegressor(physics=None, hidden_layers=2, hidden_units=16, epochs=300)
    assert r.fit(X, Y).predict(X).shape == (120, 2)
    scores = cross_val_score(r, X, Y[:, 0], cv=3)
    assert np.all(scores > 0.8)
