import csv

import numpy as np
import pytest

from piml_uq.data import generate_gramacy_lee, split
from piml_uq.physics import GramacyLeePartial
from piml_uq.piml import make_ann, make_piml
from piml_uq.train import (ConvergenceHistory, TrainConfig, TrainingError, dataset_loss,
                           evaluate_rmse, promote_to_bayesian, train_stage1, train_stage2)


@pytest.fixture(scope="module")
def gl_data():
    return split(generate_gramacy_lee(300, seed=1), 200, 100, seed=2)


@pytest.fixture(scope="module")
def stage1(gl_data):
    train, test = gl_data
    m = make_piml(GramacyLeePartial(), train.input_stats, train.output_stats, 3, 10, seed=3)
    return train_stage1(m, train, TrainConfig(epochs=300, learning_rate=1e-2), test)


def bayes_cfg(**kw):
    base = dict(stage="bayesian", epochs=100, learning_rate=1e-3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(learning_rate=0.0), dict(lambda_elbo=-1),
                                dict(batch_size=0), dict(observation_noise=0.0),
                                dict(n_weight_samples=0), dict(stage="frozen")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_stage1_reduces_loss_and_records_history(gl_data, stage1, tmp_path):
    train, test = gl_data
    model, hist = stage1
    assert len(hist) == 300 and hist.epoch == list(range(1, 301))
    assert hist.train_loss[-1] < 0.01 * hist.train_loss[0]
    assert dataset_loss(model, test) == hist.test_loss[-1]
    hist.to_csv(tmp_path / "h.csv")
    with open(tmp_path / "h.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(ConvergenceHistory.COLUMNS)
    assert len(rows) == 301
    assert np.all(np.diff(hist.wall_ms) >= 0)


def test_stage1_is_deterministic_and_does_not_mutate(gl_data):
    train, test = gl_data
    m = make_ann(train.input_stats, train.output_stats, 2, 6, seed=0)
    before = [p.copy() for p in m.network.parameters()]
    cfg = TrainConfig(epochs=20, learning_rate=1e-2, batch_size=32, seed=9)
    a, ha = train_stage1(m, train, cfg, test)
    b, hb = train_stage1(m, train, cfg, test)
    for p, q, r in zip(a.network.parameters(), b.network.parameters(), before):
        np.testing.assert_array_equal(p, q)
    for p, r in zip(m.network.parameters(), before):
        np.testing.assert_array_equal(p, r)
    assert ha.train_loss == hb.train_loss
    c, _ = train_stage1(m, train, TrainConfig(epochs=20, learning_rate=1e-2, batch_size=32, seed=10))
    assert not np.array_equal(c.network.layers[0].weights, a.network.layers[0].weights)


def test_stage_guards(gl_data, stage1):
    train, _ = gl_data
    model, _ = stage1
    with pytest.raises(ValueError):
        train_stage1(model, train, bayes_cfg())
    with pytest.raises(ValueError):
        train_stage2(model, train, bayes_cfg())
    bnn = promote_to_bayesian(model)
    with pytest.raises(ValueError):
        promote_to_bayesian(bnn)
    with pytest.raises(ValueError):
        train_stage1(bnn, train, TrainConfig(epochs=1))


def test_promotion_contract(stage1):
    model, _ = stage1
    bnn = promote_to_bayesian(model)
    last = model.network.layers[-1]
    np.testing.assert_array_equal(bnn.variational.prior_mu_weights, last.weights)
    np.testing.assert_array_equal(bnn.variational.mu_biases, last.biases)
    assert model.variational is None


def test_stage2_with_zero_lambda_and_sigma_tracks_stage1(gl_data, stage1):
    # oracle: with no ELBO term and collapsed posterior, stage 2 is plain MSE training
    train, _ = gl_data
    model, _ = stage1
    bnn = promote_to_bayesian(model)
    bnn.variational.force_zero_sigma()
    b, _ = train_stage2(bnn, train, bayes_cfg(epochs=15, lambda_elbo=0.0))
    d, _ = train_stage1(model, train, TrainConfig(epochs=15, learning_rate=1e-3))
    np.testing.assert_allclose(b.variational.mu_weights, d.network.layers[-1].weights,
                               rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.network.layers[0].weights, d.network.layers[0].weights,
                               rtol=1e-9, atol=1e-12)


def test_posterior_spread_grows_with_lambda(gl_data, stage1):
    train, _ = gl_data
    model, _ = stage1
    sigmas = []
    for lam in (0.0, 0.01, 0.1, 1.0):
        b, hist = train_stage2(promote_to_bayesian(model), train,
                               bayes_cfg(epochs=200, lambda_elbo=lam))
        sigmas.append(b.variational.sigma_weights.mean())
        assert (hist.elbo_term[-1] == 0.0) == (lam == 0.0)
    assert np.all(np.diff(sigmas) > 0), sigmas


def test_freeze_hidden_and_multi_sample(gl_data, stage1):
    train, _ = gl_data
    model, _ = stage1
    b, _ = train_stage2(promote_to_bayesian(model), train,
                        bayes_cfg(epochs=5, freeze_hidden=True, n_weight_samples=3, batch_size=64))
    for p, q in zip(b.network.parameters()[:-2], model.network.parameters()[:-2]):
        np.testing.assert_array_equal(p, q)
    assert not np.array_equal(b.variational.mu_weights, model.network.layers[-1].weights)


def test_domain_exit_raises_training_error(gl_data):
    train, _ = gl_data
    m = make_piml(GramacyLeePartial(), train.input_stats, train.output_stats, 1, 4, seed=0)
    m.network.layers[-1].biases[...] = 10.0
    with pytest.raises(TrainingError) as info:
        train_stage1(m, train, TrainConfig(epochs=3))
    assert info.value.diagnostics["epoch"] == 1


def test_evaluate_rmse(gl_data, stage1):
    _, test = gl_data
    model, _ = stage1
    per, total = evaluate_rmse(model, test)
    manual = np.sqrt(np.mean((model.predict(test.inputs) - test.targets) ** 2))
    assert total == pytest.approx(manual) and per[0] == pytest.approx(manual)
    bnn = promote_to_bayesian(model)
    a = evaluate_rmse(bnn, test, n_mc=10, seed=4)[1]
    assert a == evaluate_rmse(bnn, test, n_mc=10, seed=4)[1]
