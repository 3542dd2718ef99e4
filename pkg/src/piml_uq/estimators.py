"""scikit-learn compatible estimators wrapping the two-stage PIML pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, NormStats
from .physics import AeroConstants, FixedWingForces, GramacyLeePartial, PhysicsModel
from .piml import make_ann, make_piml
from .seeding import derive_seed
from .train import TrainConfig, predictive_mean, promote_to_bayesian, train_stage1, train_stage2
from .uq import propagate


def resolve_physics(physics):
    if physics is None or isinstance(physics, PhysicsModel):
        return physics
    if physics == "gramacy_lee":
        return GramacyLeePartial()
    if physics == "fixed_wing":
        return FixedWingForces(AeroConstants())
    raise ValueError(f"unknown physics {physics!r}")


class PimlRegressor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Hybrid physics-informed regressor with an optional Bayesian last layer.

    ``fit`` runs stage 1 (deterministic MSE training) and, when
    ``bayesian=True``, promotes the final layer to a mean-field Gaussian
    layer and runs stage 2.  With ``physics=None`` the estimator is a plain
    ANN (or BNN).

    Parameters
    ----------
    physics : {'gramacy_lee', 'fixed_wing'}, PhysicsModel or None
        Partial-physics model fed by the transfer network.
    hidden_layers, hidden_units : int
        Transfer network depth and width.
    transfer : {'residual', 'direct'}
        How network outputs become transfer parameters (ignored for ANNs).
    bayesian : bool
        Run the second, variational stage.
    epochs, learning_rate, batch_size
        Stage-1 optimisation; ``batch_size=None`` is full batch.
    stage2_epochs, stage2_learning_rate, stage2_batch_size
        Stage-2 optimisation.
    lambda_elbo, observation_noise : float
        Weight of the negative ELBO and Gaussian likelihood std (normalised units).
    uq_scheme : {'end_to_end_mc', 'hybrid', 'hybrid_linear'}
        Scheme used by ``predict(..., return_std=True)``.
    n_mc : int
        Monte Carlo draws for predictions of Bayesian models.
    random_state : int
        Master seed.

    Attributes
    ----------
    model_ : PimlModel
        Final fitted model.
    stage1_model_ : PimlModel
        Deterministic model from stage 1.
    history_, stage1_history_ : ConvergenceHistory
    """

    def __init__(self, physics="gramacy_lee", hidden_layers=5, hidden_units=10,
                 transfer="residual", bayesian=False, epochs=1000, learning_rate=1e-2,
                 batch_size=None, stage2_epochs=1000, stage2_learning_rate=1e-3,
                 stage2_batch_size=None, lambda_elbo=0.01, observation_noise=0.05,
                 uq_scheme="end_to_end_mc", n_mc=20, random_state=0):
        self.physics = physics
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.transfer = transfer
        self.bayesian = bayesian
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.stage2_epochs = stage2_epochs
        self.stage2_learning_rate = stage2_learning_rate
        self.stage2_batch_size = stage2_batch_size
        self.lambda_elbo = lambda_elbo
        self.observation_noise = observation_noise
        self.uq_scheme = uq_scheme
        self.n_mc = n_mc
        self.random_state = random_state

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        return tags

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError(f"n_samples={X.shape[0]}: at least two samples are needed "
                             "to fit normalisation stats")
        Y = y.reshape(len(y), -1)
        self._y_1d = y.ndim == 1
        self.n_features_in_ = X.shape[1]
        seed = int(self.random_state)
        data = Dataset(X, Y, "ExternalCsv")
        in_stats, out_stats = NormStats.fit(X), NormStats.fit(Y)
        data = data.with_stats(in_stats, out_stats)

        physics = resolve_physics(self.physics)
        init_seed = derive_seed(seed, "init")
        if physics is None:
            model = make_ann(in_stats, out_stats, self.hidden_layers, self.hidden_units, init_seed)
        else:
            model = make_piml(physics, in_stats, out_stats, self.hidden_layers,
                              self.hidden_units, init_seed, self.transfer)

        cfg1 = TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           batch_size=self.batch_size, seed=derive_seed(seed, "stage1"))
        self.stage1_model_, self.stage1_history_ = train_stage1(model, data, cfg1)
        self.model_, self.history_ = self.stage1_model_, self.stage1_history_
        if self.bayesian:
            cfg2 = TrainConfig(epochs=self.stage2_epochs, learning_rate=self.stage2_learning_rate,
                               batch_size=self.stage2_batch_size, stage="bayesian",
                               lambda_elbo=self.lambda_elbo,
                               observation_noise=self.observation_noise,
                               seed=derive_seed(seed, "stage2"))
            self.model_, self.history_ = train_stage2(
                promote_to_bayesian(self.stage1_model_), data, cfg2)
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return X

    def _shape(self, Y):
        return Y[:, 0] if self._y_1d else Y

    def predict(self, X, return_std=False):
        """Predictive mean; with ``return_std`` also the spread from ``uq_scheme``."""
        X = self._check(X)
        seed = derive_seed(int(self.random_state), "predict")
        if return_std:
            if not self.model_.is_bayesian:
                raise ValueError("return_std needs bayesian=True")
            rep = propagate(self.model_, X, self.uq_scheme, self.n_mc, seed)
            return self._shape(rep.y_mean), self._shape(rep.y_spread)
        return self._shape(predictive_mean(self.model_, X, self.n_mc, seed))

    def predict_uncertainty(self, X, scheme=None, n_samples=None, seed=None):
        """Full :class:`~piml_uq.uq.UncertaintyReport` for a batch of inputs."""
        X = self._check(X)
        seed = derive_seed(int(self.random_state), "predict") if seed is None else seed
        return propagate(self.model_, X, scheme or self.uq_scheme,
                         n_samples or self.n_mc, seed)

    def transform(self, X):
        """Transfer parameters (posterior-mean weights for Bayesian models)."""
        X = self._check(X)
        return self.model_.transfer_parameters(X)
