"""Two-stage training: deterministic MSE fit, then Bayesian final-layer retraining."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .bayes import (VariationalLayer, elbo_loss, gaussian_log_likelihood,
                    gaussian_log_likelihood_grad, kl_gradients, kl_to_prior,
                    sample_weights)
from .data import Dataset
from .nn import Adam
from .physics import PhysicsDomainError
from .piml import PimlModel, sample_seed
from .seeding import derive_seed

STAGES = ("deterministic", "bayesian")


class TrainingError(RuntimeError):
    """Non-finite loss or physics failure during training, with context."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    """Optimisation settings for one training stage.

    ``batch_size=None`` means full-batch steps.  ``lambda_elbo`` weights the
    negative-ELBO term in stage 2; ``observation_noise`` is the Gaussian
    likelihood std in normalised output units.
    """
    epochs: int = 1000
    learning_rate: float = 1e-4
    batch_size: Optional[int] = None
    seed: int = 0
    stage: str = "deterministic"
    lambda_elbo: float = 0.01
    observation_noise: float = 0.05
    n_weight_samples: int = 1
    freeze_hidden: bool = False
    per_weight_prior: bool = False

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError("epochs must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_elbo < 0:
            raise ValueError("lambda_elbo must be non-negative")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValueError("batch_size must be positive")
        if not self.observation_noise > 0:
            raise ValueError("observation_noise must be positive")
        if int(self.n_weight_samples) < 1:
            raise ValueError("n_weight_samples must be at least 1")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class ConvergenceHistory:
    epoch: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    test_loss: List[float] = field(default_factory=list)
    mse_term: List[float] = field(default_factory=list)
    elbo_term: List[float] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "test_loss", "mse_term", "elbo_term", "wall_ms")

    def __len__(self):
        return len(self.epoch)

    def append(self, **row):
        for k in self.COLUMNS:
            getattr(self, k).append(row[k])

    @property
    def total_wall_ms(self):
        return self.wall_ms[-1] if self.wall_ms else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in zip(*(getattr(self, k) for k in self.COLUMNS)):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _normalised_mse(model: PimlModel, Y, targets):
    r = (Y - targets) / model.output_stats.std
    return float(np.mean(r * r)), r


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def dataset_loss(model: PimlModel, data: Dataset):
    """Normalised MSE of the (posterior-mean) model on a dataset."""
    Y, _ = model.forward(data.inputs)
    return _normalised_mse(model, Y, data.targets)[0]


def _test_loss(model: PimlModel, test: Optional[Dataset], epoch):
    if test is None:
        return float("nan")
    try:
        return dataset_loss(model, test)
    except PhysicsDomainError as exc:
        raise TrainingError(f"epoch {epoch}, test evaluation: {exc}",
                            epoch=epoch, batch=-1) from exc


def _check_finite(value, epoch, batch, **parts):
    if not np.isfinite(value):
        raise TrainingError(
            f"non-finite loss at epoch {epoch}, batch {batch}: {parts}",
            epoch=epoch, batch=batch, **parts)


def train_stage1(model: PimlModel, data: Dataset, cfg: TrainConfig,
                 test: Optional[Dataset] = None):
    """Adam on normalised MSE.  Returns a trained copy and its history."""
    if cfg.stage != "deterministic":
        raise ValueError("train_stage1 needs a deterministic-stage config")
    if model.is_bayesian:
        raise ValueError("train_stage1 expects a deterministic model")
    if len(data) == 0:
        raise ValueError("empty training set")
    model = model.copy()
    params = model.trainable_parameters()
    opt = Adam(params, cfg.learning_rate)
    batch_rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    history = ConvergenceHistory()
    X, T = data.inputs, data.targets
    start = time.monotonic()
    for epoch in range(1, int(cfg.epochs) + 1):
        losses, sizes = [], []
        for b, idx in enumerate(_batches(len(data), cfg.batch_size, batch_rng)):
            xb, tb = X[idx], T[idx]
            try:
                Y, _ = model.forward(xb)
                loss, r = _normalised_mse(model, Y, tb)
                _check_finite(loss, epoch, b, mse=loss)
                upstream = 2.0 * r / model.output_stats.std / r.size
                tape, _, _ = model.backward(xb, upstream)
                opt.step(params, tape)
            except (PhysicsDomainError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}",
                                    epoch=epoch, batch=b) from exc
            losses.append(loss)
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes))
        test_loss = _test_loss(model, test, epoch)
        history.append(epoch=epoch, train_loss=train_loss, test_loss=test_loss,
                       mse_term=train_loss, elbo_term=0.0,
                       wall_ms=1000.0 * (time.monotonic() - start))
    return model, history


def promote_to_bayesian(model: PimlModel, per_weight_prior=False,
                        init_sigma_ratio=0.5) -> PimlModel:
    """Swap the trained final layer for a variational layer centred on it."""
    if model.is_bayesian:
        raise ValueError("model is already Bayesian")
    last = model.network.layers[-1]
    layer = VariationalLayer.from_dense(last.weights, last.biases,
                                        per_weight_prior=per_weight_prior,
                                        init_sigma_ratio=init_sigma_ratio)
    out = model.copy()
    out.variational = layer
    return out


def train_stage2(model: PimlModel, data: Dataset, cfg: TrainConfig,
                 test: Optional[Dataset] = None):
    """Minimise ``MSE + lambda * (negative ELBO per datum)`` with pathwise gradients.

    Each step draws ``cfg.n_weight_samples`` reparameterised weight samples,
    averages MSE and log-likelihood over them, and adds ``KL / n_train``.
    Hidden layers train too unless ``cfg.freeze_hidden``.
    """
    if cfg.stage != "bayesian":
        raise ValueError("train_stage2 needs a bayesian-stage config")
    if not model.is_bayesian:
        raise ValueError("train_stage2 expects a model with a variational final layer")
    model = model.copy()
    v = model.variational
    params = model.trainable_parameters(cfg.freeze_hidden)
    n_hidden = len(params) - 4
    opt = Adam(params, cfg.learning_rate)
    batch_rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
    weight_seed = derive_seed(cfg.seed, "weight-samples")
    lam = float(cfg.lambda_elbo)
    n_samples = int(cfg.n_weight_samples)
    n_data = len(data)
    n_batches = 1 if cfg.batch_size is None else int(np.ceil(n_data / cfg.batch_size))
    history = ConvergenceHistory()
    X, T = data.inputs, data.targets
    draw = 0
    start = time.monotonic()
    for epoch in range(1, int(cfg.epochs) + 1):
        tot, mses, elbos, sizes = [], [], [], []
        for b, idx in enumerate(_batches(n_data, cfg.batch_size, batch_rng)):
            xb, tb = X[idx], T[idx]
            grads = None
            mse_acc = loglik_acc = 0.0
            try:
                for _ in range(n_samples):
                    sample = sample_weights(v, sample_seed(weight_seed, draw))
                    draw += 1
                    Y, _ = model.forward(xb, sample)
                    mse, r = _normalised_mse(model, Y, tb)
                    up = 2.0 * r / r.size
                    if lam > 0:
                        loglik = gaussian_log_likelihood(r, 0.0, cfg.observation_noise)
                        # per-datum scaling: lambda * (-loglik) / batch
                        up = up - lam * gaussian_log_likelihood_grad(
                            r, 0.0, cfg.observation_noise) / len(idx)
                        loglik_acc += loglik
                    tape, _, _ = model.backward(xb, up / model.output_stats.std, sample)
                    tape = tape[-len(params):] if cfg.freeze_hidden else tape
                    grads = tape if grads is None else [g + t for g, t in zip(grads, tape)]
                    mse_acc += mse
                grads = [g / n_samples for g in grads]
                mse = mse_acc / n_samples
                if lam > 0:
                    kl = kl_to_prior(v)
                    elbo_term = elbo_loss(loglik_acc / n_samples, kl, n_batches) / len(idx)
                    for k, g in enumerate(kl_gradients(v)):
                        grads[n_hidden + k] = grads[n_hidden + k] + lam * g / (n_batches * len(idx))
                else:
                    elbo_term = 0.0
                loss = mse + lam * elbo_term
                _check_finite(loss, epoch, b, mse=mse, elbo=elbo_term)
                opt.step(params, grads)
            except (PhysicsDomainError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}",
                                    epoch=epoch, batch=b) from exc
            tot.append(loss)
            mses.append(mse)
            elbos.append(elbo_term)
            sizes.append(len(idx))
        test_loss = _test_loss(model, test, epoch)
        history.append(epoch=epoch, train_loss=float(np.average(tot, weights=sizes)),
                       test_loss=test_loss,
                       mse_term=float(np.average(mses, weights=sizes)),
                       elbo_term=float(np.average(elbos, weights=sizes)),
                       wall_ms=1000.0 * (time.monotonic() - start))
    return model, history


def stage2_loss(model: PimlModel, xb, tb, sample, cfg: TrainConfig, n_batches=1):
    """Scalar stage-2 objective for one batch and one fixed weight sample.

    Mirrors the per-step loss used by :func:`train_stage2`; intended for
    gradient checks with common random numbers.
    """
    Y, _ = model.forward(xb, sample)
    mse, r = _normalised_mse(model, Y, tb)
    lam = float(cfg.lambda_elbo)
    if lam == 0:
        return mse
    loglik = gaussian_log_likelihood(r, 0.0, cfg.observation_noise)
    return mse + lam * elbo_loss(loglik, kl_to_prior(model.variational), n_batches) / len(xb)


def predictive_mean(model: PimlModel, x, n_mc=1, seed=0):
    """Posterior predictive mean: MC average for Bayesian models, else the forward pass."""
    if not model.is_bayesian:
        return model.predict(x)
    Y, _, _ = model.predict_with_sampling(x, n_mc, seed)
    return np.nanmean(Y, axis=0)


def evaluate_rmse(model: PimlModel, data: Dataset, n_mc=20, seed=0):
    """RMSE of the predictive mean per output, plus the pooled total.

    Returns ``(per_output, total)`` in physical output units.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    pred = predictive_mean(model, data.inputs, n_mc, seed)
    err = pred - data.targets
    per_output = np.sqrt(np.mean(err ** 2, axis=0))
    total = float(np.sqrt(np.mean(err ** 2)))
    return per_output, total
