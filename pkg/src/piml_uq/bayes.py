"""Mean-field Gaussian output layer and its variational objective.

Only the final layer of a network is made stochastic.  Each weight and
bias carries a posterior ``N(mu, softplus(rho)**2)`` and a Gaussian prior
``N(prior_mu, prior_sigma**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import affine

PRIOR_SIGMA_FLOOR = 1e-4


def softplus(rho):
    return np.logaddexp(0.0, rho)


def softplus_inverse(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    # log(expm1(s)) overflows for large s; there softplus(rho) ~= rho
    return np.where(sigma > 30.0, sigma, np.log(np.expm1(np.minimum(sigma, 30.0))))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class WeightSample:
    """One draw from the posterior, kept with the noise that produced it."""
    weights: np.ndarray
    biases: np.ndarray
    noise_weights: np.ndarray
    noise_biases: np.ndarray
    seed: object = None


class VariationalLayer:
    """Identity-activation dense layer with Gaussian weights.

    Parameters
    ----------
    mu_weights, mu_biases : ndarray
        Posterior means, shapes ``(out, in)`` and ``(out,)``.
    rho_weights, rho_biases : ndarray
        Unconstrained spreads; ``sigma = softplus(rho)``.
    prior_mu_weights, prior_mu_biases : ndarray
        Prior means.
    prior_sigma_weights, prior_sigma_biases : ndarray
        Prior standard deviations, strictly positive.
    """

    def __init__(self, mu_weights, mu_biases, rho_weights, rho_biases,
                 prior_mu_weights, prior_mu_biases,
                 prior_sigma_weights, prior_sigma_biases):
        f = lambda a: np.array(a, dtype=np.float64)
        self.mu_weights = f(mu_weights)
        self.mu_biases = f(mu_biases)
        self.rho_weights = f(rho_weights)
        self.rho_biases = f(rho_biases)
        self.prior_mu_weights = f(prior_mu_weights)
        self.prior_mu_biases = f(prior_mu_biases)
        self.prior_sigma_weights = f(prior_sigma_weights)
        self.prior_sigma_biases = f(prior_sigma_biases)
        self.validate()

    def validate(self):
        w_shape = self.mu_weights.shape
        if len(w_shape) != 2:
            raise ValueError("mu_weights must be a 2-D (out, in) matrix")
        b_shape = (w_shape[0],)
        for name in ("rho_weights", "prior_mu_weights", "prior_sigma_weights"):
            if getattr(self, name).shape != w_shape:
                raise ValueError(f"{name} shape does not match mu_weights {w_shape}")
        for name in ("mu_biases", "rho_biases", "prior_mu_biases",
                     "prior_sigma_biases"):
            if getattr(self, name).shape != b_shape:
                raise ValueError(f"{name} shape does not match {b_shape}")
        if np.any(~(self.prior_sigma_weights > 0)) or np.any(~(self.prior_sigma_biases > 0)):
            raise ValueError("prior_sigma entries must be strictly positive")

    @classmethod
    def from_dense(cls, weights, biases, per_weight_prior=False,
                   init_sigma_ratio=0.5):
        """Variational layer centred on trained deterministic weights.

        The prior is derived with :func:`init_prior_from_deterministic`; the
        posterior mean starts at the deterministic weights and the posterior
        spread at ``init_sigma_ratio * prior_sigma``.
        """
        weights = np.array(weights, dtype=np.float64)
        biases = np.array(biases, dtype=np.float64)
        (pmw, pmb), (psw, psb) = init_prior_from_deterministic(
            (weights, biases), per_weight=per_weight_prior)
        rho_w = softplus_inverse(init_sigma_ratio * psw)
        rho_b = softplus_inverse(init_sigma_ratio * psb)
        return cls(weights.copy(), biases.copy(), rho_w, rho_b, pmw, pmb, psw, psb)

    @property
    def in_dim(self):
        return self.mu_weights.shape[1]

    @property
    def out_dim(self):
        return self.mu_weights.shape[0]

    @property
    def sigma_weights(self):
        return softplus(self.rho_weights)

    @property
    def sigma_biases(self):
        return softplus(self.rho_biases)

    @property
    def n_weights(self):
        return self.mu_weights.size + self.mu_biases.size

    def parameters(self):
        """Trainable variational parameters ``[mu_W, mu_b, rho_W, rho_b]``."""
        return [self.mu_weights, self.mu_biases, self.rho_weights, self.rho_biases]

    def copy(self):
        return VariationalLayer(
            self.mu_weights, self.mu_biases, self.rho_weights, self.rho_biases,
            self.prior_mu_weights, self.prior_mu_biases,
            self.prior_sigma_weights, self.prior_sigma_biases)

    def force_zero_sigma(self):
        """Collapse the posterior onto its mean (sigma == 0 exactly)."""
        self.rho_weights[...] = -np.inf
        self.rho_biases[...] = -np.inf

    def scale_sigma(self, factor):
        """Multiply every posterior standard deviation by ``factor``."""
        self.rho_weights = softplus_inverse(factor * self.sigma_weights)
        self.rho_biases = softplus_inverse(factor * self.sigma_biases)

    def mean_output(self, h):
        return affine(h, self.mu_weights, self.mu_biases)

    def sample(self, rng_seed=None) -> WeightSample:
        return sample_weights(self, rng_seed)


def sample_weights(layer: VariationalLayer, rng_seed=None) -> WeightSample:
    """Reparameterised draw ``mu + sigma * eps`` with ``eps ~ N(0, I)``.

    ``rng_seed`` may be anything accepted by ``np.random.default_rng``,
    including a ``(seed, index)`` tuple.
    """
    rng = np.random.default_rng(rng_seed)
    eps_w = rng.standard_normal(layer.mu_weights.shape)
    eps_b = rng.standard_normal(layer.mu_biases.shape)
    w = layer.mu_weights + layer.sigma_weights * eps_w
    b = layer.mu_biases + layer.sigma_biases * eps_b
    return WeightSample(w, b, eps_w, eps_b, rng_seed)


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p):
    """Elementwise KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))."""
    sigma_q = np.asarray(sigma_q, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if np.any(~(sigma_q > 0)) or np.any(~(sigma_p > 0)):
        raise ValueError("KL divergence requires strictly positive standard deviations")
    return (np.log(sigma_p / sigma_q)
            + (sigma_q ** 2 + (np.asarray(mu_q) - mu_p) ** 2) / (2.0 * sigma_p ** 2)
            - 0.5)


def kl_to_prior(layer: VariationalLayer) -> float:
    kl_w = gaussian_kl(layer.mu_weights, layer.sigma_weights,
                       layer.prior_mu_weights, layer.prior_sigma_weights)
    kl_b = gaussian_kl(layer.mu_biases, layer.sigma_biases,
                       layer.prior_mu_biases, layer.prior_sigma_biases)
    return float(kl_w.sum() + kl_b.sum())


def kl_gradients(layer: VariationalLayer):
    """d(kl_to_prior)/d[mu_W, mu_b, rho_W, rho_b]."""
    out_mu, out_rho = [], []
    for mu, rho, pm, ps in (
        (layer.mu_weights, layer.rho_weights, layer.prior_mu_weights, layer.prior_sigma_weights),
        (layer.mu_biases, layer.rho_biases, layer.prior_mu_biases, layer.prior_sigma_biases),
    ):
        sigma = softplus(rho)
        out_mu.append((mu - pm) / ps ** 2)
        out_rho.append((-1.0 / sigma + sigma / ps ** 2) * sigmoid(rho))
    return out_mu + out_rho


def gaussian_log_likelihood(pred, target, noise_std):
    """Sum of ``log N(target | pred, noise_std^2)`` over all entries."""
    r = np.asarray(pred, dtype=np.float64) - target
    n = r.size
    return float(-0.5 * n * np.log(2.0 * np.pi * noise_std ** 2)
                 - np.sum(r * r) / (2.0 * noise_std ** 2))


def gaussian_log_likelihood_grad(pred, target, noise_std):
    """d(gaussian_log_likelihood)/d(pred)."""
    return -(np.asarray(pred, dtype=np.float64) - target) / noise_std ** 2


def elbo_loss(likelihood_log_prob, kl, n_batches=1):
    """Negative ELBO for one minibatch: ``-log p(D_batch|w) + KL / n_batches``.

    Minimising this maximises the evidence lower bound.
    """
    if kl < 0:
        raise ValueError("kl must be non-negative")
    return -float(likelihood_log_prob) + float(kl) / n_batches


def init_prior_from_deterministic(weights, per_weight=False):
    """Prior means and spreads seeded from trained deterministic weights.

    Parameters
    ----------
    weights : ndarray or tuple of ndarray
        Final-layer parameters, typically ``(W, b)``.
    per_weight : bool, default False
        If False, one shared sigma equal to the population standard deviation
        of all supplied values (floored at ``1e-4``).  If True, each entry
        gets ``max(|w|, floor)`` instead, an optional per-weight reading.

    Returns
    -------
    prior_mu, prior_sigma
        Structures mirroring ``weights``.
    """
    single = isinstance(weights, np.ndarray) or np.isscalar(weights)
    parts = [np.array(weights, dtype=np.float64)] if single else \
        [np.array(w, dtype=np.float64) for w in weights]
    flat = np.concatenate([p.ravel() for p in parts]) if parts else np.array([])
    if flat.size < 2:
        raise ValueError("need at least two weights to estimate a prior spread")
    if per_weight:
        sigmas = [np.maximum(np.abs(p), PRIOR_SIGMA_FLOOR) for p in parts]
    else:
        shared = max(float(np.std(flat)), PRIOR_SIGMA_FLOOR)
        sigmas = [np.full_like(p, shared) for p in parts]
    mus = [p.copy() for p in parts]
    if single:
        return mus[0], sigmas[0]
    return tuple(mus), tuple(sigmas)
