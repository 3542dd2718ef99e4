"""Serial hybrid model: network -> transfer parameters -> physics -> outputs."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .bayes import VariationalLayer, WeightSample, sample_weights, sigmoid
from .data import NormStats
from .nn import DenseNetwork, ForwardCache, affine, as_batch
from .physics import AffinePhysics, PhysicsModel

TRANSFER_MODES = ("direct", "residual")


def sample_seed(seed, index):
    """Seed for the ``index``-th weight draw of a Monte Carlo run."""
    return (int(seed), int(index))


class PimlModel:
    """Transfer network feeding a differentiable physics model.

    Parameters
    ----------
    network : DenseNetwork
        Maps normalised inputs to transfer outputs.  When ``variational`` is
        set, its last layer is kept only as the stage-1 record and the
        variational layer is used in its place.
    physics : PhysicsModel
        Consumes transfer parameters.  ``physics.input_dim`` must equal
        ``network.output_dim``.
    transfer : {'direct', 'residual'}
        ``direct``: ``t = net(x_n)``.  ``residual``: ``t = x + s * net(x_n)``
        with ``s`` the per-feature input std, so an all-zero network passes
        the raw inputs straight to the physics.
    input_stats, output_stats : NormStats
        Input z-scoring for the network; output stats scale the training
        loss only.
    variational : VariationalLayer, optional
        Bayesian replacement for the network's final layer.
    """

    def __init__(self, network: DenseNetwork, physics: PhysicsModel,
                 input_stats: NormStats, output_stats: NormStats,
                 transfer="direct", variational: Optional[VariationalLayer] = None):
        if transfer not in TRANSFER_MODES:
            raise ValueError(f"transfer must be one of {TRANSFER_MODES}")
        if network.output_dim != physics.input_dim:
            raise ValueError(
                f"network emits {network.output_dim} transfer parameters but "
                f"physics expects {physics.input_dim}")
        if transfer == "residual" and network.input_dim != physics.input_dim:
            raise ValueError("residual transfer needs as many inputs as transfer parameters")
        if input_stats.dim != network.input_dim or output_stats.dim != physics.output_dim:
            raise ValueError("normalisation stats do not match model dimensions")
        if variational is not None:
            last = network.layers[-1]
            if variational.mu_weights.shape != last.weights.shape:
                raise ValueError("variational layer shape does not match the final layer")
        self.network = network
        self.physics = physics
        self.transfer = transfer
        self.input_stats = input_stats
        self.output_stats = output_stats
        self.variational = variational

    @property
    def input_dim(self):
        return self.network.input_dim

    @property
    def output_dim(self):
        return self.physics.output_dim

    @property
    def n_transfer(self):
        return self.physics.input_dim

    @property
    def is_bayesian(self):
        return self.variational is not None

    @property
    def n_params(self):
        n = self.network.n_params
        if self.variational is not None:
            # mu and rho replace the deterministic final layer
            n += self.variational.n_weights
        return n

    def copy(self):
        return PimlModel(self.network.copy(), self.physics, self.input_stats,
                         self.output_stats, self.transfer,
                         None if self.variational is None else self.variational.copy())

    def trainable_parameters(self, freeze_hidden=False):
        hidden = [] if freeze_hidden else self.network.parameters()[:-2]
        if self.variational is None:
            return hidden + self.network.parameters()[-2:]
        return hidden + self.variational.parameters()

    # -- pieces ------------------------------------------------------------
    def _head_weights(self, sample: Optional[WeightSample]):
        if self.variational is None:
            last = self.network.layers[-1]
            return last.weights, last.biases
        if sample is None:
            return self.variational.mu_weights, self.variational.mu_biases
        return sample.weights, sample.biases

    def features(self, X, cache: Optional[ForwardCache] = None):
        """Last hidden activations for raw inputs ``X`` (2-D)."""
        return self.network.hidden_features(self.input_stats.normalize(X), cache)

    def transfer_from_head(self, X, O):
        if self.transfer == "direct":
            return O
        return X + O * self.input_stats.std

    def transfer_parameters(self, x, sample: Optional[WeightSample] = None):
        X, single = as_batch(x, self.input_dim)
        W, b = self._head_weights(sample)
        T = self.transfer_from_head(X, affine(self.features(X), W, b))
        return T[0] if single else T

    # -- public passes -----------------------------------------------------
    def forward(self, x, sample: Optional[WeightSample] = None):
        """Return ``(y, t)``; Bayesian models use posterior means unless a sample is given."""
        X, single = as_batch(x, self.input_dim)
        T = self.transfer_parameters(X, sample)
        Y = self.physics.evaluate(T)
        return (Y[0], T[0]) if single else (Y, T)

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, x, upstream, sample: Optional[WeightSample] = None):
        """Gradient tape of ``sum(upstream * y)`` over :meth:`trainable_parameters`.

        The tape always covers all parameters (hidden layers first, then the
        head: ``[W, b]`` or ``[mu_W, mu_b, rho_W, rho_b]``).  Returns
        ``(tape, y, t)`` so callers can reuse the forward values.
        """
        X, single = as_batch(x, self.input_dim)
        U = np.asarray(upstream, dtype=np.float64).reshape(X.shape[0], -1)
        if U.shape[1] != self.output_dim:
            raise ValueError(f"upstream has {U.shape[1]} entries, expected {self.output_dim}")
        cache = ForwardCache()
        H = self.features(X, cache)
        W, b = self._head_weights(sample)
        T = self.transfer_from_head(X, affine(H, W, b))
        Y = self.physics.evaluate(T)
        J = self.physics.jacobian(T)
        up_t = np.einsum("nm,nmp->np", U, J)
        up_o = up_t if self.transfer == "direct" else up_t * self.input_stats.std
        g_w = up_o.T @ H
        g_b = up_o.sum(axis=0)
        hidden_tape, _ = self.network.backward_from_cache(
            cache, up_o @ W, stop=len(self.network.layers) - 1)
        if self.variational is None:
            head = [g_w, g_b]
        else:
            v = self.variational
            if sample is None:
                g_rw, g_rb = np.zeros_like(g_w), np.zeros_like(g_b)
            else:
                g_rw = g_w * sample.noise_weights * sigmoid(v.rho_weights)
                g_rb = g_b * sample.noise_biases * sigmoid(v.rho_biases)
            head = [g_w, g_b, g_rw, g_rb]
        return hidden_tape + head, Y, T

    def predict_with_sampling(self, x, n_samples, seed):
        """End-to-end Monte Carlo over final-layer weights.

        Sample ``i`` uses weights drawn with seed ``(seed, i)`` and is shared
        across all rows of ``x``.  Returns ``(Y, T, ok)`` with shapes
        ``(n_samples, n, m)``, ``(n_samples, n, p)`` and ``(n_samples, n)``;
        rows whose transfer parameters leave the physics domain are NaN in
        ``Y`` and False in ``ok``.
        """
        if self.variational is None:
            raise ValueError("predict_with_sampling needs a Bayesian final layer")
        n_samples = int(n_samples)
        if n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        X, _ = as_batch(x, self.input_dim)
        T = self.sample_transfer(X, n_samples, seed)
        flat = T.reshape(-1, self.n_transfer)
        ok = self.physics.in_domain(flat)
        Y = np.full((flat.shape[0], self.output_dim), np.nan)
        if ok.any():
            Y[ok] = self.physics.evaluate(flat[ok])
        n = X.shape[0]
        return (Y.reshape(n_samples, n, self.output_dim), T,
                ok.reshape(n_samples, n))

    def sample_transfer(self, X, n_samples, seed):
        """Transfer parameters under ``n_samples`` weight draws, ``(n_samples, n, p)``."""
        H = self.features(X)
        out = np.empty((n_samples, X.shape[0], self.n_transfer))
        for i in range(n_samples):
            s = sample_weights(self.variational, sample_seed(seed, i))
            out[i] = self.transfer_from_head(X, affine(H, s.weights, s.biases))
        return out


def build_network(n_in, n_out, hidden_layers, hidden_units, seed=None):
    sizes = [n_in] + [int(hidden_units)] * int(hidden_layers) + [n_out]
    return DenseNetwork.build(sizes, seed)


def make_ann(input_stats: NormStats, output_stats: NormStats, hidden_layers=5,
             hidden_units=200, seed=None) -> PimlModel:
    """Pure data-driven network: the 'physics' only de-normalises its outputs."""
    net = build_network(input_stats.dim, output_stats.dim, hidden_layers,
                        hidden_units, seed)
    head = AffinePhysics(np.diag(output_stats.std), output_stats.mean)
    return PimlModel(net, head, input_stats, output_stats, "direct")


def make_piml(physics: PhysicsModel, input_stats: NormStats, output_stats: NormStats,
              hidden_layers=5, hidden_units=200, seed=None,
              transfer="residual") -> PimlModel:
    """Hybrid model.  With residual transfer the output layer starts at zero,
    so the untrained model reproduces the raw partial physics."""
    net = build_network(input_stats.dim, physics.input_dim, hidden_layers,
                        hidden_units, seed)
    if transfer == "residual":
        net.layers[-1].weights[...] = 0.0
    return PimlModel(net, physics, input_stats, output_stats, transfer)
