"""Dense feedforward networks with exact reverse-mode gradients and Adam.

Arrays follow the row-batch convention: an input batch has shape
``(n_samples, n_features)`` and a single sample may be passed as a 1-D
vector.  Weight matrices are stored ``(out, in)`` so a layer computes
``h @ W.T + b``.

Parameters and gradients are exchanged as flat lists of arrays in the
order ``[W0, b0, W1, b1, ...]``; a gradient list in that order is what the
rest of the package calls a *tape*.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

LEAKY_SLOPE = 0.01

ACTIVATIONS = ("leaky_relu", "identity")


def leaky_relu(z, slope=LEAKY_SLOPE):
    return np.where(z >= 0.0, z, slope * z)


def leaky_relu_grad(z, slope=LEAKY_SLOPE):
    return np.where(z >= 0.0, 1.0, slope)


def affine(h, weights, biases):
    """Shared affine map; every code path evaluating a layer goes through here."""
    return h @ weights.T + biases


def as_batch(x, dim, name="x"):
    """Return ``x`` as a float64 2-D batch and whether it was a single vector."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim <= 1
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] != dim:
        raise ValueError(f"{name} has {arr.shape[1]} features, expected {dim}")
    return arr, single


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "leaky_relu"
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D (out, in) matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.weights.shape[0]} outputs"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def activate(self, z):
        if self.activation == "identity":
            return z
        return leaky_relu(z, self.slope)

    def activate_grad(self, z):
        if self.activation == "identity":
            return np.ones_like(z)
        return leaky_relu_grad(z, self.slope)

    def copy(self):
        return DenseLayer(self.weights.copy(), self.biases.copy(),
                          self.activation, self.slope)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations recorded by a forward pass."""
    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)


class DenseNetwork:
    """Feedforward network: Leaky ReLU hidden layers, identity output layer.

    Parameters
    ----------
    layers : sequence of DenseLayer
        Layers in evaluation order.  Adjacent dimensions must chain.
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer {k} outputs {a.out_dim} but layer {k + 1} "
                    f"expects {b.in_dim}"
                )
        for layer in layers[:-1]:
            if layer.activation != "leaky_relu":
                raise ValueError("hidden layers must use leaky_relu")
        if layers[-1].activation != "identity":
            raise ValueError("the output layer must use the identity activation")
        self.layers = layers

    @classmethod
    def build(cls, sizes: Sequence[int], seed=None, slope=LEAKY_SLOPE):
        """He-uniform initialised network with layer widths ``sizes``.

        ``sizes`` lists every width including input and output, e.g.
        ``[1, 200, 200, 200, 200, 200, 1]`` for five hidden layers.
        """
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        rng = np.random.default_rng(seed)
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / n_in)
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
            b = np.zeros(n_out)
            act = "identity" if k == len(sizes) - 2 else "leaky_relu"
            layers.append(DenseLayer(w, b, act, slope))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def sizes(self):
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def n_params(self):
        return sum(layer.weights.size + layer.biases.size for layer in self.layers)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.biases])
        return out

    def copy(self):
        return DenseNetwork([layer.copy() for layer in self.layers])

    # -- evaluation --------------------------------------------------------
    def _run(self, X, layers, cache=None):
        h = X
        for layer in layers:
            z = affine(h, layer.weights, layer.biases)
            if cache is not None:
                cache.inputs.append(h)
                cache.preacts.append(z)
            h = layer.activate(z)
        return h

    def hidden_features(self, X, cache: Optional[ForwardCache] = None):
        """Activations feeding the output layer, for a 2-D batch ``X``."""
        return self._run(X, self.layers[:-1], cache)

    def forward(self, x):
        X, single = as_batch(x, self.input_dim)
        out = self._run(X, self.layers)
        return out[0] if single else out

    def forward_with_cache(self, X):
        cache = ForwardCache()
        out = self._run(X, self.layers, cache)
        return out, cache

    def backward_from_cache(self, cache: ForwardCache, upstream, stop=None):
        """Reverse pass over ``layers[:stop]`` seeded by ``upstream``.

        ``upstream`` is dL/d(output of the last layer covered).  Gradients
        are summed over the batch.  Returns ``(tape, input_grad)``.
        """
        stop = len(self.layers) if stop is None else stop
        grads: List[np.ndarray] = [None] * (2 * stop)
        delta_out = upstream
        for k in range(stop - 1, -1, -1):
            layer = self.layers[k]
            dz = delta_out * layer.activate_grad(cache.preacts[k])
            grads[2 * k] = dz.T @ cache.inputs[k]
            grads[2 * k + 1] = dz.sum(axis=0)
            delta_out = dz @ layer.weights
        return grads, delta_out

    def backward(self, x, upstream):
        X, single = as_batch(x, self.input_dim)
        U = np.asarray(upstream, dtype=np.float64).reshape(X.shape[0], -1)
        if U.shape[1] != self.output_dim:
            raise ValueError(
                f"upstream has {U.shape[1]} entries, expected {self.output_dim}"
            )
        _, cache = self.forward_with_cache(X)
        tape, dx = self.backward_from_cache(cache, U)
        return tape, (dx[0] if single else dx)


def forward(net: DenseNetwork, x):
    return net.forward(x)


def backward(net: DenseNetwork, x, upstream) -> Tuple[List[np.ndarray], np.ndarray]:
    """Reverse-mode partials of ``upstream . forward(net, x)``.

    Returns the parameter tape (ordered like ``net.parameters()``) and the
    gradient with respect to ``x``.
    """
    return net.backward(x, upstream)


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    """d(mse_loss)/d(pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - target) / pred.size


class Adam:
    """Adam with bias correction, updating a parameter list in place.

    Parameters
    ----------
    params : list of ndarray
        Parameter arrays; moments are allocated with matching shapes.
    learning_rate, beta1, beta2, eps : float
        Standard Adam hyperparameters.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient lists do not match optimizer state")
        for k, g in enumerate(grads):
            if g.shape != self.m[k].shape:
                raise ValueError(f"gradient {k} has shape {g.shape}, "
                                 f"expected {self.m[k].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter block {k} at step {self.t + 1}"
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
