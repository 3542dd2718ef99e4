"""Uncertainty propagation for Bayesian-last-layer models.

Three routes from weight uncertainty to output spread:

* first-order Taylor through the physics Jacobian at the mean transfer
  parameters (``propagate_taylor``),
* end-to-end Monte Carlo through network and physics
  (``propagate_end_to_end_mc``),
* the hybrid of the two: Monte Carlo for the transfer parameters followed
  by Taylor propagation (``propagate_hybrid``).

Spreads are one sample standard deviation (``ddof=1``).  Batched inputs
give per-row statistics; a single input vector gives unbatched ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .nn import as_batch
from .physics import PhysicsModel

TAYLOR_MODES = ("linear", "quadrature")


class Scheme(str, Enum):
    TAYLOR_LINEAR = "TaylorLinear"
    TAYLOR_QUADRATURE = "TaylorQuadrature"
    END_TO_END_MC = "EndToEndMC"
    HYBRID_MC_TAYLOR = "HybridMcTaylor"


BAND_SCHEMES = {
    "end_to_end_mc": ("mc", None),
    "hybrid": ("hybrid", "quadrature"),
    "hybrid_linear": ("hybrid", "linear"),
}


class EmptyStatisticsError(RuntimeError):
    """Every Monte Carlo sample at some input left the physics domain."""


@dataclass
class TransferUncertainty:
    t_mean: np.ndarray
    t_spread: np.ndarray
    n_samples: int


@dataclass
class UncertaintyReport:
    y_mean: np.ndarray
    y_spread: np.ndarray
    scheme: Scheme
    n_samples: int
    excluded_samples: object = 0
    taylor_mode: str = None

    @property
    def lower(self):
        return self.y_mean - 2.0 * self.y_spread

    @property
    def upper(self):
        return self.y_mean + 2.0 * self.y_spread


def _squeeze(single, *arrays):
    return tuple(a[0] if single else a for a in arrays)


def transfer_uncertainty(model, x, n_samples, seed) -> TransferUncertainty:
    """Mean and spread of transfer parameters under final-layer weight sampling."""
    if not model.is_bayesian:
        raise ValueError("transfer_uncertainty needs a Bayesian final layer")
    if int(n_samples) < 2:
        raise ValueError("n_samples must be at least 2")
    X, single = as_batch(x, model.input_dim)
    T = model.sample_transfer(X, int(n_samples), seed)
    mean, spread = _squeeze(single, T.mean(axis=0), T.std(axis=0, ddof=1))
    return TransferUncertainty(mean, spread, int(n_samples))


def propagate_taylor(physics: PhysicsModel, tu: TransferUncertainty,
                     mode="quadrature") -> UncertaintyReport:
    """First-order propagation of transfer spreads through the physics Jacobian.

    ``linear`` sums ``|df_j/dt_i| * eps_i``; ``quadrature`` takes the root
    sum of squares of the same terms.  Correlations between transfer
    parameters are ignored.
    """
    if mode not in TAYLOR_MODES:
        raise ValueError(f"mode must be one of {TAYLOR_MODES}")
    t_mean = np.asarray(tu.t_mean, dtype=np.float64)
    single = t_mean.ndim == 1
    T, _ = as_batch(t_mean, physics.input_dim, "t_mean")
    E = np.asarray(tu.t_spread, dtype=np.float64).reshape(T.shape)
    if np.any(E < 0):
        raise ValueError("transfer spreads must be non-negative")
    J = physics.jacobian(T)
    Y = physics.evaluate(T)
    if mode == "linear":
        spread = np.einsum("nmp,np->nm", np.abs(J), E)
        scheme = Scheme.TAYLOR_LINEAR
    else:
        spread = np.sqrt(np.einsum("nmp,np->nm", J * J, E * E))
        scheme = Scheme.TAYLOR_QUADRATURE
    y_mean, y_spread = _squeeze(single, Y, spread)
    return UncertaintyReport(y_mean, y_spread, scheme, tu.n_samples, 0, mode)


def propagate_end_to_end_mc(model, x, n_samples, seed) -> UncertaintyReport:
    """Sample final-layer weights and push every draw through the physics.

    Draws whose transfer parameters leave the physics domain are dropped
    per input row and counted in ``excluded_samples``.
    """
    if int(n_samples) < 2:
        raise ValueError("n_samples must be at least 2")
    X, single = as_batch(x, model.input_dim)
    Y, _, ok = model.predict_with_sampling(X, int(n_samples), seed)
    valid = ok.sum(axis=0)
    if np.any(valid < 2):
        bad = np.flatnonzero(valid < 2).tolist()
        raise EmptyStatisticsError(
            f"fewer than two in-domain samples at input rows {bad}")
    mean = np.nanmean(Y, axis=0)
    spread = np.nanstd(Y, axis=0, ddof=1)
    excluded = (~ok).sum(axis=0)
    y_mean, y_spread, exc = _squeeze(single, mean, spread, excluded)
    return UncertaintyReport(y_mean, y_spread, Scheme.END_TO_END_MC,
                             int(n_samples), exc if not single else int(exc))


def propagate_hybrid(model, x, n_samples, seed, mode="quadrature") -> UncertaintyReport:
    """Internal Monte Carlo for the transfer parameters, Taylor for the physics."""
    tu = transfer_uncertainty(model, x, n_samples, seed)
    rep = propagate_taylor(model.physics, tu, mode)
    rep.scheme = Scheme.HYBRID_MC_TAYLOR
    return rep


def propagate(model, x, scheme, n_samples, seed) -> UncertaintyReport:
    """Dispatch on a band scheme name (see ``BAND_SCHEMES``)."""
    if scheme not in BAND_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(BAND_SCHEMES)}")
    route, mode = BAND_SCHEMES[scheme]
    if route == "mc":
        return propagate_end_to_end_mc(model, x, n_samples, seed)
    return propagate_hybrid(model, x, n_samples, seed, mode)


@dataclass
class UncertaintyBand:
    x: np.ndarray
    report: UncertaintyReport
    scheme_name: str

    @property
    def mean(self):
        return self.report.y_mean

    @property
    def lower(self):
        return self.report.lower

    @property
    def upper(self):
        return self.report.upper

    def to_csv(self, path, input_names=None, output_names=None):
        X = self.x
        M, L, U = self.mean, self.lower, self.upper
        exc = np.broadcast_to(np.asarray(self.report.excluded_samples), (X.shape[0],))
        input_names = input_names or [f"x{k}" for k in range(X.shape[1])]
        output_names = output_names or [f"y{k}" for k in range(M.shape[1])]
        header = (list(input_names)
                  + [f"{n}_mean" for n in output_names]
                  + [f"{n}_lo" for n in output_names]
                  + [f"{n}_hi" for n in output_names]
                  + ["scheme", "n_samples", "excluded"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(X.shape[0]):
                nums = np.concatenate([X[i], M[i], L[i], U[i]])
                w.writerow([repr(float(v)) for v in nums]
                           + [self.scheme_name, self.report.n_samples, int(exc[i])])


def uncertainty_band(model, x_grid, scheme="end_to_end_mc", n_samples=20, seed=0):
    """Mean and ``mean +/- 2 spread`` over a grid of inputs."""
    X, _ = as_batch(x_grid, model.input_dim, "x_grid")
    if X.shape[0] == 0:
        raise ValueError("empty grid")
    rep = propagate(model, X, scheme, n_samples, seed)
    return UncertaintyBand(X, rep, scheme)
