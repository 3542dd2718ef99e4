"""Dataset synthesis, z-score normalisation and train/test splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .physics import (AERO_INPUTS, AERO_OUTPUTS, AeroConstants, AeroPerturbation,
                      aero_pipeline, gl_full)

PROVENANCES = ("GramacyLee", "SyntheticAero", "ExternalCsv")

# Sampling box for synthetic aircraft states (SI units, radians).
AERO_RANGES = {
    "V_inf": (10.0, 30.0),
    "alpha": (np.deg2rad(-5.0), np.deg2rad(15.0)),
    "beta": (np.deg2rad(-2.0), np.deg2rad(10.0)),
    "aileron": (np.deg2rad(-15.0), np.deg2rad(15.0)),
    "rudder": (np.deg2rad(-15.0), np.deg2rad(15.0)),
    "throttle": (0.0, 1.0),
}

GL_DOMAIN = (0.5, 2.5)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("normalisation stats must be finite")
        if np.any(std <= 0):
            bad = np.flatnonzero(std <= 0).tolist()
            raise ValueError(f"zero-variance dimension(s) {bad} cannot be normalised")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] < 2:
            raise ValueError("need at least two rows to compute normalisation stats")
        return cls(values.mean(axis=0), values.std(axis=0))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self):
        return self.mean.shape[0]

    def normalize(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["std"]))


def normalize(values, stats: NormStats):
    return stats.normalize(values)


def denormalize(values, stats: NormStats):
    return stats.denormalize(values)


@dataclass(frozen=True)
class Dataset:
    """Immutable input/target table with training-partition stats.

    ``input_stats`` and ``output_stats`` are None until the set has been
    split (or fitted) so that stats never leak from test rows.
    """
    inputs: np.ndarray
    targets: np.ndarray
    provenance: str
    input_names: tuple = ()
    output_names: tuple = ()
    input_stats: Optional[NormStats] = None
    output_stats: Optional[NormStats] = None

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("inputs and targets have different row counts")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)
        if not self.input_names:
            object.__setattr__(self, "input_names",
                               tuple(f"x{k}" for k in range(X.shape[1])))
        if not self.output_names:
            object.__setattr__(self, "output_names",
                               tuple(f"y{k}" for k in range(Y.shape[1])))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.targets.shape[1]

    def with_stats(self, input_stats, output_stats):
        return replace(self, input_stats=input_stats, output_stats=output_stats)

    def subset(self, index):
        return replace(self, inputs=self.inputs[index], targets=self.targets[index])

    def fit_stats(self):
        return self.with_stats(NormStats.fit(self.inputs), NormStats.fit(self.targets))

    # -- persistence ---------------------------------------------------------
    def to_csv(self, path):
        """Headered CSV (inputs then targets) plus a ``.stats.json`` sidecar."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(self.input_names) + list(self.output_names))
            for row in np.hstack([self.inputs, self.targets]):
                writer.writerow([repr(float(v)) for v in row])
        sidecar = {
            "provenance": self.provenance,
            "input_names": list(self.input_names),
            "output_names": list(self.output_names),
            "input_stats": None if self.input_stats is None else self.input_stats.to_dict(),
            "output_stats": None if self.output_stats is None else self.output_stats.to_dict(),
        }
        stats_path = path.with_suffix(".stats.json")
        stats_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
        return [path, stats_path]

    @classmethod
    def from_csv(cls, path, n_inputs=None, provenance="ExternalCsv"):
        """Load a headered CSV.  Without a sidecar, ``n_inputs`` is required."""
        path = Path(path)
        stats_path = path.with_suffix(".stats.json")
        meta = json.loads(stats_path.read_text()) if stats_path.exists() else None
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: no data rows")
        header, body = rows[0], np.array(rows[1:], dtype=np.float64)
        if meta is not None:
            n_in = len(meta["input_names"])
            provenance = meta["provenance"]
        elif n_inputs is not None:
            n_in = int(n_inputs)
        else:
            raise ValueError("n_inputs is required for CSV files without a stats sidecar")
        ds = cls(body[:, :n_in], body[:, n_in:], provenance,
                 tuple(header[:n_in]), tuple(header[n_in:]))
        if meta is not None and meta.get("input_stats") is not None:
            ds = ds.with_stats(NormStats.from_dict(meta["input_stats"]),
                               NormStats.from_dict(meta["output_stats"]))
        return ds


def load_external_aero_csv(path):
    """Flight-style CSV with the six aircraft inputs followed by three force columns."""
    ds = Dataset.from_csv(path, n_inputs=len(AERO_INPUTS))
    if ds.input_dim != 6 or ds.output_dim != 3:
        raise ValueError(f"{path}: expected 6 input and 3 target columns")
    return ds


def generate_gramacy_lee(n, seed=None, noise_std=0.0):
    """``n`` uniform draws on [0.5, 2.5] with targets from the full curve."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    x = rng.uniform(*GL_DOMAIN, size=n)
    y = gl_full(x)
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=n)
    return Dataset(x[:, None], y[:, None], "GramacyLee", ("x",), ("f",))


def sample_aero_states(n, rng):
    cols = [rng.uniform(lo, hi, size=n) for lo, hi in AERO_RANGES.values()]
    return np.stack(cols, axis=1)


def generate_synthetic_aero(n, seed=None, perturbation: Optional[AeroPerturbation] = AeroPerturbation(),
                            constants: AeroConstants = AeroConstants()):
    """Uniformly sampled aircraft states with (optionally perturbed) stand-in forces.

    ``perturbation=None`` makes the targets identical to the stand-in
    physics.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    states = sample_aero_states(n, rng)
    forces = np.stack(aero_pipeline(states, constants, perturbation), axis=1)
    return Dataset(states, forces, "SyntheticAero", AERO_INPUTS, AERO_OUTPUTS)


def split(dataset: Dataset, n_train, n_test, seed=None):
    """Seeded shuffle into disjoint train/test sets; stats come from train only."""
    n_train, n_test = int(n_train), int(n_test)
    if n_train < 2 or n_test < 1:
        raise ValueError("need n_train >= 2 and n_test >= 1")
    if n_train + n_test > len(dataset):
        raise ValueError(
            f"requested {n_train + n_test} rows but the dataset has {len(dataset)}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    train = dataset.subset(perm[:n_train]).fit_stats()
    test = dataset.subset(perm[n_train:n_train + n_test]).with_stats(
        train.input_stats, train.output_stats)
    return train, test
