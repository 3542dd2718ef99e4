"""Experiment configuration: an INI-style key/value tree with strict keys.

Sections and keys (all optional unless noted)::

    [experiment]   case_study (gramacy_lee | fixed_wing), variants, seed
    [data]         n_samples, n_train, n_test, noise_std, perturbation, csv
    [network]      hidden_layers, hidden_units, transfer
    [stage1]       epochs, learning_rate, batch_size
    [stage2]       epochs, learning_rate, batch_size, lambda_elbo,
                   observation_noise, n_weight_samples, freeze_hidden,
                   per_weight_prior
    [stage1.<variant>] / [stage2.<variant>]   per-variant overrides
    [uq]           schemes, n_samples, grid_points, eval_samples
    [aero]         any AeroConstants field

``batch_size = full`` selects full-batch steps.  Lists are comma separated.
Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from ..physics import AeroConstants
from ..train import TrainConfig
from ..uq import BAND_SCHEMES

CASE_STUDIES = ("gramacy_lee", "fixed_wing")
VARIANTS = ("ann", "piml_ann", "bnn", "piml_bnn")
STAGE1_OF = {"bnn": "ann", "piml_bnn": "piml_ann"}


class ConfigError(ValueError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _batch(v):
    s = str(v).strip().lower()
    return None if s in ("full", "none", "") else int(s)


def _list(v):
    return tuple(p.strip() for p in str(v).split(",") if p.strip())


_STAGE_KEYS = {
    "epochs": int,
    "learning_rate": float,
    "batch_size": _batch,
    "lambda_elbo": float,
    "observation_noise": float,
    "n_weight_samples": int,
    "freeze_hidden": _bool,
    "per_weight_prior": _bool,
}

SCHEMA = {
    "experiment": {"case_study": str, "variants": _list, "seed": int},
    "data": {"n_samples": int, "n_train": int, "n_test": int, "noise_std": float,
             "perturbation": _bool, "csv": str},
    "network": {"hidden_layers": int, "hidden_units": int, "transfer": str},
    "stage1": {k: _STAGE_KEYS[k] for k in ("epochs", "learning_rate", "batch_size")},
    "stage2": dict(_STAGE_KEYS),
    "uq": {"schemes": _list, "n_samples": int, "grid_points": int, "eval_samples": int},
    "aero": {f: float for f in AeroConstants.__dataclass_fields__},
}


@dataclass
class DataSpec:
    n_samples: int = 1000
    n_train: int = 900
    n_test: int = 100
    noise_std: float = 0.0
    perturbation: bool = True
    csv: Optional[str] = None


@dataclass
class NetworkSpec:
    hidden_layers: int = 5
    hidden_units: int = 200
    transfer: str = "residual"


@dataclass
class UqSpec:
    schemes: Tuple[str, ...] = ("end_to_end_mc", "hybrid")
    n_samples: int = 20
    grid_points: int = 200
    eval_samples: int = 20


@dataclass
class ExperimentSpec:
    case_study: str = "gramacy_lee"
    variants: Tuple[str, ...] = VARIANTS
    seed: int = 0
    data: DataSpec = field(default_factory=DataSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    stage1: Dict[str, TrainConfig] = field(default_factory=dict)
    stage2: Dict[str, TrainConfig] = field(default_factory=dict)
    uq: UqSpec = field(default_factory=UqSpec)
    aero: AeroConstants = field(default_factory=AeroConstants)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.case_study not in CASE_STUDIES:
            raise ConfigError(f"unknown case_study {self.case_study!r}")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown variants {sorted(unknown)}")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        for v in self.variants:
            dep = STAGE1_OF.get(v)
            if dep is not None and dep not in self.variants:
                raise ConfigError(f"variant {v!r} needs its stage-1 variant {dep!r}")
        for s in self.uq.schemes:
            if s not in BAND_SCHEMES:
                raise ConfigError(f"unknown uq scheme {s!r}")
        if self.network.transfer not in ("residual", "direct"):
            raise ConfigError(f"unknown transfer {self.network.transfer!r}")
        if self.data.n_train + self.data.n_test > self.data.n_samples:
            raise ConfigError("n_train + n_test exceeds n_samples")

    def ordered_variants(self):
        """Variants in dependency order (stage-1 models before their Bayesian twins)."""
        return [v for v in VARIANTS if v in self.variants]

    def stage1_config(self, variant):
        return self.stage1.get(variant) or self.stage1.get("*") or TrainConfig()

    def stage2_config(self, variant):
        return (self.stage2.get(variant) or self.stage2.get("*")
                or TrainConfig(stage="bayesian", learning_rate=1e-3))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {
            "case_study": self.case_study,
            "variants": list(self.variants),
            "seed": self.seed,
            "data": asdict(self.data),
            "network": asdict(self.network),
            "stage1": {k: v.to_dict() for k, v in sorted(self.stage1.items())},
            "stage2": {k: v.to_dict() for k, v in sorted(self.stage2.items())},
            "uq": {**asdict(self.uq), "schemes": list(self.uq.schemes)},
            "aero": self.aero.to_dict(),
        }


def _parse_section(parser, section, schema, path):
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", path)
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", path) from exc
    return out


def parse_config(text, path=None) -> ExperimentSpec:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(str(exc), path) from exc

    values = {}
    overrides = {"stage1": {}, "stage2": {}}
    for section in parser.sections():
        base, _, variant = section.partition(".")
        if variant:
            if base not in overrides or variant not in VARIANTS:
                raise ConfigError(f"unknown section [{section}]", path)
            overrides[base][variant] = _parse_section(parser, section, SCHEMA[base], path)
        elif section in SCHEMA:
            values[section] = _parse_section(parser, section, SCHEMA[section], path)
        else:
            raise ConfigError(f"unknown section [{section}]", path)

    exp = values.get("experiment", {})
    seed = exp.get("seed", 0)
    try:
        stage1, stage2 = {}, {}
        base1 = values.get("stage1", {})
        base2 = values.get("stage2", {})
        for v in VARIANTS:
            s1 = {**base1, **overrides["stage1"].get(v, {})}
            stage1[v] = TrainConfig(stage="deterministic", seed=seed, **s1)
            s2 = {"learning_rate": 1e-3, **base2, **overrides["stage2"].get(v, {})}
            stage2[v] = TrainConfig(stage="bayesian", seed=seed, **s2)
        spec = ExperimentSpec(
            case_study=exp.get("case_study", "gramacy_lee"),
            variants=exp.get("variants", VARIANTS),
            seed=seed,
            data=DataSpec(**values.get("data", {})),
            network=NetworkSpec(**values.get("network", {})),
            stage1=stage1,
            stage2=stage2,
            uq=UqSpec(**values.get("uq", {})),
            aero=AeroConstants(**values.get("aero", {})),
        )
    except ConfigError as exc:
        exc.path = exc.path or (None if path is None else str(path))
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc
    return spec


def load_config(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path)
    return parse_config(path.read_text(encoding="utf-8"), path)
