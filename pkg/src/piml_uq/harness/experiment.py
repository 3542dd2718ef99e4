"""End-to-end study runner: data -> stage 1 -> promotion -> stage 2 -> RMSE -> bands."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import (Dataset, generate_gramacy_lee, generate_synthetic_aero,
                    load_external_aero_csv, split)
from ..physics import AeroPerturbation, FixedWingForces, GramacyLeePartial
from ..piml import make_ann, make_piml
from ..seeding import derive_seed
from ..serialize import load_model, save_model, sha256_file
from ..train import evaluate_rmse, predictive_mean, promote_to_bayesian, train_stage1, train_stage2
from ..uq import uncertainty_band
from .config import STAGE1_OF, ExperimentSpec

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_COLUMNS = ("wall_ms",)


class ExperimentError(RuntimeError):
    def __init__(self, message, manifest_path=None):
        super().__init__(message)
        self.manifest_path = manifest_path


def build_id():
    """Content hash of the package sources, a stand-in for a VCS revision."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def numeric_digest(path):
    """SHA-256 of a file with timing columns removed from headered CSVs."""
    path = Path(path)
    if path.suffix != ".csv":
        return sha256_file(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return sha256_file(path)
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([row[i] for i in keep])
    return hashlib.sha256(buf.getvalue().encode("utf-8")).hexdigest()


def make_dataset(spec: ExperimentSpec):
    d = spec.data
    seed = derive_seed(spec.seed, "data")
    if spec.case_study == "gramacy_lee":
        full = generate_gramacy_lee(d.n_samples, seed, d.noise_std)
    elif d.csv:
        full = load_external_aero_csv(d.csv)
    else:
        pert = AeroPerturbation() if d.perturbation else None
        full = generate_synthetic_aero(d.n_samples, seed, pert, spec.aero)
    return split(full, d.n_train, d.n_test, derive_seed(spec.seed, "split"))


def make_physics(spec: ExperimentSpec):
    if spec.case_study == "gramacy_lee":
        return GramacyLeePartial()
    return FixedWingForces(spec.aero)


def build_variant(spec: ExperimentSpec, variant, train: Dataset):
    """Untrained stage-1 model for ``ann`` or ``piml_ann``."""
    net = spec.network
    init_seed = derive_seed(spec.seed, f"init/{variant}")
    if variant == "ann":
        return make_ann(train.input_stats, train.output_stats, net.hidden_layers,
                        net.hidden_units, init_seed)
    return make_piml(make_physics(spec), train.input_stats, train.output_stats,
                     net.hidden_layers, net.hidden_units, init_seed, net.transfer)


def band_grid(spec: ExperimentSpec, test: Dataset):
    if spec.case_study == "gramacy_lee":
        return np.linspace(0.5, 2.5, spec.uq.grid_points)[:, None]
    return test.inputs


class _Run:
    def __init__(self, spec: ExperimentSpec, out_dir):
        self.spec = spec
        self.out = Path(out_dir)
        self.files = []
        self.variants = {}
        self.seeds = {"master": spec.seed}

    def path(self, rel):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, *paths):
        for p in paths:
            self.files.append(Path(p))

    def manifest(self, status, failure=None):
        entries = []
        for p in sorted(set(self.files)):
            entries.append({
                "path": p.relative_to(self.out).as_posix(),
                "sha256": sha256_file(p),
                "numeric_sha256": numeric_digest(p),
            })
        return {
            "schema": 1,
            "build": build_id(),
            "status": status,
            "failure": failure,
            "config": self.spec.to_dict(),
            "seeds": self.seeds,
            "variants": self.variants,
            "files": entries,
        }


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(v):
    return repr(float(v))


def run_experiment(spec: ExperimentSpec, out_dir, with_bands=True):
    """Run the configured study and write ``manifest.json`` under ``out_dir``.

    On failure the manifest is still written with ``status = "failed"`` and
    the error context, then :class:`ExperimentError` is raised.
    """
    run = _Run(spec, out_dir)
    run.out.mkdir(parents=True, exist_ok=True)
    manifest_path = run.out / MANIFEST_NAME
    stage = "data"
    try:
        train, test = make_dataset(spec)
        run.seeds["data"] = derive_seed(spec.seed, "data")
        run.seeds["split"] = derive_seed(spec.seed, "split")
        run.record(*train.to_csv(run.path("data/train.csv")))
        run.record(*test.to_csv(run.path("data/test.csv")))

        trained = {}
        rmse_rows, err_header = [], None
        for variant in spec.ordered_variants():
            stage = f"train/{variant}"
            info = {"stage": 2 if variant in STAGE1_OF else 1}
            start = time.monotonic()
            if variant in STAGE1_OF:
                parent = STAGE1_OF[variant]
                # the Bayesian stage starts from the saved stage-1 artifact
                base = load_model(run.out / "models" / f"{parent}.json")
                cfg = spec.stage2_config(variant)
                cfg = replace(cfg, seed=derive_seed(spec.seed, f"stage2/{variant}"))
                model = promote_to_bayesian(base, cfg.per_weight_prior)
                model, hist = train_stage2(model, train, cfg, test)
                info["parent"] = parent
            else:
                cfg = spec.stage1_config(variant)
                cfg = replace(cfg, seed=derive_seed(spec.seed, f"stage1/{variant}"))
                model = build_variant(spec, variant, train)
                model, hist = train_stage1(model, train, cfg, test)
            info["train_wall_s"] = time.monotonic() - start
            info["train_config"] = cfg.to_dict()
            info["n_params"] = model.n_params
            run.seeds[variant] = cfg.seed
            trained[variant] = model
            run.record(*save_model(model, run.path(f"models/{variant}"), seed=cfg.seed,
                                   extra={"variant": variant}))
            hp = run.path(f"history/{variant}.csv")
            hist.to_csv(hp)
            run.record(hp)

            stage = f"evaluate/{variant}"
            eval_seed = derive_seed(spec.seed, f"eval/{variant}")
            per_out, total = evaluate_rmse(model, test, spec.uq.eval_samples, eval_seed)
            info["rmse"] = {**{n: float(r) for n, r in zip(test.output_names, per_out)},
                            "total": total}
            info["eval"] = {"n_mc": spec.uq.eval_samples, "seed": eval_seed}
            for n, r in zip(test.output_names, per_out):
                rmse_rows.append([variant, n, _fmt(r)])
            rmse_rows.append([variant, "total", _fmt(total)])
            pred = predictive_mean(model, test.inputs, spec.uq.eval_samples, eval_seed)
            err = np.abs(pred - test.targets)
            ep = run.path(f"errors/{variant}.csv")
            _write_rows(ep, list(test.input_names) + [f"abs_err_{n}" for n in test.output_names],
                        [[_fmt(v) for v in row] for row in np.hstack([test.inputs, err])])
            run.record(ep)

            if with_bands and model.is_bayesian:
                grid = band_grid(spec, test)
                for scheme in spec.uq.schemes:
                    stage = f"uq/{variant}/{scheme}"
                    band_seed = derive_seed(spec.seed, f"uq/{variant}/{scheme}")
                    band = uncertainty_band(model, grid, scheme, spec.uq.n_samples, band_seed)
                    bp = run.path(f"bands/{variant}_{scheme}.csv")
                    band.to_csv(bp, test.input_names, test.output_names)
                    run.record(bp)
            run.variants[variant] = info

        rp = run.path("rmse.csv")
        _write_rows(rp, ["variant", "output", "rmse"], rmse_rows)
        run.record(rp)
    except Exception as exc:  # recorded in the manifest, then re-raised
        failure = {"stage": stage, "error": type(exc).__name__, "message": str(exc),
                   "traceback": traceback.format_exc(limit=5)}
        diagnostics = getattr(exc, "diagnostics", None)
        if diagnostics:
            failure["diagnostics"] = {k: (float(v) if isinstance(v, (int, float, np.floating)) else str(v))
                                      for k, v in diagnostics.items()}
        manifest = run.manifest("failed", failure)
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        raise ExperimentError(f"experiment failed at {stage}: {exc}", manifest_path) from exc

    manifest = run.manifest("complete")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    log.info("experiment complete: %s", manifest_path)
    return manifest


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text(encoding="utf-8")), path.parent


def verify_manifest(path):
    """Re-hash every listed file; returns a list of mismatch descriptions."""
    manifest, root = load_manifest(path)
    problems = []
    for entry in manifest["files"]:
        p = root / entry["path"]
        if not p.is_file():
            problems.append(f"missing: {entry['path']}")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"hash mismatch: {entry['path']}")
    return problems


def numeric_fingerprint(manifest):
    """Mapping path -> numeric hash, the determinism-relevant part of a manifest."""
    return {e["path"]: e["numeric_sha256"] for e in manifest["files"]}


def compare_baselines(manifest, root=None, recompute=False):
    """Per-variant RMSE, training time and parameter counts.

    With ``recompute=True`` (requires ``root``) the RMSE is re-evaluated from
    the saved model artifacts instead of read from the manifest.
    """
    variants = manifest.get("variants", {})
    if len(variants) < 2:
        raise ValueError("comparison needs at least two trained variants")
    rows = []
    for name, info in variants.items():
        rmse = dict(info["rmse"])
        if recompute:
            root = Path(root)
            model = load_model(root / "models" / f"{name}.json")
            test = Dataset.from_csv(root / "data" / "test.csv")
            per_out, total = evaluate_rmse(model, test, info["eval"]["n_mc"],
                                           info["eval"]["seed"])
            rmse = {**{n: float(r) for n, r in zip(test.output_names, per_out)},
                    "total": total}
        rows.append({"variant": name, **{f"rmse_{k}": v for k, v in rmse.items()},
                     "train_time_min": info["train_wall_s"] / 60.0,
                     "n_params": info["n_params"]})
    return rows


def write_comparison(rows, path):
    header = list(rows[0].keys())
    _write_rows(path, header, [[r[k] for k in header] for r in rows])
