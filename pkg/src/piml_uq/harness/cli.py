"""Command-line entry point: ``piml-uq <subcommand> [options]``.

Failures exit with status 1 (usage errors 2) and print one JSON object
``{"error": ..., "message": ..., "path": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..serialize import load_model
from .config import STAGE1_OF, VARIANTS, ConfigError, ExperimentSpec, load_config
from .experiment import (ExperimentError, band_grid, compare_baselines, load_manifest,
                         make_dataset, run_experiment, verify_manifest, write_comparison)

log = logging.getLogger("piml_uq")


class CliError(Exception):
    def __init__(self, message, path=None, kind="CliError"):
        super().__init__(message)
        self.path = path
        self.kind = kind


def _spec(args) -> ExperimentSpec:
    spec = load_config(args.config) if args.config else ExperimentSpec()
    if getattr(args, "seed", None) is not None:
        spec = spec.with_seed(args.seed)
    return spec


def _emit(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_generate(args):
    spec = _spec(args)
    if args.samples is not None:
        n = int(args.samples)
        data = replace(spec.data, n_samples=n,
                       n_train=min(spec.data.n_train, n - 1),
                       n_test=min(spec.data.n_test, n - min(spec.data.n_train, n - 1)))
        spec = replace(spec, data=data)
    train, test = make_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = train.to_csv(out / "train.csv") + test.to_csv(out / "test.csv")
    _emit({"files": [str(p) for p in paths], "n_train": len(train), "n_test": len(test)})


def cmd_train(args):
    spec = _spec(args)
    if args.variant not in VARIANTS:
        raise CliError(f"unknown variant {args.variant!r}")
    needed = [args.variant] + ([STAGE1_OF[args.variant]] if args.variant in STAGE1_OF else [])
    spec = replace(spec, variants=tuple(needed))
    manifest = run_experiment(spec, args.out, with_bands=False)
    _emit({"manifest": str(Path(args.out) / "manifest.json"),
           "variants": manifest["variants"]})


def cmd_uq(args):
    spec = _spec(args)
    out = Path(args.out)
    model_path = Path(args.model) if args.model else out / "models" / f"{args.variant}.json"
    if not model_path.with_suffix(".json").is_file():
        raise CliError(f"model not found: {model_path}", str(model_path), "FileNotFoundError")
    model = load_model(model_path)
    if not model.is_bayesian:
        raise CliError("uq needs a Bayesian model (bnn or piml_bnn)", str(model_path))
    if args.grid_points:
        spec = replace(spec, uq=replace(spec.uq, grid_points=args.grid_points))
    _, test = make_dataset(spec)
    from ..uq import uncertainty_band
    seed = spec.seed if args.seed is None else args.seed
    band = uncertainty_band(model, band_grid(spec, test), args.scheme, args.samples, seed)
    # ad-hoc bands live outside the experiment's manifest-tracked files
    path = out / "uq" / f"{model_path.stem}_{args.scheme}_n{args.samples}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    band.to_csv(path, test.input_names, test.output_names)
    excluded = int(np.sum(band.report.excluded_samples))
    _emit({"band": str(path), "scheme": args.scheme, "n_samples": args.samples,
           "excluded": excluded})


def cmd_experiment(args):
    spec = _spec(args)
    manifest = run_experiment(spec, args.out)
    _emit({"manifest": str(Path(args.out) / "manifest.json"), "status": manifest["status"],
           "rmse": {v: i["rmse"] for v, i in manifest["variants"].items()}})


def cmd_compare(args):
    src = args.manifest or args.out
    if not Path(src).exists():
        raise CliError(f"manifest not found: {src}", str(src), "FileNotFoundError")
    manifest, root = load_manifest(src)
    rows = compare_baselines(manifest, root, recompute=args.recompute)
    path = root / "comparison.csv"
    write_comparison(rows, path)
    _emit({"table": str(path), "rows": rows})


def cmd_verify(args):
    src = args.manifest or args.out
    if not Path(src).exists():
        raise CliError(f"manifest not found: {src}", str(src), "FileNotFoundError")
    problems = verify_manifest(src)
    _emit({"ok": not problems, "problems": problems})
    if problems:
        raise CliError(f"{len(problems)} file(s) failed verification", str(src), "VerifyError")


def build_parser():
    p = argparse.ArgumentParser(prog="piml-uq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="runs/latest"):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", default=out_default, help="output directory")

    sp = sub.add_parser("generate", help="write train/test datasets")
    common(sp, "data")
    sp.add_argument("--samples", type=int, help="total samples to draw")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train one variant (and its stage-1 parent)")
    common(sp)
    sp.add_argument("--variant", required=True, choices=VARIANTS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("uq", help="emit an uncertainty band CSV for a trained model")
    common(sp)
    sp.add_argument("--model", help="model sidecar (.json) or blob (.bin)")
    sp.add_argument("--variant", default="piml_bnn", choices=("bnn", "piml_bnn"))
    sp.add_argument("--scheme", default="end_to_end_mc",
                    choices=("end_to_end_mc", "hybrid", "hybrid_linear"))
    sp.add_argument("--samples", type=int, default=20)
    sp.add_argument("--grid-points", type=int)
    sp.set_defaults(func=cmd_uq)

    sp = sub.add_parser("experiment", help="run the full configured study")
    common(sp)
    sp.set_defaults(func=cmd_experiment)

    for name, func, help_ in (("compare", cmd_compare, "tabulate RMSE, time and size per variant"),
                              ("verify", cmd_verify, "re-hash manifest files")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--manifest", help="manifest.json or its directory")
        sp.add_argument("--out", default="runs/latest")
        if name == "compare":
            sp.add_argument("--recompute", action="store_true",
                            help="re-evaluate RMSE from saved models")
        sp.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ConfigError, ExperimentError, FileNotFoundError, ValueError) as exc:
        err = {"error": getattr(exc, "kind", type(exc).__name__), "message": str(exc),
               "path": getattr(exc, "path", None) or getattr(exc, "filename", None)}
        if isinstance(exc, ExperimentError) and exc.manifest_path is not None:
            err["manifest"] = str(exc.manifest_path)
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
