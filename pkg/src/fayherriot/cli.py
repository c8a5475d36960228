"""Command-line interface: ``fayherriot {fit,sweep,mse,simulate,cv-table}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FayHerriotError
from .pipeline import (RunConfig, Schema, cv_table, fmt, output_dir, read_predictions, run,
                       write_csv, write_dataset)
from .simulate import Simulator, load_design

log = logging.getLogger("fayherriot")


def _csv_list(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _neighbors(text):
    parts = _csv_list(text)
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("expected K1,K2[,variable]")
    try:
        k1, k2 = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError("K1 and K2 must be integers") from None
    return (k1, k2, parts[2] if len(parts) == 3 else None)


def _cuts(text):
    try:
        return tuple(float(v) for v in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError("cut points must be numbers") from None


def _add_input(p):
    p.add_argument("input", help="area-level CSV")
    p.add_argument("-o", "--output-dir", help="output directory "
                   "(default: $FAYHERRIOT_OUTPUT_DIR or ./fayherriot_output)")
    p.add_argument("--threads", type=int, help="worker threads (default: $FAYHERRIOT_THREADS or 1)")
    p.add_argument("--group-column", help="stratify by this column")
    p.add_argument("--cuts", type=_cuts, default=(0.30, 0.55),
                   help="comma-separated group cut points (default 0.30,0.55)")
    p.add_argument("--pooled", action="store_true", help="ignore the group column")
    p.add_argument("--covariates", type=_csv_list, help="covariate columns (default: x*)")
    p.add_argument("--similarity", type=_csv_list, default=(),
                   help="extra similarity columns to load")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _add_model(p, mse_required=False):
    p.add_argument("--variance-method", default="reml",
                   choices=["ml", "reml", "moments", "fh"])
    p.add_argument("--spatial", action="store_true", help="also fit the spatial (SAR) model")
    p.add_argument("--rho-grid", type=int, default=21)
    p.add_argument("--spatial-method", default="reml", choices=["ml", "reml"])
    p.add_argument("--neighbors", type=_neighbors, help="K1,K2[,similarity variable]")
    choices = ["pr", "datta", "analytic-spatial"]
    if mse_required:
        p.add_argument("--mse", required=True, choices=choices)
    else:
        p.add_argument("--mse", default="auto", choices=choices + ["auto", "none"])
    p.add_argument("--bootstrap", choices=["parametric", "nonparametric"])
    p.add_argument("--replicates", type=int, default=400)
    p.add_argument("--clamp", action="store_true", help="clip predictions to [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fayherriot", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit models and write predictions")
    _add_input(p)
    _add_model(p)

    p = sub.add_parser("mse", help="fit models and write MSE estimates")
    _add_input(p)
    _add_model(p, mse_required=True)

    p = sub.add_parser("sweep", help="(K1, K2) neighbor sensitivity sweep")
    _add_input(p)
    p.add_argument("--k1-max", type=int, default=10)
    p.add_argument("--sweep-similarity", type=_csv_list, default=("altitude",),
                   help="comma-separated similarity variables ('none' for geography only)")
    p.add_argument("--rho-grid", type=int, default=21)
    p.add_argument("--spatial-method", default="reml", choices=["ml", "reml"])

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a design file")
    p.add_argument("config", help="key = value design file")
    p.add_argument("-o", "--output-dir")
    p.add_argument("--replicate", type=int, default=0)

    p = sub.add_parser("cv-table", help="CV distribution by sample size from predictions")
    p.add_argument("predictions", help="predictions CSV written by fit/mse")
    p.add_argument("-o", "--output", help="output CSV (default: <output dir>/cv_table.csv)")
    return parser


def _schema(args) -> Schema:
    return Schema(covariates=args.covariates, similarity=args.similarity,
                  group_column=args.group_column, cuts=args.cuts,
                  intercept=not args.no_intercept)


def _run(args, **kw) -> int:
    cfg = RunConfig(input=args.input, output_dir=args.output_dir, schema=_schema(args),
                    seed=args.seed, pooled=args.pooled, threads=args.threads, **kw)
    outcome = run(cfg)
    for g in outcome.groups:
        if not g.converged:
            print(f"group {g.label}: fit did not converge", file=sys.stderr)
    print(f"wrote {len(outcome.files)} files to {outcome.output_dir}")
    return outcome.exit_code


def _model_kw(args):
    return dict(model="spatial" if args.spatial else "basic",
                variance_method=args.variance_method, spatial_method=args.spatial_method,
                rho_grid=args.rho_grid, neighbors=args.neighbors, mse=args.mse,
                bootstrap=args.bootstrap, replicates=args.replicates, clamp=args.clamp)


def _simulate(args) -> int:
    design, _ = load_design(args.config)
    sample = Simulator(design).draw(args.replicate)
    out = Path(args.output_dir) if args.output_dir else output_dir(RunConfig(input=args.config))
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "dataset.csv", sample.dataset)
    write_csv(out / "truth.csv", ["area_id", "theta", "u"],
              zip(sample.dataset.area_ids, sample.theta, sample.u))
    files = ["dataset.csv", "truth.csv"]
    if sample.W is not None:
        W = sample.W.weights
        rows = ([a, b, W[i, j]] for i, a in enumerate(sample.W.area_ids)
                for j, b in enumerate(sample.W.area_ids) if W[i, j] != 0)
        write_csv(out / "weights.csv", ["area_id", "neighbor_id", "weight"], rows)
        files.append("weights.csv")
    design_echo = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                   for k, v in design.__dict__.items()}
    manifest = {"tool": "fayherriot", "version": __version__, "command": "simulate",
                "design": design_echo, "replicate": args.replicate, "outputs": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(f"wrote {len(files) + 1} files to {out}")
    return 0


def _cv_table(args) -> int:
    tables = read_predictions(args.predictions)
    table = cv_table([t for t in tables if np.any(np.isfinite(t.mse))])
    path = Path(args.output) if args.output else output_dir(
        RunConfig(input=args.predictions)) / "cv_table.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    table.write(path)
    for s, m, counts, total in table.rows():
        print(f"{s:>14} {m:>8} " + " ".join(f"{c:>6}" for c in counts) + f" {total:>6}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("fit", "mse"):
            return _run(args, **_model_kw(args))
        if args.command == "sweep":
            sims = tuple(None if s.lower() == "none" else s for s in args.sweep_similarity)
            return _run(args, sweep=True, sweep_k1_max=args.k1_max, sweep_similarity=sims,
                        spatial_method=args.spatial_method, rho_grid=args.rho_grid,
                        mse="none", write_predictions=False)
        if args.command == "simulate":
            return _simulate(args)
        return _cv_table(args)
    except (FayHerriotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
