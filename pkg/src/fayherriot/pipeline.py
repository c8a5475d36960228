"""CSV ingestion, group stratification, CV tables and end-to-end runs.

Input CSV: one row per area with columns ``area_id, y, var_y, n`` and
optionally ``lon, lat, alt``, covariates (``x*`` by default), similarity
columns and a grouping column. Rows with ``n == 0`` are nonsampled: their
``y`` and ``var_y`` cells must be empty.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__, kernels
from .bootstrap import BootstrapConfig, Mode, run_bootstrap
from .core import AreaRecord, Dataset, Method
from .errors import ConfigError, DataError, FayHerriotError
from .mse import mse_datta, mse_prasad_rao, g1_basic, g2_basic_all
from .neighbors import NeighborIndex, sensitivity_sweep
from .parallel import ordered_map
from .predict import DIRECT, EBLUP, SEBLUP, PredictionTable, clamp, direct_table, eblup, seblup
from .spatial import SpatialConfig, SpatialSystem, estimate_spatial
from .variance import VarianceMethod, estimate

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "FAYHERRIOT_OUTPUT_DIR"
PREDICTION_COLUMNS = ("area_id", "n", "direct", "direct_se", "predictor", "method", "mse", "cv")
SIZE_BINS = ((0, 7, "<7"), (7, 11, "7-10"), (11, 21, "11-20"), (21, 51, "21-50"),
             (51, None, ">50"))
CV_BINS = ((0.0, 0.10, "<10%"), (0.10, 0.20, "10-20%"), (0.20, 0.30, "20-30%"),
           (0.30, None, ">30%"))
ALL_LABEL = "All Districts"
DEFAULT_CUTS = (0.30, 0.55)


def fmt(x) -> str:
    """17 significant digits (exact round trip); empty for missing."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        return ""
    return format(x, ".17g")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------- loading

@dataclass(frozen=True)
class Schema:
    area_id: str = "area_id"
    y: str = "y"
    var_y: str = "var_y"
    n: str = "n"
    lon: str = "lon"
    lat: str = "lat"
    alt: str = "alt"
    covariates: tuple[str, ...] | None = None   # None: every column starting with "x"
    similarity: tuple[str, ...] = ()
    group_column: str | None = None
    cuts: tuple[float, ...] = DEFAULT_CUTS
    intercept: bool = True
    allow_zero_variance: bool = False

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ConfigError("cut points must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)


def group_labels(cuts: Sequence[float]) -> list[str]:
    if not cuts:
        return ["all"]
    labels = [f"<{cuts[0]:g}"]
    labels += [f"[{a:g},{b:g})" for a, b in zip(cuts, cuts[1:])]
    labels.append(f">={cuts[-1]:g}")
    return labels


def assign_group(value: float, cuts: Sequence[float]) -> str:
    """Left-closed bins: value c_k falls in the bin starting at c_k."""
    k = int(np.searchsorted(np.asarray(cuts), value, side="right"))
    return group_labels(cuts)[k]


@dataclass
class LoadedData:
    datasets: dict
    nonsampled: dict
    columns: list
    covariates: tuple

    def __iter__(self):
        yield list(self.datasets.values())
        yield [r for recs in self.nonsampled.values() for r in recs]

    @property
    def sampled_count(self) -> int:
        return sum(d.D for d in self.datasets.values())


def _num(row, col, line, required=True):
    raw = (row.get(col) or "").strip()
    if raw == "":
        if required:
            raise DataError(f"missing value in column {col!r}", line)
        return None
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"non-numeric value {raw!r} in column {col!r}", line) from None
    if not np.isfinite(v):
        raise DataError(f"non-finite value in column {col!r}", line)
    return v


def load_dataset(path, schema: Schema | None = None, pooled: bool = False,
                 require_coordinates: bool = False) -> LoadedData:
    """Read and validate an area-level CSV.

    Returns per-group Datasets (one ``"all"`` group when no group column is
    configured or ``pooled`` is set) and the nonsampled areas per group.
    Errors carry the 1-based line number of the offending row.
    """
    schema = schema or Schema()
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames
    if not header:
        raise DataError("no records")
    header = [h.strip() for h in header]
    reader.fieldnames = header
    required = [schema.area_id, schema.y, schema.var_y, schema.n]
    if require_coordinates:
        required += [schema.lon, schema.lat]
    if schema.group_column and not pooled:
        required.append(schema.group_column)
    required += list(schema.similarity)
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    if schema.covariates is None:
        covs = tuple(c for c in header if c.startswith("x"))
    else:
        covs = tuple(schema.covariates)
        absent = [c for c in covs if c not in header]
        if absent:
            raise DataError(f"missing covariate column(s): {', '.join(absent)}")
    has_lon = schema.lon in header and schema.lat in header
    has_alt = schema.alt in header
    grouped = bool(schema.group_column) and not pooled

    sampled, nonsampled = {}, {}
    seen = set()
    for row in reader:
        line = reader.line_num
        if None in row:
            raise DataError("row has more cells than the header", line)
        aid = (row.get(schema.area_id) or "").strip()
        if not aid:
            raise DataError("empty area_id", line)
        if aid in seen:
            raise DataError(f"duplicate area_id {aid!r}", line)
        seen.add(aid)
        n = _num(row, schema.n, line)
        if n < 0 or n != int(n):
            raise DataError(f"sample size must be a nonnegative integer, got {n:g}", line)
        n = int(n)
        if n == 0:
            y = _num(row, schema.y, line, required=False)
            v = _num(row, schema.var_y, line, required=False)
            if y is not None or v is not None:
                raise DataError("nonsampled row (n = 0) must leave y and var_y empty", line)
        else:
            y = _num(row, schema.y, line)
            v = _num(row, schema.var_y, line)
            if v < 0:
                raise DataError(f"negative sampling variance {v:g}", line)
        lon = lat = alt = None
        if has_lon:
            lon = _num(row, schema.lon, line, required=require_coordinates)
            lat = _num(row, schema.lat, line, required=require_coordinates)
        if has_alt:
            alt = _num(row, schema.alt, line, required=False)
        aux = {}
        for c in schema.similarity:
            if c == schema.alt:
                continue
            val = _num(row, c, line, required=False)
            if val is not None:
                aux[c] = val
        x = tuple(_num(row, c, line) for c in covs)
        try:
            rec = AreaRecord(aid, y, v, x, lon, lat, alt, aux, n)
        except DataError as exc:
            raise DataError(str(exc), line) from None
        label = "all"
        if grouped:
            label = assign_group(_num(row, schema.group_column, line), schema.cuts)
        (sampled if n > 0 else nonsampled).setdefault(label, []).append(rec)
    if not sampled and not nonsampled:
        raise DataError("no records")
    order = group_labels(schema.cuts) if grouped else ["all"]
    datasets = {}
    for label in order:
        recs = sampled.get(label)
        if recs:
            datasets[label] = Dataset.from_records(
                recs, intercept=schema.intercept, group_label=label,
                allow_zero_variance=schema.allow_zero_variance)
    return LoadedData(datasets, {k: nonsampled[k] for k in order if k in nonsampled},
                      header, covs)


def write_dataset(path, dataset: Dataset, nonsampled: Sequence[AreaRecord] = (),
                  similarity: Sequence[str] = ()) -> None:
    """Write records in the loader's format (covariates as x1, x2, ...)."""
    recs = list(dataset.records) + list(nonsampled)
    k = len(recs[0].covariates) if recs else 0
    header = ["area_id", "y", "var_y", "n", "lon", "lat", "alt"]
    header += [f"x{j + 1}" for j in range(k)] + list(similarity)
    rows = []
    for r in recs:
        n = r.sample_size if r.sample_size is not None else 1
        rows.append([r.area_id, r.direct_estimate, r.sampling_variance, n, r.longitude,
                     r.latitude, r.altitude, *r.covariates,
                     *[r.aux_similarity.get(s) for s in similarity]])
    write_csv(path, header, rows)


# ---------------------------------------------------------------- CV table

@dataclass
class CVTable:
    methods: list
    size_labels: list
    cv_labels: list
    counts: dict            # (size_label, method) -> list of counts per CV bin
    excluded: dict

    def rows(self):
        for s in self.size_labels + [ALL_LABEL]:
            for m in self.methods:
                c = self.counts[(s, m)]
                yield s, m, c, sum(c)

    def write(self, path) -> None:
        header = ["size_bin", "method", *self.cv_labels, "total"]
        write_csv(path, header, [[s, m, *c, t] for s, m, c, t in self.rows()])


def _bin(value, bins):
    for lo, hi, label in bins:
        if value >= lo and (hi is None or value < hi):
            return label
    return None


def cv_table(predictions: Sequence[PredictionTable], size_bins=SIZE_BINS,
             cv_bins=CV_BINS) -> CVTable:
    """Counts of areas per (sample-size bin, method, CV bin) plus the
    all-areas margin. Areas without an MSE, CV or sample size are excluded
    with a warning."""
    methods, counts, excluded = [], {}, {}
    size_labels = [b[2] for b in size_bins]
    cv_labels = [b[2] for b in cv_bins]
    for table in predictions:
        m = table.name
        if m in methods:
            raise ValueError(f"duplicate method label {m!r}")
        methods.append(m)
        for s in size_labels + [ALL_LABEL]:
            counts[(s, m)] = [0] * len(cv_labels)
        cv = table.cv
        dropped = 0
        for n, c in zip(table.sample_size, cv):
            if n is None or not np.isfinite(c):
                dropped += 1
                continue
            sb = _bin(n, size_bins)
            cb = _bin(c, cv_bins)
            if sb is None or cb is None:
                dropped += 1
                continue
            k = cv_labels.index(cb)
            counts[(sb, m)][k] += 1
            counts[(ALL_LABEL, m)][k] += 1
        if dropped:
            warnings.warn(f"{m}: {dropped} areas without MSE/CV or sample size excluded",
                          stacklevel=2)
        excluded[m] = dropped
    return CVTable(methods, size_labels, cv_labels, counts, excluded)


def read_predictions(path) -> list[PredictionTable]:
    """Read a predictions CSV back into one table per method."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError("no records")
    missing = [c for c in PREDICTION_COLUMNS if c not in rows[0]]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")

    def val(s):
        return float(s) if s.strip() else np.nan

    out = {}
    for r in rows:
        out.setdefault(r["method"], []).append(r)
    tables = []
    for m, rs in out.items():
        n = [int(r["n"]) if r["n"].strip() else None for r in rs]
        direct = np.array([val(r["direct"]) for r in rs])
        se = np.array([val(r["direct_se"]) for r in rs])
        tables.append(PredictionTable(
            area_id=[r["area_id"] for r in rs], sample_size=n, direct=direct,
            direct_var=se * se, predictor=np.array([val(r["predictor"]) for r in rs]),
            method=m, mse=np.array([val(r["mse"]) for r in rs])))
    return tables


# ---------------------------------------------------------------- runs

MSE_CHOICES = ("auto", "pr", "datta", "analytic-spatial", "none")


@dataclass
class RunConfig:
    """Everything a run needs; echoed into the manifest."""

    input: str
    output_dir: str | None = None
    schema: Schema = field(default_factory=Schema)
    model: str = "basic"
    variance_method: str = "reml"
    spatial_method: str = "reml"
    rho_grid: int = 21
    neighbors: tuple | None = None          # (K1, K2, similarity or None)
    sweep: bool = False
    sweep_k1_max: int = 10
    sweep_similarity: tuple = ("altitude",)
    mse: str = "auto"
    bootstrap: str | None = None            # "parametric" | "nonparametric"
    replicates: int = 400
    seed: int = 0
    pooled: bool = False
    clamp: bool = False
    threads: int | None = None
    write_predictions: bool = True

    def __post_init__(self):
        if self.model not in ("basic", "spatial"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.mse not in MSE_CHOICES:
            raise ConfigError(f"unknown MSE method {self.mse!r}")
        if self.mse == "analytic-spatial" and self.model != "spatial":
            raise ConfigError("analytic-spatial MSE needs --spatial")
        if self.bootstrap is not None:
            Mode(self.bootstrap)
            if self.model != "spatial":
                raise ConfigError("bootstrap MSE is implemented for the spatial model")
        Method.parse(self.variance_method)
        if Method.parse(self.spatial_method) not in (Method.ML, Method.REML):
            raise ConfigError("spatial method must be ml or reml")
        if self.neighbors is not None:
            k1, k2 = int(self.neighbors[0]), int(self.neighbors[1])
            if not 1 <= k2 <= k1:
                raise ConfigError("neighbors need 1 <= K2 <= K1")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        d.pop("output_dir")
        d["input"] = os.path.basename(self.input)
        return d


DEFAULT_NEIGHBORS = (5, 5, None)


@dataclass
class GroupOutcome:
    label: str
    tables: list
    mse_rows: list
    sweep: dict
    diagnostics: dict
    converged: bool


@dataclass
class RunOutcome:
    ok: bool
    output_dir: Path
    files: list
    groups: list

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1


def _basic_mse(cfg, dataset, fit):
    # an explicit pr/datta choice warns on a method mismatch; otherwise pick by method
    explicit = cfg.mse in ("pr", "datta")
    choice = cfg.mse if explicit else ("datta" if fit.method is Method.FH else "pr")
    with warnings.catch_warnings():
        if not explicit:
            warnings.simplefilter("ignore")
        if choice == "datta":
            return "datta", mse_datta(dataset, fit)
        return "pr", mse_prasad_rao(dataset, fit)


def _fit_group(cfg: RunConfig, label: str, dataset: Dataset, nonsampled) -> GroupOutcome:
    diag = {"D": dataset.D, "p": dataset.p}
    tables = [direct_table(dataset)]
    mse_rows = []
    sweeps = {}
    ok = True

    fit = estimate(dataset, cfg.variance_method, VarianceMethod(cfg.variance_method))
    diag["basic"] = {"method": fit.method.value, "sigma_u2": fit.sigma_u2,
                     "converged": fit.converged, "iterations": fit.iterations,
                     "log_likelihood": fit.log_likelihood, "beta": list(map(float, fit.beta))}
    ok &= fit.converged
    tab = eblup(dataset, fit, nonsampled)
    if cfg.mse != "none":
        kind, m = _basic_mse(cfg, dataset, fit)
        g1 = g1_basic(fit.sigma_u2, dataset.var)
        g2 = g2_basic_all(dataset, fit.sigma_u2)
        full = np.concatenate([m, np.full(len(nonsampled), np.nan)])
        tab = tab.with_mse(full)
        diag["basic"]["mse"] = kind
        for i, aid in enumerate(dataset.area_ids):
            mse_rows.append([aid, EBLUP, kind, g1[i], g2[i], m[i] - g1[i] - g2[i], m[i]])
    tables.append(tab)

    if cfg.sweep:
        index_areas = dataset.records
        sweeps = sensitivity_sweep(dataset, index_areas, range(1, cfg.sweep_k1_max + 1),
                                   cfg.sweep_similarity, cfg.spatial_method,
                                   SpatialConfig(rho_grid=cfg.rho_grid), threads=1)
        diag["sweep"] = {str(v): {"optimal": list(r.optimal) if r.optimal else None,
                                  "failed": [list(k) for k in r.failed]}
                         for v, r in sweeps.items()}

    if cfg.model == "spatial":
        nb = cfg.neighbors
        if nb is None and sweeps:
            first = sweeps[cfg.sweep_similarity[0]]
            if first.optimal is not None:
                nb = (*first.optimal, cfg.sweep_similarity[0])
        nb = nb or DEFAULT_NEIGHBORS
        K1, K2, sim = int(nb[0]), int(nb[1]), nb[2] if len(nb) > 2 else None
        W = NeighborIndex(dataset.records).matrix(K1, K2, sim)
        sfit = estimate_spatial(dataset, W, cfg.spatial_method, SpatialConfig(rho_grid=cfg.rho_grid))
        diag["spatial"] = {"method": sfit.method.value, "sigma_eps2": sfit.sigma_eps2,
                           "rho": sfit.rho, "converged": sfit.converged,
                           "iterations": sfit.iterations, "log_likelihood": sfit.log_likelihood,
                           "K1": K1, "K2": K2, "similarity": sim, "message": sfit.message}
        ok &= sfit.converged
        if sfit.converged:
            stab = seblup(dataset, W, sfit)
            if cfg.mse != "none":
                system = SpatialSystem(dataset, W, sfit.sigma_eps2, sfit.rho)
                g1, g2 = system.g1(), system.g2()
                g3 = np.full(dataset.D, np.nan)
                m = g1 + g2
                kind = "g1+g2"
                if cfg.bootstrap:
                    bcfg = BootstrapConfig(replicates=cfg.replicates, seed=cfg.seed,
                                           mode=cfg.bootstrap,
                                           estimation_method=cfg.spatial_method,
                                           threads=cfg.threads, rho_grid=cfg.rho_grid)
                    res = run_bootstrap(dataset, W, sfit, bcfg)
                    g3 = res.g3
                    if cfg.mse == "analytic-spatial":
                        m, kind = res.mse_reml, "g1+g2+2g3"
                    else:
                        m, kind = res.mse_combined, "bootstrap-combined"
                    diag["spatial"].update(bootstrap=cfg.bootstrap, replicates=res.replicates,
                                           failures=res.failures, floored=res.floored,
                                           rho_se=res.rho_se)
                stab = stab.with_mse(m)
                diag["spatial"]["mse"] = kind
                for i, aid in enumerate(dataset.area_ids):
                    mse_rows.append([aid, SEBLUP, kind, g1[i], g2[i], g3[i], m[i]])
            tables.append(stab)
    if cfg.clamp:
        tables = [clamp(t) if t.method != DIRECT else t for t in tables]
    return GroupOutcome(label, tables, mse_rows, sweeps, diag, bool(ok))


def _prediction_rows(tables):
    for t in tables:
        cv = t.cv
        mse = t.mse if t.mse is not None else np.full(len(t), np.nan)
        for i in range(len(t)):
            yield [t.area_id[i], t.sample_size[i], t.direct[i], np.sqrt(t.direct_var[i]),
                   t.predictor[i], t.name, mse[i], cv[i]]


def _merge(tables):
    """Concatenate same-method tables across groups."""
    by = {}
    for t in tables:
        by.setdefault(t.name, []).append(t)
    out = []
    for name, ts in by.items():
        mses = [t.mse if t.mse is not None else np.full(len(t), np.nan) for t in ts]
        out.append(PredictionTable(
            area_id=[a for t in ts for a in t.area_id],
            sample_size=[n for t in ts for n in t.sample_size],
            direct=np.concatenate([t.direct for t in ts]),
            direct_var=np.concatenate([t.direct_var for t in ts]),
            predictor=np.concatenate([t.predictor for t in ts]),
            method=ts[0].method, mse=np.concatenate(mses), label=name))
    return out


def output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "fayherriot_output")


def run(cfg: RunConfig) -> RunOutcome:
    """Load, fit every group, and write predictions, MSE, CV-table, plot,
    sweep and manifest files. ``exit_code`` is nonzero unless every group
    fit converged."""
    needs_coords = cfg.model == "spatial" or cfg.sweep
    wanted = list(cfg.sweep_similarity) if cfg.sweep else []
    if cfg.model == "spatial" and cfg.neighbors is not None and len(cfg.neighbors) > 2:
        wanted.append(cfg.neighbors[2])
    wanted = [v for v in wanted if v is not None]
    extra = tuple(v for v in wanted if v != "altitude" and v not in cfg.schema.similarity)
    schema = replace(cfg.schema, similarity=cfg.schema.similarity + extra)
    data = load_dataset(cfg.input, schema, pooled=cfg.pooled, require_coordinates=needs_coords)
    if "altitude" in wanted and schema.alt not in data.columns:
        raise DataError(f"altitude similarity needs a {schema.alt!r} column")
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)

    items = list(data.datasets.items())

    def work(item):
        label, ds = item
        try:
            return _fit_group(cfg, label, ds, data.nonsampled.get(label, []))
        except FayHerriotError as exc:
            log.error("group %s failed: %s", label, exc)
            return GroupOutcome(label, [], [], {}, {"error": str(exc)}, False)

    groups = ordered_map(work, items, cfg.threads)
    files = []
    tables = _merge([t for g in groups for t in g.tables])
    if cfg.write_predictions:
        p = out / "predictions.csv"
        write_csv(p, PREDICTION_COLUMNS, _prediction_rows(tables))
        files.append(p)
        p = out / "plot_long.csv"
        rows = ([a, t.name, v] for t in tables for a, v in zip(t.area_id, t.predictor))
        write_csv(p, ["area_id", "method", "value"], rows)
        files.append(p)
    mse_rows = [[g.label, *r] for g in groups for r in g.mse_rows]
    if mse_rows:
        p = out / "mse.csv"
        write_csv(p, ["group", "area_id", "method", "estimator", "g1", "g2", "g3", "mse"],
                  mse_rows)
        files.append(p)
        with_mse = [t for t in tables if t.mse is not None and np.any(np.isfinite(t.mse))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = cv_table(with_mse)
        p = out / "cv_table.csv"
        table.write(p)
        files.append(p)
    for g in groups:
        for var, res in g.sweep.items():
            files.extend(write_sweep(out, res, g.label))
    ok = all(g.converged for g in groups)
    manifest = {
        "tool": "fayherriot",
        "version": __version__,
        "complete": ok,
        "config": cfg.echo(),
        "input_sha256": hashlib.sha256(Path(cfg.input).read_bytes()).hexdigest(),
        "seed": cfg.seed,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "kernels": kernels.BACKEND},
        "groups": {g.label: {"converged": g.converged, **g.diagnostics} for g in groups},
        "outputs": [f.name for f in files],
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n",
                 encoding="utf-8")
    files.append(p)
    return RunOutcome(ok, out, files, groups)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x)}")


def write_sweep(out: Path, res, group: str = "all") -> list[Path]:
    """Grid (rows K1, columns K2) of sigma_eps2 and rho plus the optimum."""
    tag = "none" if res.similarity_variable is None else res.similarity_variable
    stem = f"sweep_{_safe(group)}_{_safe(tag)}"
    files = []
    for value in ("sigma_eps2", "rho"):
        k1s, k2s, grid = res.table(value)
        p = out / f"{stem}_{value}.csv"
        write_csv(p, ["K1", *[f"K2={k}" for k in k2s]],
                  [[k1, *row] for k1, row in zip(k1s, grid)])
        files.append(p)
    p = out / f"{stem}_optimum.csv"
    cell = res.optimal_cell
    rows = []
    if cell is not None:
        rows.append([group, tag, res.optimal[0], res.optimal[1], cell.sigma_eps2, cell.rho])
    write_csv(p, ["group", "similarity", "K1", "K2", "sigma_eps2", "rho"], rows)
    files.append(p)
    return files


def _safe(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(s))
