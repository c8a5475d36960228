import sys

import numpy as np
import pytest

from fayherriot.core import Dataset


def random_dataset(rng, D=12, p=2, var_range=(0.3, 2.0), sigma_u2=1.0, zero_var=False):
    X = np.column_stack([np.ones(D), rng.standard_normal((D, p - 1))])
    var = rng.uniform(*var_range, size=D)
    if zero_var:
        var[:] = 0.0
    y = X @ rng.standard_normal(p) + rng.standard_normal(D) * np.sqrt(sigma_u2 + var)
    return Dataset.from_arrays(y, var, X, allow_zero_variance=zero_var)


def knn_weights(rng, D, k):
    """Row-standardized k-nearest-neighbor matrix on random planar points."""
    pts = rng.uniform(0, 1, (D, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    W = np.zeros((D, D))
    for i in range(D):
        W[i, np.argsort(d[i])[:k]] = 1.0 / k
    return W


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_area_csv(path, dataset, poverty=None, nonsampled=0, rng=None):
    """Area CSV in the loader's layout with an optional ``poverty`` column
    and ``nonsampled`` extra rows with n = 0."""
    import csv

    from fayherriot.pipeline import fmt

    header = ["area_id", "y", "var_y", "n", "lon", "lat", "alt"]
    k = dataset.X.shape[1] - 1
    header += [f"x{j + 1}" for j in range(k)]
    if poverty is not None:
        header.append("poverty")
    rows = []
    for i, r in enumerate(dataset.records):
        row = [r.area_id, fmt(r.direct_estimate), fmt(r.sampling_variance), r.sample_size,
               fmt(r.longitude), fmt(r.latitude), fmt(r.altitude), *map(fmt, r.covariates)]
        if poverty is not None:
            row.append(fmt(poverty[i]))
        rows.append(row)
    rng = rng or np.random.default_rng(0)
    for j in range(nonsampled):
        row = [f"N{j:03d}", "", "", 0, fmt(rng.uniform(0, 10)), fmt(rng.uniform(0, 10)),
               fmt(rng.uniform(0, 5000)), *map(fmt, rng.standard_normal(k))]
        if poverty is not None:
            row.append(fmt(rng.uniform(0, 1)))
        rows.append(row)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(n))
