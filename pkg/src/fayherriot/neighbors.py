"""Two-step nearest-neighbor proximity matrices and the (K1, K2) sweep.

Step one keeps the K1 geographically nearest areas; step two keeps the K2
of those closest in an auxiliary variable (altitude, poverty, ...). Every
selected neighbor gets weight 1/K2. Ties are broken by ascending area_id.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import AreaRecord, Dataset
from .errors import ConfigError, DataError
from .parallel import ordered_map
from .spatial import ProximityMatrix, SpatialConfig, estimate_spatial

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088


def _coords(area: AreaRecord):
    if area.longitude is None or area.latitude is None:
        raise DataError(f"area {area.area_id!r} has no coordinates")
    return float(area.longitude), float(area.latitude)


def geo_distance(a: AreaRecord, b: AreaRecord) -> float:
    """Great-circle (haversine) distance in kilometers."""
    lon1, lat1 = _coords(a)
    lon2, lat2 = _coords(b)
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(lon2 - lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(min(1.0, h))))


def distance_matrix(areas: Sequence[AreaRecord]) -> np.ndarray:
    coords = np.array([_coords(a) for a in areas], dtype=float).reshape(-1, 2)
    return kernels.haversine_matrix(coords[:, 0], coords[:, 1], EARTH_RADIUS_KM)


class NeighborIndex:
    """Per-area neighbor orderings shared by every (K1, K2) cell.

    Row ``i`` of ``order`` lists the other areas by increasing distance,
    ties by ascending area_id.
    """

    def __init__(self, areas: Sequence[AreaRecord], distances: np.ndarray | None = None):
        self.areas = list(areas)
        ids = [a.area_id for a in self.areas]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate area_id")
        self.ids = tuple(ids)
        D = len(ids)
        self.id_rank = np.empty(D, dtype=np.int64)
        self.id_rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(D)
        self.dist = distance_matrix(self.areas) if distances is None else np.asarray(distances)
        order = np.empty((D, max(D - 1, 0)), dtype=np.int64)
        for i in range(D):
            idx = np.lexsort((self.id_rank, self.dist[i]))
            order[i] = idx[idx != i]
        self.order = order

    @property
    def D(self) -> int:
        return len(self.ids)

    def candidates(self, i: int, K1: int) -> np.ndarray:
        return self.order[i, :K1]

    def matrix(self, K1: int, K2: int, similarity: str | None = None) -> ProximityMatrix:
        if not (1 <= K2 <= K1):
            raise ConfigError(f"need 1 <= K2 <= K1, got K1={K1}, K2={K2}")
        if K1 >= self.D:
            raise ConfigError(f"K1={K1} needs at least {K1 + 1} areas, have {self.D}")
        D = self.D
        W = np.zeros((D, D))
        lists = []
        refine = similarity is not None and K2 < K1
        values = None
        if refine:
            values = np.array([np.nan if a.similarity(similarity) is None
                               else float(a.similarity(similarity)) for a in self.areas])
        for i in range(D):
            cand = self.candidates(i, K1)
            if refine:
                diff = np.abs(values[cand] - values[i])
                if np.any(np.isnan(diff)):
                    log.warning("area %s: %r missing, using geographic order",
                                self.ids[i], similarity)
                    chosen = cand[:K2]
                else:
                    chosen = cand[np.lexsort((self.id_rank[cand], diff))][:K2]
            else:
                chosen = cand[:K2]
            W[i, chosen] = 1.0 / K2
            lists.append(tuple((self.ids[j], 1.0 / K2) for j in chosen))
        return ProximityMatrix(W, area_ids=self.ids, neighbor_lists=tuple(lists), k1=K1, k2=K2,
                               similarity_variable=similarity if refine else None)


def two_step_neighbors(areas: Sequence[AreaRecord], K1: int, K2: int,
                       similarity: str | None = None) -> ProximityMatrix:
    """Row-standardized proximity matrix from the two-step neighbor rule.

    Parameters
    ----------
    areas : sequence of AreaRecord
        Areas with coordinates; row order of the result follows this order.
    K1 : int
        Geographic nearest neighbors kept in step one (``K1 < len(areas)``).
    K2 : int
        Neighbors kept in step two, ``1 <= K2 <= K1``. ``K2 == K1`` skips
        step two.
    similarity : str, optional
        Auxiliary variable for step two. Areas missing it fall back to
        geographic order with a logged warning.
    """
    if K2 > K1:
        raise ConfigError(f"K2={K2} exceeds K1={K1}")
    if K1 >= len(areas):
        raise ConfigError(f"K1={K1} needs at least {K1 + 1} areas, have {len(areas)}")
    return NeighborIndex(areas).matrix(K1, K2, similarity)


@dataclass(frozen=True)
class Cell:
    sigma_eps2: float
    rho: float
    converged: bool
    message: str = ""


@dataclass
class SweepResult:
    grid: dict
    optimal: tuple[int, int] | None
    similarity_variable: str | None
    failed: list = field(default_factory=list)

    def table(self, value="sigma_eps2"):
        """Rows K1, columns K2 (NaN where not fitted or not converged)."""
        k1s = sorted({k[0] for k in self.grid})
        k2s = sorted({k[1] for k in self.grid})
        out = np.full((len(k1s), len(k2s)), np.nan)
        for (a, b), cell in self.grid.items():
            if cell.converged:
                out[k1s.index(a), k2s.index(b)] = getattr(cell, value)
        return k1s, k2s, out

    @property
    def optimal_cell(self) -> Cell | None:
        return None if self.optimal is None else self.grid[self.optimal]


def _argmin(grid) -> tuple[int, int] | None:
    ok = [(c.sigma_eps2, k) for k, c in grid.items() if c.converged and np.isfinite(c.sigma_eps2)]
    return min(ok)[1] if ok else None


def sensitivity_sweep(dataset: Dataset, areas: Sequence[AreaRecord] | None = None,
                      K1_range: Iterable[int] = range(1, 11),
                      similarity_variables: Sequence[str | None] = ("altitude",),
                      method="reml", config: SpatialConfig | None = None,
                      threads=None) -> dict:
    """Fit the spatial model on every (K1, K2 <= K1) cell.

    Returns a dict mapping each similarity variable to a SweepResult. The
    diagonal cells (K2 = K1) do not depend on the variable and are fitted
    once. ``None`` as a variable means step two is never applied, so only the
    diagonal is fitted for it. The optimum minimizes the estimated
    sigma_eps2 over converged cells (ties: smaller K1, then smaller K2).
    """
    areas = list(dataset.records if areas is None else areas)
    if [a.area_id for a in areas] != dataset.area_ids:
        raise DataError("areas must match the dataset's records in order")
    K1s = sorted(set(int(k) for k in K1_range))
    if not K1s or K1s[0] < 1:
        raise ConfigError("K1 values must be >= 1")
    if K1s[-1] >= dataset.D:
        raise ConfigError(f"K1={K1s[-1]} needs at least {K1s[-1] + 1} areas")
    index = NeighborIndex(areas)
    config = replace(config or SpatialConfig(), warn_negative_rho=False)
    jobs = [(k, k, None) for k in K1s]
    for var in similarity_variables:
        if var is not None:
            jobs += [(k1, k2, var) for k1 in K1s for k2 in range(1, k1)]

    def fit(job):
        k1, k2, var = job
        W = index.matrix(k1, k2, var)
        res = estimate_spatial(dataset, W, method, config)
        return Cell(res.sigma_eps2, res.rho, res.converged, res.message)

    cells = dict(zip(jobs, ordered_map(fit, jobs, threads)))
    out = {}
    for var in similarity_variables:
        grid = {(k, k): cells[(k, k, None)] for k in K1s}
        if var is not None:
            grid.update({(k1, k2): cells[(k1, k2, var)] for k1 in K1s for k2 in range(1, k1)})
        grid = dict(sorted(grid.items()))
        failed = [k for k, c in grid.items() if not c.converged]
        if failed:
            log.warning("sweep %s: %d cells did not converge", var, len(failed))
        out[var] = SweepResult(grid=grid, optimal=_argmin(grid), similarity_variable=var,
                               failed=failed)
    return out
