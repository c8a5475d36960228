"""EBLUP (basic model) and SEBLUP (spatial model) predictors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import AreaRecord, Dataset, FitResult
from .errors import DomainError
from .spatial import SpatialSystem

DIRECT = "DIRECT"
EBLUP = "EBLUP"
SEBLUP = "SEBLUP"


@dataclass
class PredictionTable:
    """Per-area predictions from one method. ``mse`` stays None until an
    MSE estimator fills it in."""

    area_id: list[str]
    sample_size: list[int | None]
    direct: np.ndarray
    direct_var: np.ndarray
    predictor: np.ndarray
    method: str
    gamma: np.ndarray | None = None
    mse: np.ndarray | None = None
    label: str | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.area_id)

    def with_mse(self, mse) -> "PredictionTable":
        mse = np.asarray(mse, dtype=float)
        if mse.shape != self.predictor.shape:
            raise ValueError("mse length does not match the table")
        return replace(self, mse=mse)

    @property
    def cv(self) -> np.ndarray:
        """sqrt(mse) / predictor; NaN where the predictor is zero or the mse
        is unknown."""
        if self.mse is None:
            return np.full(len(self), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            cv = np.sqrt(self.mse) / np.abs(self.predictor)
        cv[self.predictor == 0] = np.nan
        return cv

    @property
    def name(self) -> str:
        return self.label or self.method


def gamma(sigma_u2, sigma_i2):
    """Shrinkage weight sigma_u2 / (sigma_u2 + sigma_i2) on the direct
    estimate. Works elementwise on arrays."""
    su = np.asarray(sigma_u2, dtype=float)
    si = np.asarray(sigma_i2, dtype=float)
    if np.any(su < 0) or np.any(si < 0):
        raise DomainError("variances must be >= 0")
    total = su + si
    if np.any(total == 0):
        raise DomainError("gamma undefined when both variances are zero")
    out = su / total
    return float(out) if out.ndim == 0 else out


def direct_table(dataset: Dataset) -> PredictionTable:
    return PredictionTable(
        area_id=dataset.area_ids,
        sample_size=[r.sample_size for r in dataset.records],
        direct=dataset.y.copy(), direct_var=dataset.var.copy(),
        predictor=dataset.y.copy(), method=DIRECT, mse=dataset.var.copy())


def eblup(dataset: Dataset, fit: FitResult,
          nonsampled: Sequence[AreaRecord] = ()) -> PredictionTable:
    """Convex combination gamma_i y_i + (1 - gamma_i) X_i beta per sampled
    area; synthetic X_i beta (gamma = 0) for ``nonsampled`` areas."""
    s = fit.sigma_u2
    if s is None:
        raise ValueError("eblup needs a basic-model fit")
    beta = np.asarray(fit.beta)
    g = gamma(s, dataset.var) * np.ones(dataset.D)
    synth = dataset.X @ beta
    pred = g * dataset.y + (1.0 - g) * synth
    ids = dataset.area_ids
    n = [r.sample_size for r in dataset.records]
    direct = dataset.y.copy()
    dvar = dataset.var.copy()
    if nonsampled:
        rows = np.array([dataset.design_row(r) for r in nonsampled]).reshape(len(nonsampled), -1)
        ids = ids + [r.area_id for r in nonsampled]
        n = n + [0 if r.sample_size is None else r.sample_size for r in nonsampled]
        direct = np.concatenate([direct, np.full(len(nonsampled), np.nan)])
        dvar = np.concatenate([dvar, np.full(len(nonsampled), np.nan)])
        pred = np.concatenate([pred, rows @ beta])
        g = np.concatenate([g, np.zeros(len(nonsampled))])
    return PredictionTable(area_id=ids, sample_size=n, direct=direct, direct_var=dvar,
                           predictor=pred, method=EBLUP, gamma=g)


def seblup(dataset: Dataset, W, fit: FitResult) -> PredictionTable:
    """X_i beta(phi) + b_i' Omega G^-1 (y - X beta(phi)) at the fitted phi;
    sampled areas only."""
    if not fit.is_spatial:
        raise ValueError("seblup needs a spatial fit")
    system = SpatialSystem(dataset, W, fit.sigma_eps2, fit.rho)
    return PredictionTable(
        area_id=dataset.area_ids, sample_size=[r.sample_size for r in dataset.records],
        direct=dataset.y.copy(), direct_var=dataset.var.copy(), predictor=system.theta,
        method=SEBLUP, extra={"u_hat": system.u_hat})


def clamp(table: PredictionTable, lo=0.0, hi=1.0) -> PredictionTable:
    """Reporting option for proportions: clip predictions to [lo, hi]."""
    return replace(table, predictor=np.clip(table.predictor, lo, hi))

