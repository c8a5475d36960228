"""Domain types and the generalized least squares machinery shared by the
basic and the spatial area-level models.

Notation follows the usual area-level conventions: ``D`` areas, ``p``
regressors, direct estimates ``y``, known sampling variances ``var``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import DataError, DomainError, RankDeficientError, SingularCovarianceError

RANK_RTOL = 1e-10


class Method(str, enum.Enum):
    ML = "ML"
    REML = "REML"
    MOMENTS = "Moments"
    FH = "FHIterative"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"ml": cls.ML, "reml": cls.REML, "moments": cls.MOMENTS,
                   "mom": cls.MOMENTS, "fh": cls.FH, "fhiterative": cls.FH}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown variance method {value!r}") from None


@dataclass(frozen=True)
class AreaRecord:
    """One area (district): direct estimate, its design variance, covariates
    and location. ``sample_size == 0`` marks a nonsampled area, whose
    estimate and variance are ``None``."""

    area_id: str
    direct_estimate: float | None
    sampling_variance: float | None
    covariates: tuple[float, ...] = ()
    longitude: float | None = None
    latitude: float | None = None
    altitude: float | None = None
    aux_similarity: Mapping[str, float] = field(default_factory=dict)
    sample_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(c) for c in self.covariates))
        sampled = self.sample_size is None or self.sample_size > 0
        if self.sample_size is not None and self.sample_size < 0:
            raise DataError(f"area {self.area_id}: negative sample size")
        if sampled:
            if self.direct_estimate is None or self.sampling_variance is None:
                raise DataError(f"area {self.area_id}: sampled area without direct estimate")
            if not self.sampling_variance >= 0:
                raise DataError(f"area {self.area_id}: sampling variance must be >= 0")
        elif self.direct_estimate is not None or self.sampling_variance is not None:
            raise DataError(f"area {self.area_id}: nonsampled area carries a direct estimate")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise DataError(f"area {self.area_id}: longitude out of range")
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise DataError(f"area {self.area_id}: latitude out of range")

    @property
    def is_sampled(self) -> bool:
        return self.sample_size is None or self.sample_size > 0

    def similarity(self, name: str) -> float | None:
        if name == "altitude" and self.altitude is not None:
            return self.altitude
        return self.aux_similarity.get(name)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def check_rank(X: np.ndarray) -> None:
    """Raise RankDeficientError unless ``X`` has full column rank, judged by
    pivoted QR with tolerance ``RANK_RTOL`` times the largest pivot."""
    n, p = X.shape
    if n < p:
        raise RankDeficientError(f"design matrix has {n} rows and {p} columns")
    if p == 0:
        return
    r = linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or np.any(diag < RANK_RTOL * diag[0]):
        raise RankDeficientError("design matrix is rank deficient")


@dataclass(frozen=True)
class Dataset:
    """Sampled areas of one fitting group plus the D x p design matrix.

    Immutable after construction; numeric views ``y``, ``var`` and ``X`` are
    read-only arrays.
    """

    records: tuple[AreaRecord, ...]
    design_matrix: np.ndarray
    group_label: str | None = None
    allow_zero_variance: bool = False
    intercept: bool = False

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        X = _readonly(self.design_matrix)
        if X.ndim != 2 or X.shape[0] != len(records):
            raise DataError("design matrix does not match the number of records")
        for r in records:
            if not r.is_sampled:
                raise DataError(f"area {r.area_id} is nonsampled and cannot enter a fit")
        ids = [r.area_id for r in records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate area_id")
        y = _readonly([r.direct_estimate for r in records])
        var = _readonly([r.sampling_variance for r in records])
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise DataError("non-finite direct estimates or covariates")
        if np.any(var == 0) and not self.allow_zero_variance:
            raise DataError("zero sampling variance requires allow_zero_variance=True")
        check_rank(X)
        object.__setattr__(self, "design_matrix", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "var", var)

    @classmethod
    def from_records(cls, records: Sequence[AreaRecord], intercept: bool = True,
                     group_label: str | None = None,
                     allow_zero_variance: bool = False) -> "Dataset":
        records = tuple(records)
        if not records:
            raise DataError("no records")
        widths = {len(r.covariates) for r in records}
        if len(widths) != 1:
            raise DataError("records have differing numbers of covariates")
        X = np.array([r.covariates for r in records], dtype=float).reshape(len(records), -1)
        if intercept:
            X = np.column_stack([np.ones(len(records)), X])
        return cls(records, X, group_label, allow_zero_variance, intercept)

    @classmethod
    def from_arrays(cls, y, sampling_variance, X, area_ids=None, group_label=None,
                    allow_zero_variance=False, **record_fields) -> "Dataset":
        """Build from raw arrays; ``X`` is used as the full design matrix.

        Extra keyword arrays (``longitude``, ``latitude``, ``altitude``,
        ``sample_size``) are distributed over the records.
        """
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        D = len(y)
        if area_ids is None:
            width = max(4, len(str(D)))
            area_ids = [f"A{i:0{width}d}" for i in range(D)]
        var = np.broadcast_to(np.asarray(sampling_variance, dtype=float), (D,))
        records = []
        for i in range(D):
            extra = {k: (None if v is None else v[i]) for k, v in record_fields.items()}
            if extra.get("sample_size") is not None:
                extra["sample_size"] = int(extra["sample_size"])
            records.append(AreaRecord(str(area_ids[i]), float(y[i]), float(var[i]),
                                      tuple(X[i]), **extra))
        return cls(tuple(records), X, group_label, allow_zero_variance)

    @property
    def X(self) -> np.ndarray:
        return self.design_matrix

    @property
    def D(self) -> int:
        return len(self.records)

    @property
    def p(self) -> int:
        return self.design_matrix.shape[1]

    @property
    def area_ids(self) -> list[str]:
        return [r.area_id for r in self.records]

    def with_y(self, y) -> "Dataset":
        """Same areas and design, new direct estimates (used by simulation
        and bootstrap code)."""
        y = np.asarray(y, dtype=float)
        recs = tuple(AreaRecord(r.area_id, float(v), r.sampling_variance, r.covariates,
                                r.longitude, r.latitude, r.altitude, r.aux_similarity,
                                r.sample_size) for r, v in zip(self.records, y))
        return Dataset(recs, self.design_matrix, self.group_label, self.allow_zero_variance,
                       self.intercept)

    def design_row(self, record: AreaRecord) -> np.ndarray:
        """Design-matrix row for an arbitrary (possibly nonsampled) area."""
        row = np.array(record.covariates, dtype=float)
        if self.intercept:
            row = np.concatenate([[1.0], row])
        if row.shape != (self.p,):
            raise DataError(f"area {record.area_id}: covariate count does not match the design")
        return row


@dataclass
class FitResult:
    """Outcome of a variance-component fit.

    Basic model fits set ``sigma_u2``; spatial fits set ``sigma_eps2`` and
    ``rho`` and leave ``sigma_u2`` as None.
    """

    beta: np.ndarray
    beta_covariance: np.ndarray
    method: Method
    log_likelihood: float
    converged: bool
    iterations: int
    sigma_u2: float | None = None
    sigma_eps2: float | None = None
    rho: float | None = None
    message: str = ""

    @property
    def is_spatial(self) -> bool:
        return self.rho is not None

    @property
    def variance(self) -> float:
        return self.sigma_eps2 if self.is_spatial else self.sigma_u2


def assemble_V(dataset: Dataset, sigma_u2: float) -> np.ndarray:
    """Marginal covariance diag(sigma_u2 + var_i) of the basic model."""
    if sigma_u2 < 0:
        raise DomainError("sigma_u2 must be >= 0")
    d = sigma_u2 + dataset.var
    if np.all(d == 0):
        raise SingularCovarianceError("covariance matrix is identically zero")
    return np.diag(d)


def _factor(V):
    try:
        return linalg.cho_factor(V, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance matrix is not positive definite") from exc


def gls_beta(dataset: Dataset, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """GLS coefficients and their covariance (X' V^-1 X)^-1.

    ``V`` may be a full matrix or a 1-d array holding a diagonal.
    """
    X, y = dataset.X, dataset.y
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        if np.any(V <= 0):
            raise SingularCovarianceError("covariance matrix is not positive definite")
        Vi_X = X / V[:, None]
        Vi_y = y / V
    else:
        cf = _factor(V)
        Vi_X = linalg.cho_solve(cf, X, check_finite=False)
        Vi_y = linalg.cho_solve(cf, y, check_finite=False)
    info = X.T @ Vi_X
    try:
        icf = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError as exc:
        raise RankDeficientError("information matrix X'V^-1X is singular") from exc
    beta = linalg.cho_solve(icf, X.T @ Vi_y)
    cov = linalg.cho_solve(icf, np.eye(X.shape[1]))
    return beta, 0.5 * (cov + cov.T)


def ols_beta(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """OLS coefficients and leverages h_i = X_i (X'X)^-1 X_i'."""
    X = dataset.X
    q, r = linalg.qr(X, mode="economic")
    beta = linalg.solve_triangular(r, q.T @ dataset.y)
    h = np.einsum("ij,ij->i", q, q)
    return beta, h
