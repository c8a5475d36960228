"""Synthetic Fay-Herriot data with known truth, for Monte-Carlo checks.

The fixed part of a design (covariates, coordinates, sampling variances,
sample sizes and the proximity matrix) is drawn once from ``seed``. Random
effects and sampling errors of replicate ``r`` come from their own stream
``(seed, r)``, so replicates can be generated in any order or in parallel.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .core import AreaRecord, Dataset, Method
from .errors import ConfigError, DomainError, FayHerriotError
from .neighbors import two_step_neighbors
from .parallel import ordered_map
from .spatial import ProximityMatrix, rho_validity_interval

VARIANCE_LAWS = ("constant", "uniform", "five", "inverse_n")
ERROR_LAWS = ("normal", "exponential")
_FIXED_STREAM = 0x5EED
_REPLICATE_STREAM = 1


@dataclass(frozen=True)
class SimDesign:
    """Simulation design. ``p`` counts the intercept; the remaining p - 1
    covariates are standard normal. ``variance_params`` depends on the law:
    ``(s,)`` constant, ``(lo, hi)`` uniform, five values for ``five`` (one
    per equal-size group) and ``(c,)`` for ``inverse_n`` (sigma_i^2 = c/n_i).
    """

    D: int = 100
    p: int = 2
    beta: tuple[float, ...] | None = None
    model: str = "basic"
    sigma_u2: float = 1.0
    sigma_eps2: float = 1.0
    rho: float = 0.0
    variance_law: str = "constant"
    variance_params: tuple[float, ...] = (1.0,)
    lon_range: tuple[float, float] = (0.0, 10.0)
    lat_range: tuple[float, float] = (0.0, 10.0)
    altitude_range: tuple[float, float] = (0.0, 5000.0)
    sample_size_range: tuple[int, int] = (2, 80)
    K1: int = 4
    K2: int = 4
    similarity: str | None = None
    weights: np.ndarray | None = None
    error_law: str = "normal"
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("basic", "spatial"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.variance_law not in VARIANCE_LAWS:
            raise ConfigError(f"unknown variance law {self.variance_law!r}")
        if self.error_law not in ERROR_LAWS:
            raise ConfigError(f"unknown error law {self.error_law!r}")
        if self.p < 1 or self.D <= self.p:
            raise ConfigError("need D > p >= 1")
        if self.beta is not None and len(self.beta) != self.p:
            raise ConfigError("beta must have p entries")
        if self.sigma_u2 < 0 or self.sigma_eps2 < 0:
            raise ConfigError("variances must be >= 0")
        object.__setattr__(self, "variance_params", tuple(float(v) for v in self.variance_params))
        if self.variance_law == "five" and len(self.variance_params) != 5:
            raise ConfigError("the 'five' variance law takes five values")
        if self.variance_law == "uniform" and len(self.variance_params) != 2:
            raise ConfigError("the uniform variance law takes (lo, hi)")

    @property
    def true_beta(self) -> np.ndarray:
        if self.beta is not None:
            return np.asarray(self.beta, dtype=float)
        return np.concatenate([[1.0], np.full(self.p - 1, 0.5)])

    def replace(self, **changes) -> "SimDesign":
        return dataclasses.replace(self, **changes)


@dataclass
class SimSample:
    dataset: Dataset
    theta: np.ndarray
    u: np.ndarray
    W: ProximityMatrix | None
    replicate: int


def _errors(rng, law, n):
    if law == "normal":
        return rng.standard_normal(n)
    return rng.standard_exponential(n) - 1.0


class Simulator:
    """Holds the fixed part of a design; ``draw(r)`` returns replicate r."""

    def __init__(self, design: SimDesign):
        self.design = d = design
        rng = np.random.default_rng([d.seed, _FIXED_STREAM])
        D = d.D
        self.X = np.column_stack([np.ones(D), rng.standard_normal((D, d.p - 1))])
        lon = rng.uniform(*d.lon_range, size=D)
        lat = rng.uniform(*d.lat_range, size=D)
        alt = rng.uniform(*d.altitude_range, size=D)
        lo_n, hi_n = d.sample_size_range
        n = rng.integers(lo_n, hi_n + 1, size=D)
        self.var = self._variances(rng, n)
        self.n = n
        width = max(4, len(str(D)))
        self.records = [AreaRecord(f"A{i:0{width}d}", 0.0, float(self.var[i]),
                                   tuple(self.X[i, 1:]), float(lon[i]), float(lat[i]),
                                   float(alt[i]), sample_size=int(n[i])) for i in range(D)]
        self.W = None
        self._lu = None
        if d.model == "spatial":
            if d.weights is not None:
                self.W = ProximityMatrix(np.asarray(d.weights, dtype=float),
                                         area_ids=tuple(r.area_id for r in self.records))
            else:
                self.W = two_step_neighbors(self.records, d.K1, d.K2, d.similarity)
            lo, hi = rho_validity_interval(self.W)
            if not lo < d.rho < hi:
                raise DomainError(f"rho={d.rho} outside ({lo:.4g}, {hi:.4g}) for this W")
            self._lu = linalg.lu_factor(np.eye(D) - d.rho * self.W.weights)
        self.mean = self.X @ d.true_beta
        self.sd = np.sqrt(self.var)

    def _variances(self, rng, n):
        d = self.design
        D = d.D
        pars = d.variance_params
        if d.variance_law == "constant":
            return np.full(D, pars[0])
        if d.variance_law == "uniform":
            return rng.uniform(pars[0], pars[1], size=D)
        if d.variance_law == "five":
            return np.asarray(pars)[np.arange(D) * 5 // D]
        return pars[0] / n

    def effects(self, replicate: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Random effects u and sampling errors e of one replicate."""
        d = self.design
        rng = np.random.default_rng([d.seed, _REPLICATE_STREAM, replicate])
        z1 = _errors(rng, d.error_law, d.D)
        z2 = _errors(rng, d.error_law, d.D)
        if d.model == "spatial":
            u = linalg.lu_solve(self._lu, np.sqrt(d.sigma_eps2) * z1)
        else:
            u = np.sqrt(d.sigma_u2) * z1
        return u, self.sd * z2

    def draw(self, replicate: int = 0) -> SimSample:
        u, e = self.effects(replicate)
        theta = self.mean + u
        y = theta + e
        recs = [dataclasses.replace(r, direct_estimate=float(v)) for r, v in zip(self.records, y)]
        ds = Dataset.from_records(recs, intercept=True,
                                  allow_zero_variance=bool(np.any(self.var == 0)))
        return SimSample(ds, theta, u, self.W, replicate)


def generate(design: SimDesign, replicate: int = 0) -> SimSample:
    """One replicate of ``design``: dataset plus the hidden theta and u."""
    return Simulator(design).draw(replicate)


def _estimator(kind_or_fn):
    """Callable(sample) -> predictions from a string such as
    ``"direct"``, ``"eblup:reml"`` or ``"seblup:reml"``."""
    if callable(kind_or_fn):
        return kind_or_fn
    from .predict import eblup, seblup
    from .spatial import SpatialConfig, estimate_spatial
    from .variance import estimate

    kind, _, method = str(kind_or_fn).partition(":")
    kind = kind.lower()
    method = Method.parse(method or "reml")
    if kind == "direct":
        return lambda s: s.dataset.y
    if kind == "eblup":
        def f(s):
            fit = estimate(s.dataset, method)
            if not fit.converged:
                raise FayHerriotError("variance fit did not converge")
            return eblup(s.dataset, fit).predictor
        return f
    if kind == "seblup":
        quiet = SpatialConfig(warn_negative_rho=False)

        def g(s):
            if s.W is None:
                raise ConfigError("seblup needs a spatial design")
            fit = estimate_spatial(s.dataset, s.W, method, quiet)
            if not fit.converged:
                raise FayHerriotError("spatial fit did not converge")
            return seblup(s.dataset, s.W, fit).predictor
        return g
    raise ConfigError(f"unknown estimator {kind_or_fn!r}")


def monte_carlo(design: SimDesign, fn: Callable, replicates: int, threads=None,
                start: int = 0) -> list:
    """``[fn(sample_r) for r in range(start, start + replicates)]``; the
    fixed part of the design is built once."""
    sim = Simulator(design)
    return ordered_map(lambda r: fn(sim.draw(r)), range(start, start + replicates), threads)


@dataclass
class EmpiricalMSE:
    mse: np.ndarray
    replicates: int
    failures: int


def empirical_mse(design: SimDesign, estimator, replicates: int = 500, threads=None,
                  allow_small: bool = False) -> EmpiricalMSE:
    """Per-area mean of (theta_hat - theta)^2 over Monte-Carlo replicates.

    Replicates whose estimator raises a FayHerriotError are dropped; more
    than 10% failures is an error.
    """
    if replicates < 100 and not allow_small:
        raise ConfigError("empirical MSE needs at least 100 replicates")
    est = _estimator(estimator)

    def one(sample):
        try:
            return (est(sample) - sample.theta) ** 2
        except (FayHerriotError, np.linalg.LinAlgError):
            return None

    out = monte_carlo(design, one, replicates, threads)
    ok = [e for e in out if e is not None]
    failures = replicates - len(ok)
    if failures > 0.10 * replicates:
        raise FayHerriotError(f"{failures} of {replicates} replicates failed")
    return EmpiricalMSE(np.mean(ok, axis=0), len(ok), failures)


_TUPLE_FIELDS = {"beta", "variance_params", "lon_range", "lat_range", "altitude_range",
                 "sample_size_range"}
_INT_FIELDS = {"D", "p", "K1", "K2", "seed"}
_FLOAT_FIELDS = {"sigma_u2", "sigma_eps2", "rho"}


def parse_design(text: str) -> tuple[SimDesign, dict]:
    """Parse ``key = value`` lines into a SimDesign.

    Keys that are not design fields (for instance ``replicates``) are
    returned in the second element. Lists are comma separated.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[design]\n" + text)
    fields = {f.name for f in dataclasses.fields(SimDesign)} - {"weights"}
    kw, extra = {}, {}
    for key, raw in cp["design"].items():
        value = raw.strip()
        if key not in fields:
            extra[key] = value
            continue
        try:
            if key in _TUPLE_FIELDS:
                parts = [v for v in value.replace(" ", "").split(",") if v]
                conv = int if key == "sample_size_range" else float
                kw[key] = tuple(conv(v) for v in parts)
            elif key in _INT_FIELDS:
                kw[key] = int(value)
            elif key in _FLOAT_FIELDS:
                kw[key] = float(value)
            elif key == "similarity":
                kw[key] = None if value.lower() in ("", "none") else value
            else:
                kw[key] = value
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return SimDesign(**kw), extra


def load_design(path) -> tuple[SimDesign, dict]:
    with open(path, encoding="utf-8") as fh:
        return parse_design(fh.read())
