"""Parametric and nonparametric bootstrap for the MSE of the SEBLUP.

One pass over the replicates yields both the bootstrap estimate of g3 and
the bias-corrected combined MSE. Replicate ``b`` draws from its own stream
``default_rng([seed, b])``, so output is independent of worker count.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import Dataset, FitResult, Method
from .errors import BootstrapError, ConfigError, FayHerriotError
from .parallel import ordered_map
from .spatial import SpatialConfig, SpatialSystem, _weights, estimate_spatial, fitting_interval

log = logging.getLogger(__name__)

MIN_PRODUCTION_REPLICATES = 50
MAX_FAILURE_RATE = 0.10


class Mode(str, enum.Enum):
    PARAMETRIC = "parametric"
    NONPARAMETRIC = "nonparametric"


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 400
    seed: int = 0
    mode: Mode = Mode.PARAMETRIC
    estimation_method: Method = Method.REML
    threads: int | None = None
    allow_small: bool = False
    # test hook: skip re-estimation and reuse the original estimates
    freeze_estimation: bool = False
    rho_grid: int = 21

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "estimation_method", Method.parse(self.estimation_method))
        if self.replicates < 2:
            raise ConfigError("at least 2 bootstrap replicates are required")
        if self.replicates < MIN_PRODUCTION_REPLICATES and not self.allow_small:
            raise ConfigError(f"use at least {MIN_PRODUCTION_REPLICATES} bootstrap replicates")
        if self.estimation_method not in (Method.ML, Method.REML):
            raise ConfigError("bootstrap re-estimation uses ML or REML")


@dataclass
class BootstrapResult:
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g12_boot_mean: np.ndarray
    mse_combined: np.ndarray
    phi_boot: np.ndarray
    replicates: int
    failures: int
    floored: int

    @property
    def mse_reml(self) -> np.ndarray:
        """g1 + g2 + 2 g3 with the bootstrap g3."""
        return self.g1 + self.g2 + 2.0 * self.g3

    @property
    def rho_se(self) -> float:
        return float(np.std(self.phi_boot[:, 1], ddof=1)) if len(self.phi_boot) > 1 else np.nan


def _standardize(x, target_var):
    x = x - x.mean()
    v = float(np.mean(x * x))
    if v <= 0:
        return np.zeros_like(x)
    return x * np.sqrt(target_var / v)


class _Generator:
    def __init__(self, dataset, Wm, fit, system, mode):
        D = dataset.D
        self.D = D
        self.mode = mode
        self.sd = np.sqrt(dataset.var)
        self.sigma = np.sqrt(fit.sigma_eps2)
        self.mean = dataset.X @ fit.beta
        self.lu = linalg.lu_factor(np.eye(D) - fit.rho * Wm)
        if mode is Mode.NONPARAMETRIC:
            B = np.eye(D) - fit.rho * Wm
            self.eps_pool = _standardize(B @ system.u_hat, fit.sigma_eps2)
            resid = dataset.y - system.theta
            with np.errstate(divide="ignore", invalid="ignore"):
                std = np.where(self.sd > 0, resid / np.where(self.sd > 0, self.sd, 1.0), 0.0)
            self.res_pool = _standardize(std, 1.0)

    def draw(self, rng):
        D = self.D
        if self.mode is Mode.PARAMETRIC:
            innov = self.sigma * rng.standard_normal(D)
            z2 = rng.standard_normal(D)
        else:
            innov = self.eps_pool[rng.integers(0, D, D)]
            z2 = self.res_pool[rng.integers(0, D, D)]
        u = linalg.lu_solve(self.lu, innov)
        return self.mean + u + self.sd * z2


def run_bootstrap(dataset: Dataset, W, fit: FitResult,
                  config: BootstrapConfig | None = None) -> BootstrapResult:
    """Bootstrap g3 and the combined (bias-corrected) MSE for a spatial fit."""
    config = config or BootstrapConfig()
    if not fit.is_spatial or not fit.converged:
        raise FayHerriotError("bootstrap needs a converged spatial fit")
    Wm = _weights(W)
    system = SpatialSystem(dataset, Wm, fit.sigma_eps2, fit.rho)
    g1, g2 = system.g1(), system.g2()
    L_hat = system.operator()
    gen = _Generator(dataset, Wm, fit, system, config.mode)
    spatial_cfg = SpatialConfig(rho_grid=config.rho_grid, start=(fit.sigma_eps2, fit.rho),
                                warn_negative_rho=False,
                                interval=fitting_interval(W))

    def replicate(b):
        rng = np.random.default_rng([config.seed, b])
        yb = gen.draw(rng)
        sblup = L_hat @ yb
        if config.freeze_estimation:
            return sblup, sblup, g1 + g2, (fit.sigma_eps2, fit.rho)
        try:
            ds_b = dataset.with_y(yb)
            fit_b = estimate_spatial(ds_b, Wm, config.estimation_method, spatial_cfg)
            if not fit_b.converged:
                return None
            sys_b = SpatialSystem(ds_b, Wm, fit_b.sigma_eps2, fit_b.rho)
        except (FayHerriotError, np.linalg.LinAlgError) as exc:
            log.debug("bootstrap replicate %d failed: %s", b, exc)
            return None
        return sys_b.theta, sblup, sys_b.g1() + sys_b.g2(), (fit_b.sigma_eps2, fit_b.rho)

    results = ordered_map(replicate, range(config.replicates), config.threads)
    failures = sum(r is None for r in results)
    if failures > MAX_FAILURE_RATE * config.replicates:
        raise BootstrapError(f"{failures} of {config.replicates} bootstrap replicates failed")
    if failures:
        warnings.warn(f"{failures} bootstrap replicates failed and were dropped", stacklevel=2)

    # running means keep constant replicates exactly constant
    g3 = np.zeros(dataset.D)
    g12 = np.zeros(dataset.D)
    phis = []
    k = 0
    for r in results:
        if r is None:
            continue
        k += 1
        d = r[0] - r[1]
        g3 += (d * d - g3) / k
        g12 += (r[2] - g12) / k
        phis.append(r[3])
    combined = 2.0 * (g1 + g2) - g12 + g3
    low = combined < 0
    if np.any(low):
        warnings.warn(f"combined bootstrap MSE negative for {int(low.sum())} areas; "
                      "floored at the bootstrap g3", stacklevel=2)
        combined = np.where(low, g3, combined)
    return BootstrapResult(g1=g1, g2=g2, g3=g3, g12_boot_mean=g12, mse_combined=combined,
                           phi_boot=np.array(phis, dtype=float).reshape(-1, 2),
                           replicates=k, failures=failures, floored=int(low.sum()))


def parametric_bootstrap_g3(dataset, W, fit, config=None) -> np.ndarray:
    config = config or BootstrapConfig()
    if config.mode is not Mode.PARAMETRIC:
        raise ConfigError("parametric_bootstrap_g3 needs mode=parametric")
    return run_bootstrap(dataset, W, fit, config).g3


def nonparametric_bootstrap_g3(dataset, W, fit, config=None) -> np.ndarray:
    config = config or BootstrapConfig(mode=Mode.NONPARAMETRIC)
    if config.mode is not Mode.NONPARAMETRIC:
        raise ConfigError("nonparametric_bootstrap_g3 needs mode=nonparametric")
    return run_bootstrap(dataset, W, fit, config).g3


def mse_bootstrap_combined(dataset, W, fit, config=None) -> np.ndarray:
    return run_bootstrap(dataset, W, fit, config).mse_combined
