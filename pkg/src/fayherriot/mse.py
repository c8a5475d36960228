"""Analytic MSE estimation: the g1..g4 components, the Prasad-Rao and Datta
estimators for the basic model and the spatial g1/g2 terms."""

from __future__ import annotations

import warnings

import numpy as np

from .core import Dataset, FitResult, Method
from .predict import gamma
from .spatial import SpatialSystem


def g1_basic(sigma_u2, sigma_i2):
    """gamma_i * sigma_i^2, the prediction error of the random effect."""
    su = np.asarray(sigma_u2, dtype=float)
    si = np.asarray(sigma_i2, dtype=float)
    total = su + si
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, su * si / np.where(total > 0, total, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def g2_basic_all(dataset: Dataset, sigma_u2: float) -> np.ndarray:
    """(1 - gamma_i)^2 X_i (X'V^-1X)^-1 X_i' for every area."""
    v = sigma_u2 + dataset.var
    X = dataset.X
    info = (X / v[:, None]).T @ X
    q = np.einsum("ij,ij->i", X, np.linalg.solve(info, X.T).T)
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(v > 0, dataset.var / np.where(v > 0, v, 1.0), 0.0)
    return shrink * shrink * q


def g2_basic(dataset: Dataset, sigma_u2: float, area_index: int) -> float:
    return float(g2_basic_all(dataset, sigma_u2)[area_index])


def pr_variance(dataset: Dataset, sigma_u2: float) -> float:
    """Asymptotic variance of the moment estimator,
    (2 / D^2) * sum (sigma_i^2 + sigma_u^2)^2."""
    v = dataset.var + sigma_u2
    return 2.0 * float(np.sum(v * v)) / dataset.D ** 2


def g3_pr(sigma_u2, sigma_i2, var_sigma_u2=None):
    """sigma_i^4 / (sigma_i^2 + sigma_u^2)^3, optionally multiplied by a
    supplied variance of the variance estimator."""
    su = np.asarray(sigma_u2, dtype=float)
    si = np.asarray(sigma_i2, dtype=float)
    total = su + si
    if np.any(total <= 0):
        raise ZeroDivisionError("sigma_i^2 + sigma_u^2 must be positive")
    out = si * si / total ** 3
    if var_sigma_u2 is not None:
        out = out * var_sigma_u2
    return float(out) if np.ndim(out) == 0 else out


def g4_datta(dataset: Dataset, sigma_u2: float) -> np.ndarray:
    """Bias correction of the Fay-Herriot-iterative MSE estimator:
    2 (1 - gamma_i)^2 [D sum v^-2 - (sum v^-1)^2] (sum v^-1)^-3,
    v_i = sigma_i^2 + sigma_u^2. Nonnegative by Cauchy-Schwarz."""
    v = dataset.var + sigma_u2
    w = 1.0 / v
    s1 = float(np.sum(w))
    # D sum w^2 - (sum w)^2 in centered form; exactly zero for equal variances
    if np.all(v == v[0]):
        bracket = 0.0
    else:
        bracket = dataset.D * float(np.sum((w - w.mean()) ** 2))
    shrink = 1.0 - gamma(sigma_u2, dataset.var)
    return 2.0 * shrink * shrink * bracket / s1 ** 3


def mse_prasad_rao(dataset: Dataset, fit: FitResult) -> np.ndarray:
    """g1 + g2 + 2 Var(sigma_u^2) g3 at the fitted sigma_u^2."""
    if fit.method is not Method.MOMENTS:
        warnings.warn("Prasad-Rao MSE is derived for the moment estimator; "
                      f"fit used {fit.method.value}", stacklevel=2)
    s = fit.sigma_u2
    var = dataset.var
    if np.all(var == 0):
        return np.zeros(dataset.D)
    g3 = np.where(var + s > 0, var * var / np.maximum(var + s, 1e-300) ** 3, 0.0)
    return g1_basic(s, var) + g2_basic_all(dataset, s) + 2.0 * pr_variance(dataset, s) * g3


def mse_datta(dataset: Dataset, fit: FitResult) -> np.ndarray:
    """Prasad-Rao form minus the g4 bias correction, for the Fay-Herriot
    iterative estimator."""
    if fit.method is not Method.FH:
        warnings.warn("Datta MSE is derived for the Fay-Herriot iterative estimator; "
                      f"fit used {fit.method.value}", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pr = mse_prasad_rao(dataset, fit)
    return pr - g4_datta(dataset, fit.sigma_u2)


def g1_g2_spatial(dataset: Dataset, W, phi) -> tuple[np.ndarray, np.ndarray]:
    """Per-area g1 and g2 of the SBLUP at phi = (sigma_eps2, rho)."""
    s, rho = (phi.sigma_eps2, phi.rho) if hasattr(phi, "rho") else phi
    system = SpatialSystem(dataset, W, s, rho)
    return system.g1(), system.g2()


def mse_spatial_reml(g1, g2, g3) -> np.ndarray:
    """g1 + g2 + 2 g3 for REML-fitted spatial parameters, with g3 supplied
    (typically the parametric-bootstrap estimate)."""
    return np.asarray(g1) + np.asarray(g2) + 2.0 * np.asarray(g3)
