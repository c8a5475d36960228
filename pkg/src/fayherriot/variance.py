"""Estimation of the random-effect variance sigma_u^2 of the basic model.

Four estimators are provided: maximum likelihood, restricted maximum
likelihood, the method of moments with leverage correction and the
Fay-Herriot fixed-point scheme. All of them are translation invariant in
the direct estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels
from .core import Dataset, FitResult, Method, gls_beta, ols_beta
from .errors import DomainError, InsufficientAreasError


@dataclass(frozen=True)
class VarianceMethod:
    tag: Method = Method.REML
    max_iterations: int = 200
    tolerance: float = 1e-8
    upper_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", Method.parse(self.tag))
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.upper_bound is not None and not self.upper_bound > 0:
            raise ValueError("upper_bound must exceed the lower bound 0")


def require_areas(dataset: Dataset) -> None:
    if dataset.D <= dataset.p + 1:
        raise InsufficientAreasError(
            f"{dataset.D} areas are not enough to fit {dataset.p} coefficients "
            "and a variance component")


def default_upper_bound(dataset: Dataset) -> float:
    """100 times the sample variance of the OLS residuals, with a floor so
    that a perfect regression fit still leaves a usable search interval."""
    beta, _ = ols_beta(dataset)
    resid = dataset.y - dataset.X @ beta
    upper = 100.0 * float(np.var(resid, ddof=1))
    floor = 100.0 * float(np.mean(dataset.var))
    return max(upper, floor, 1e-12)


def _check_domain(dataset, sigma_u2):
    if sigma_u2 < 0:
        raise DomainError("sigma_u2 must be >= 0")
    v = sigma_u2 + dataset.var
    if np.any(v <= 0):
        raise DomainError("sigma_u2 + sigma_i^2 must be positive for every area")
    return v


def loglik_ml(dataset: Dataset, sigma_u2: float, beta) -> float:
    """Gaussian log-likelihood at (beta, sigma_u2), additive constant
    omitted."""
    v = _check_domain(dataset, sigma_u2)
    r = dataset.y - dataset.X @ np.asarray(beta, dtype=float)
    return float(-0.5 * np.sum(np.log(v)) - 0.5 * np.sum(r * r / v))


def loglik_reml(dataset: Dataset, sigma_u2: float) -> float:
    """Restricted log-likelihood at sigma_u2, additive constant omitted."""
    v = _check_domain(dataset, sigma_u2)
    return kernels.profile_loglik(dataset.y, dataset.X, v, np.zeros_like(v), 0.0, True)


def profile_loglik_ml(dataset: Dataset, sigma_u2: float) -> float:
    """ML log-likelihood with beta profiled out at its GLS value."""
    v = _check_domain(dataset, sigma_u2)
    return kernels.profile_loglik(dataset.y, dataset.X, v, np.zeros_like(v), 0.0, False)


def _finish(dataset, method, s, converged, iterations, message=""):
    beta, cov = gls_beta(dataset, s + dataset.var)
    if method is Method.REML:
        ll = loglik_reml(dataset, s)
    else:
        ll = loglik_ml(dataset, s, beta)
    return FitResult(beta=beta, beta_covariance=cov, method=method, log_likelihood=ll,
                     converged=converged, iterations=iterations, sigma_u2=float(s),
                     message=message)


def score(dataset: Dataset, sigma_u2: float, reml: bool) -> float:
    """Derivative of the profile ML or REML log-likelihood in sigma_u2."""
    v = _check_domain(dataset, sigma_u2)
    X = dataset.X
    beta, cov = gls_beta(dataset, v)
    r = dataset.y - X @ beta
    out = -0.5 * np.sum(1.0 / v) + 0.5 * np.sum(r * r / (v * v))
    if reml:
        out += 0.5 * np.trace(cov @ ((X / (v * v)[:, None]).T @ X))
    return float(out)


def _polish(dataset, s, f, upper, reml, tol):
    # Brent on f stalls at ~sqrt(eps) relative accuracy; the score root does
    # not, which makes the estimate reproducible under translations of y.
    h = max(10.0 * tol, 1e-6 * (1.0 + s))
    lo, hi = max(0.0, s - h), min(upper, s + h)
    try:
        if not score(dataset, lo, reml) > 0.0 > score(dataset, hi, reml):
            return s, f
        root = optimize.brentq(lambda t: score(dataset, t, reml), lo, hi,
                               xtol=1e-15, rtol=4 * np.finfo(float).eps)
    except (DomainError, ValueError, np.linalg.LinAlgError):
        return s, f
    y, X, var = dataset.y, dataset.X, dataset.var
    f_root = kernels.profile_loglik(y, X, var, np.ones_like(var), root, reml)
    if f_root >= f - 1e-12 * (1.0 + abs(f)):
        return root, f_root
    return s, f


def _maximize(dataset, config, reml):
    require_areas(dataset)
    upper = config.upper_bound if config.upper_bound is not None else default_upper_bound(dataset)
    y, X, var = dataset.y, dataset.X, dataset.var
    ones = np.ones_like(var)
    s, f, nfev, ok = kernels.maximize_profile(y, X, var, ones, reml, 0.0, upper,
                                              config.tolerance, config.max_iterations)
    message = "" if ok else "iteration limit reached"
    if ok and 0.0 < s < upper:
        s, f = _polish(dataset, s, f, upper, reml, config.tolerance)
    for edge in (0.0, upper):
        f_edge = kernels.profile_loglik(y, X, var, ones, edge, reml)
        nfev += 1
        if f_edge >= f:
            s, f = edge, f_edge
    if s == upper:
        message = "estimate at upper search bound"
    return _finish(dataset, config.tag, s, ok, nfev, message)


def estimate_ml(dataset: Dataset, config: VarianceMethod | None = None) -> FitResult:
    config = VarianceMethod(Method.ML) if config is None else config
    return _maximize(dataset, VarianceMethod(Method.ML, config.max_iterations,
                                             config.tolerance, config.upper_bound), False)


def estimate_reml(dataset: Dataset, config: VarianceMethod | None = None) -> FitResult:
    config = VarianceMethod(Method.REML) if config is None else config
    return _maximize(dataset, VarianceMethod(Method.REML, config.max_iterations,
                                             config.tolerance, config.upper_bound), True)


def moments_raw(dataset: Dataset) -> float:
    """Untruncated moment estimate; may be negative."""
    beta, h = ols_beta(dataset)
    r = dataset.y - dataset.X @ beta
    return float(np.sum(r * r - dataset.var * (1.0 - h)) / (dataset.D - dataset.p))


def estimate_moments(dataset: Dataset, config: VarianceMethod | None = None) -> FitResult:
    require_areas(dataset)
    s = max(0.0, moments_raw(dataset))
    return _finish(dataset, Method.MOMENTS, s, True, 1)


def fh_equation(dataset: Dataset, sigma_u2: float, beta=None) -> float:
    """Left side of the Fay-Herriot moment equation,
    sum (y_i - X_i beta)^2 / (sigma_u2 + sigma_i^2), with beta the GLS
    estimate at sigma_u2 unless given."""
    v = _check_domain(dataset, sigma_u2)
    if beta is None:
        beta, _ = gls_beta(dataset, v)
    r = dataset.y - dataset.X @ beta
    return float(np.sum(r * r / v))


def _solve_fh_scalar(r2, var, target):
    """Root in t >= 0 of sum r2/(t + var) = target; 0 when there is none."""
    lo = 0.0 if np.all(var > 0) else 1e-300

    def g(t):
        return float(np.sum(r2 / (t + var))) - target

    if g(lo) <= 0:
        return 0.0
    hi = max(1.0, float(np.sum(r2)) / target)
    while g(hi) > 0:
        hi *= 2.0
    return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def estimate_fh_iterative(dataset: Dataset, config: VarianceMethod | None = None) -> FitResult:
    config = VarianceMethod(Method.FH) if config is None else config
    require_areas(dataset)
    target = dataset.D - dataset.p
    var = dataset.var
    s = max(0.0, moments_raw(dataset))
    if s == 0.0 and np.any(var == 0):
        s = max(float(np.var(dataset.y)), 1e-12)
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        beta, _ = gls_beta(dataset, s + var)
        r = dataset.y - dataset.X @ beta
        s_new = _solve_fh_scalar(r * r, var, target)
        step = abs(s_new - s)
        s = s_new
        if step < config.tolerance * (1.0 + s):
            converged = True
            break
    return _finish(dataset, Method.FH, s, converged, it,
                   "" if converged else "iteration limit reached")


ESTIMATORS = {
    Method.ML: estimate_ml,
    Method.REML: estimate_reml,
    Method.MOMENTS: estimate_moments,
    Method.FH: estimate_fh_iterative,
}


def estimate(dataset: Dataset, method="reml", config: VarianceMethod | None = None) -> FitResult:
    """Dispatch to one of the four estimators by name or Method."""
    tag = Method.parse(method)
    if config is None:
        config = VarianceMethod(tag)
    return ESTIMATORS[tag](dataset, config)


__all__ = [
    "VarianceMethod", "loglik_ml", "loglik_reml", "profile_loglik_ml", "estimate_ml",
    "estimate_reml", "estimate_moments", "estimate_fh_iterative", "estimate",
    "fh_equation", "moments_raw", "default_upper_bound", "require_areas",
]
