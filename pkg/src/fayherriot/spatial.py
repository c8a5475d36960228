"""Simultaneous autoregressive (SAR) random effects: covariance structure,
the admissible range of the autoregressive parameter, and ML/REML fitting
of (sigma_eps^2, rho).

For a fixed rho the marginal covariance ``G = s * A^-1 + S^2`` (with
``A = (I - rho W)'(I - rho W)`` and ``S^2 = diag(sigma_i^2)``) is reduced by
one symmetric eigendecomposition of ``S A S``: in the rotated coordinates
``G`` is diagonal with entries ``1 + s / mu_k``. The profile over ``s`` then
runs through the same diagonal kernel as the basic model.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels
from .core import Dataset, FitResult, Method
from .errors import DataError, DomainError, SingularCovarianceError
from .variance import default_upper_bound, require_areas

log = logging.getLogger(__name__)

RHO_MARGIN = 1e-3
PIVOT_RTOL = 1e-13


@dataclass(frozen=True)
class ProximityMatrix:
    """Row-standardized spatial weights with the neighbor lists they came
    from. ``k1``/``k2`` are None for matrices not built by the two-step
    procedure."""

    weights: np.ndarray
    area_ids: tuple[str, ...] = ()
    neighbor_lists: tuple[tuple[tuple[str, float], ...], ...] = ()
    k1: int | None = None
    k2: int | None = None
    similarity_variable: str | None = None
    _eig_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DataError("proximity matrix must be square")
        if np.any(W < 0):
            raise DataError("proximity weights must be non-negative")
        if np.any(np.diag(W) != 0):
            raise DataError("proximity matrix must have a zero diagonal")
        sums = W.sum(axis=1)
        rows = sums > 0
        if not np.allclose(sums[rows], 1.0, rtol=0, atol=1e-12):
            raise DataError("proximity matrix rows must sum to one")
        W.flags.writeable = False
        object.__setattr__(self, "weights", W)
        if not self.area_ids:
            object.__setattr__(self, "area_ids", tuple(f"A{i:04d}" for i in range(len(W))))
        if not self.neighbor_lists:
            ids = self.area_ids
            lists = tuple(tuple((ids[j], float(W[i, j])) for j in np.flatnonzero(W[i]))
                          for i in range(len(W)))
            object.__setattr__(self, "neighbor_lists", lists)

    @property
    def D(self) -> int:
        return self.weights.shape[0]

    def eigenvalues(self) -> np.ndarray:
        if "eig" not in self._eig_cache:
            self._eig_cache["eig"] = np.linalg.eigvals(self.weights)
        return self._eig_cache["eig"]


@dataclass(frozen=True)
class SpatialParams:
    sigma_eps2: float
    rho: float

    def __post_init__(self):
        if self.sigma_eps2 < 0:
            raise DomainError("sigma_eps2 must be >= 0")


def _weights(W) -> np.ndarray:
    return W.weights if isinstance(W, ProximityMatrix) else np.asarray(W, dtype=float)


def rho_validity_interval(W) -> tuple[float, float]:
    """Open interval of rho on which I - rho W is non-singular.

    ``I - rho W`` is singular exactly when 1/rho is a real eigenvalue of W.
    The lower end uses the most negative real part over all eigenvalues,
    which is conservative when the spectrum is complex.
    """
    if isinstance(W, ProximityMatrix):
        lam = W.eigenvalues()
        Wm = W.weights
    else:
        Wm = np.asarray(W, dtype=float)
        lam = np.linalg.eigvals(Wm)
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("eigenvalue computation failed")
    scale = max(1.0, float(np.max(np.abs(lam))))
    real = lam[np.abs(lam.imag) <= 1e-9 * scale].real
    sums = Wm.sum(axis=1)
    if np.allclose(sums, 1.0, rtol=0, atol=1e-12):
        rho_max = 1.0
    else:
        pos = real[real > 0]
        rho_max = 1.0 / float(pos.max()) if pos.size else np.inf
    lam_min = float(np.min(lam.real))
    rho_min = 1.0 / lam_min if lam_min < 0 else -1.0
    return rho_min, rho_max


def fitting_interval(W, margin: float = RHO_MARGIN) -> tuple[float, float]:
    lo, hi = rho_validity_interval(W)
    return lo + margin, hi - margin


def _chol_checked(A, what, rho):
    try:
        L = linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularCovarianceError(f"{what} is singular at rho={rho!r}") from None
    d = np.diag(L)
    if d.min() <= PIVOT_RTOL * d.max():
        raise SingularCovarianceError(f"{what} is singular at rho={rho!r}")
    return L


def sar_covariance(W, params: SpatialParams, sampling_variance) -> tuple[np.ndarray, np.ndarray]:
    """Random-effect covariance Omega and marginal covariance G = Omega + S^2."""
    Wm = _weights(W)
    rho = float(params.rho)
    D = len(Wm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(np.eye(D) - rho * Wm, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= PIVOT_RTOL * d.max():
        raise SingularCovarianceError(f"I - rho W is singular at rho={rho!r}")
    Binv = linalg.lu_solve((lu, piv), np.eye(D), check_finite=False)
    # (B'B)^-1 = B^-1 B^-T, symmetric by construction
    Omega = params.sigma_eps2 * (Binv @ Binv.T)
    G = Omega + np.diag(np.asarray(sampling_variance, dtype=float))
    return Omega, G


def spatial_loglik(dataset: Dataset, W, params: SpatialParams, method="reml") -> float:
    """Profile (beta at its GLS value) ML or REML log-likelihood with V
    replaced by G, additive constant omitted. Dense reference evaluation."""
    reml = Method.parse(method) is Method.REML
    _, G = sar_covariance(W, params, dataset.var)
    try:
        L = linalg.cholesky(G, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf
    X, y = dataset.X, dataset.y
    Xs = linalg.solve_triangular(L, X, lower=True, check_finite=False)
    ys = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return kernels.profile_loglik(ys, Xs, np.ones(len(y)), np.zeros(len(y)), 0.0, reml) \
        - float(np.sum(np.log(np.diag(L))))


class _Profile:
    """Rotated problem at a fixed rho (see module docstring)."""

    def __init__(self, dataset: Dataset, Wm: np.ndarray):
        self.dataset = dataset
        self.var = dataset.var
        self.dense = bool(np.any(self.var == 0))
        self.Wm = Wm
        if not self.dense:
            sd = np.sqrt(self.var)
            self.sd = sd
            # S A S = S^2 - rho S (W + W') S + rho^2 S W'W S
            self.n0 = np.diag(self.var)
            self.n1 = sd[:, None] * (Wm + Wm.T) * sd[None, :]
            self.n2 = sd[:, None] * (Wm.T @ Wm) * sd[None, :]
            self.z0 = dataset.y / sd
            self.X0 = dataset.X / sd[:, None]
            self.const = -float(np.sum(np.log(sd)))
        self._cache = {}

    def rotate(self, rho):
        if rho in self._cache:
            return self._cache[rho]
        N = self.n0 - rho * self.n1 + (rho * rho) * self.n2
        mu, Q = np.linalg.eigh(N)
        if mu[0] <= 1e-14 * mu[-1]:
            out = None
        else:
            out = (Q.T @ self.z0, Q.T @ self.X0, 1.0 / mu)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[rho] = out
        return out

    def maximize_s(self, rho, reml, upper, tol, maxfun):
        """Best s at this rho; returns (s, loglik, evaluations)."""
        if self.dense:
            def f(s):
                return spatial_loglik(self.dataset, self.Wm, SpatialParams(s, rho),
                                      Method.REML if reml else Method.ML)
            s, fs, n, _ = kernels.brent_maximize(f, 0.0, upper, tol, maxfun)
            for edge in (0.0, upper):
                fe = f(edge)
                n += 1
                if fe >= fs:
                    s, fs = edge, fe
            return s, fs, n
        rot = self.rotate(rho)
        if rot is None:
            return 0.0, -np.inf, 0
        z, X, lam = rot
        ones = np.ones_like(lam)
        # search t = s * max(lam): near a unit root the relevant s can be far
        # below an absolute tolerance on s
        scale = float(lam.max())
        b = lam / scale
        t, fs, n, _ = kernels.maximize_profile(z, X, ones, b, reml, 0.0, upper * scale, tol,
                                               maxfun)
        for edge in (0.0, upper * scale):
            fe = kernels.profile_loglik(z, X, ones, b, edge, reml)
            n += 1
            if fe >= fs:
                t, fs = edge, fe
        return t / scale, fs + self.const, n


@dataclass(frozen=True)
class SpatialConfig:
    """Optimizer settings for ``estimate_spatial``.

    ``start`` is an optional (sigma_eps2, rho) warm start: a short local grid
    around its rho replaces the full grid unless the local optimum sits on
    the local grid's edge. ``interval`` overrides the rho search interval
    (saves the eigenvalue computation when fitting many replicates).
    ``warn_negative_rho`` logs negative estimates; batch callers turn it
    off since the fit message records them anyway.
    """

    rho_grid: int = 21
    tolerance: float = 1e-8
    max_iterations: int = 200
    upper_bound: float | None = None
    start: tuple[float, float] | None = None
    local_points: int = 2
    interval: tuple[float, float] | None = None
    warn_negative_rho: bool = True


def estimate_spatial(dataset: Dataset, W, method="reml",
                     config: SpatialConfig | None = None) -> FitResult:
    """Maximize the ML or REML criterion over (sigma_eps2, rho).

    Profile strategy: a grid over rho, each point maximized exactly over
    sigma_eps2, then a bounded Brent refinement of the profile between the
    neighbors of the best grid point.
    """
    config = config or SpatialConfig()
    tag = Method.parse(method)
    if tag not in (Method.ML, Method.REML):
        raise ValueError("spatial parameters are estimated by ML or REML only")
    reml = tag is Method.REML
    require_areas(dataset)
    Wm = _weights(W)
    if Wm.shape != (dataset.D, dataset.D):
        raise DataError("proximity matrix does not match the dataset")
    lo, hi = config.interval if config.interval is not None else fitting_interval(W)
    upper = config.upper_bound if config.upper_bound is not None else default_upper_bound(dataset)
    prof = _Profile(dataset, Wm)
    evals = 0
    best_s = {}

    def profile(rho):
        nonlocal evals
        s, f, n = prof.maximize_s(rho, reml, upper, config.tolerance, config.max_iterations)
        evals += n
        best_s[rho] = s
        return f

    full = np.linspace(lo, hi, config.rho_grid)
    step = full[1] - full[0]
    grid = full
    if config.start is not None:
        r0 = min(max(float(config.start[1]), lo), hi)
        k = config.local_points
        local = np.unique(np.clip(r0 + step * np.arange(-k, k + 1), lo, hi))
        vals = [profile(r) for r in local]
        j = int(np.argmax(vals))
        interior = 0 < j < len(local) - 1 or local[j] in (lo, hi)
        if interior and np.isfinite(vals[j]):
            grid = local
        else:
            vals = None
    if grid is full:
        vals = [profile(r) for r in full]
    j = int(np.argmax(vals))
    if not np.isfinite(vals[j]):
        return _failed(dataset, tag, evals, "likelihood not finite on the rho grid")
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, len(grid) - 1)]
    rho, f, n, ok = kernels.brent_maximize(profile, a, b, config.tolerance, config.max_iterations)
    if vals[j] > f:
        rho, f = float(grid[j]), vals[j]
    s = best_s[rho]
    message = "" if ok else "rho refinement hit the iteration limit"
    if s == 0.0:
        # no spatial random effect: rho is not identified
        rho = 0.0
        message = (message + "; " if message else "") + "sigma_eps2 = 0, rho not identified"
    if rho < 0:
        if config.warn_negative_rho:
            log.warning("negative spatial autocorrelation estimate rho=%.4g", rho)
        message = (message + "; " if message else "") + "negative rho estimate"
    try:
        system = SpatialSystem(dataset, Wm, s, rho)
    except SingularCovarianceError as exc:
        return _failed(dataset, tag, evals, str(exc))
    return FitResult(beta=system.beta, beta_covariance=system.beta_cov, method=tag,
                     log_likelihood=float(f), converged=bool(ok), iterations=evals,
                     sigma_eps2=float(s), rho=float(rho), message=message)


def _failed(dataset, tag, evals, message):
    p = dataset.p
    return FitResult(beta=np.full(p, np.nan), beta_covariance=np.full((p, p), np.nan),
                     method=tag, log_likelihood=-np.inf, converged=False, iterations=evals,
                     sigma_eps2=np.nan, rho=np.nan, message=message)


class SpatialSystem:
    """Dense quantities of the spatial model at fixed (sigma_eps2, rho):
    GLS coefficients, predicted random effects and the per-area g1/g2 MSE
    components."""

    def __init__(self, dataset: Dataset, W, sigma_eps2: float, rho: float):
        self.dataset = dataset
        X, y = dataset.X, dataset.y
        self.Omega, G = sar_covariance(W, SpatialParams(sigma_eps2, rho), dataset.var)
        L = _chol_checked(G, "G", rho)
        self._G = (L, True)
        GiX = linalg.cho_solve(self._G, X, check_finite=False)
        info = X.T @ GiX
        cov = linalg.inv(info)
        self.beta_cov = 0.5 * (cov + cov.T)
        self.GiX = GiX
        self.beta = self.beta_cov @ (GiX.T @ y)
        resid = y - X @ self.beta
        self.u_hat = self.Omega @ linalg.cho_solve(self._G, resid, check_finite=False)
        self.theta = X @ self.beta + self.u_hat

    def _GiOmega(self):
        if not hasattr(self, "_gio"):
            self._gio = linalg.cho_solve(self._G, self.Omega, check_finite=False)
        return self._gio

    def g1(self) -> np.ndarray:
        """diag(Omega - Omega G^-1 Omega)."""
        GiO = self._GiOmega()
        return np.diag(self.Omega) - np.einsum("ij,ji->i", self.Omega, GiO)

    def g2(self) -> np.ndarray:
        """d_i' (X'G^-1X)^-1 d_i with d_i' = X_i - b_i' Omega G^-1 X."""
        d = self.dataset.X - self.Omega @ self.GiX
        return np.einsum("ij,jk,ik->i", d, self.beta_cov, d)

    def operator(self) -> np.ndarray:
        """Matrix L with SBLUP(y) = L y at these parameters."""
        X = self.dataset.X
        K = self.beta_cov @ self.GiX.T
        M = self._GiOmega().T
        XK = X @ K
        return XK + M - M @ XK

    def predict(self, y) -> np.ndarray:
        """SBLUP for other direct estimates at the same parameters."""
        X = self.dataset.X
        beta = self.beta_cov @ (self.GiX.T @ y)
        r = y - X @ beta
        return X @ beta + self.Omega @ linalg.cho_solve(self._G, r, check_finite=False)
