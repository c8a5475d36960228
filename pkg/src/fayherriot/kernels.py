"""Backend selection for the hot kernels.

The compiled extension ``_kernels`` is preferred; the numpy fallback is used
when it is missing or when ``FAYHERRIOT_PURE_PYTHON`` is set to a non-empty
value other than ``0``.
"""

import os

import numpy as np

from . import _kernels_py

_force_python = os.environ.get("FAYHERRIOT_PURE_PYTHON", "") not in ("", "0")

_compiled = None
if not _force_python:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"

brent_maximize = _kernels_py.brent_maximize


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def profile_loglik(z, X, a, b, s, reml, impl=None):
    impl = impl or _impl
    return impl.profile_loglik(_c(z), _c(X), _c(a), _c(b), float(s), bool(reml))


def maximize_profile(z, X, a, b, reml, lo, hi, xatol, maxfun=500, impl=None):
    impl = impl or _impl
    x, f, n, ok = impl.maximize_profile(_c(z), _c(X), _c(a), _c(b), bool(reml), float(lo),
                                        float(hi), float(xatol), int(maxfun))
    return float(x), float(f), int(n), bool(ok)


def haversine_matrix(lon, lat, radius, impl=None):
    impl = impl or _impl
    return impl.haversine_matrix(_c(lon), _c(lat), float(radius))


def implementations():
    """Available backends by name, for tests and benchmarks."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
