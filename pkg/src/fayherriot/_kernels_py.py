"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or disabled through the
``FAYHERRIOT_PURE_PYTHON`` environment variable). ``brent_maximize`` is
also used directly for the outer search over the autoregressive parameter,
whose objective is too expensive for call overhead to matter.
"""

import math

import numpy as np

SQRT_EPS = math.sqrt(2.2e-16)
GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


def profile_loglik(z, X, a, b, s, reml):
    """Profile log-likelihood (beta profiled out, constant dropped) of
    ``z ~ N(X beta, diag(a + s*b))``; the REML variant adds
    ``-1/2 log|X' V^-1 X|``. Returns -inf outside the domain."""
    v = a + s * b
    if not np.all(v > 0):
        return -math.inf
    w = 1.0 / v
    Xw = X * w[:, None]
    info = Xw.T @ X
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return -math.inf
    beta = np.linalg.solve(L.T, np.linalg.solve(L, Xw.T @ z))
    r = z - X @ beta
    out = np.sum(np.log(v)) + np.sum(r * r * w)
    if reml:
        out += 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * float(out)


def brent_maximize(f, lo, hi, xatol, maxfun=500):
    """Bounded Brent search (golden section with parabolic steps) for the
    maximum of ``f`` on [lo, hi]. Returns (x, f(x), evaluations, converged).

    Endpoints are never evaluated; callers that care about boundary optima
    compare against them explicitly.
    """
    a, b = lo, hi
    fulc = a + GOLDEN * (b - a)
    nfc = xf = x = fulc
    rat = e = 0.0
    fx = -f(x)
    num = 1
    ffulc = fnfc = fx
    xm = 0.5 * (a + b)
    tol1 = SQRT_EPS * abs(xf) + xatol / 3.0
    tol2 = 2.0 * tol1
    converged = True
    while abs(xf - xm) > (tol2 - 0.5 * (b - a)):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = rat
            if abs(p) < abs(0.5 * q * r) and q * (a - xf) < p < q * (b - xf):
                rat = p / q
                x = xf + rat
                if (x - a) < tol2 or (b - x) < tol2:
                    rat = tol1 if xm - xf >= 0.0 else -tol1
            else:
                golden = True
        if golden:
            e = (a - xf) if xf >= xm else (b - xf)
            rat = GOLDEN * e
        step = max(abs(rat), tol1)
        x = xf + (step if rat >= 0.0 else -step)
        fu = -f(x)
        num += 1
        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if fu <= fnfc or nfc == xf:
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = x, fu
            elif fu <= ffulc or fulc == xf or fulc == nfc:
                fulc, ffulc = x, fu
        xm = 0.5 * (a + b)
        tol1 = SQRT_EPS * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= maxfun:
            converged = False
            break
    return xf, -fx, num, converged


def maximize_profile(z, X, a, b, reml, lo, hi, xatol, maxfun):
    return brent_maximize(lambda s: profile_loglik(z, X, a, b, s, reml), lo, hi, xatol, maxfun)


def haversine_matrix(lon, lat, radius):
    lon = np.radians(lon)
    lat = np.radians(lat)
    dlat = lat[None, :] - lat[:, None]
    dlon = lon[None, :] - lon[:, None]
    h = np.sin(0.5 * dlat) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(0.5 * dlon) ** 2
    d = 2.0 * radius * np.arcsin(np.sqrt(np.minimum(h, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d
