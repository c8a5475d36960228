# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: the diagonal-covariance profile likelihood and its
bounded one-dimensional maximizer, plus the haversine distance matrix.

Mirrors ``_kernels_py`` operation for operation; see that module for the
reference semantics.
"""

from libc.math cimport log, sqrt, fabs, sin, cos, asin, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

cdef double SQRT_EPS = 1.4901161193847656e-08
cdef double GOLDEN = 0.3819660112501051


cdef double _profile(const double[::1] z, const double[:, ::1] X,
                     const double[::1] a, const double[::1] b, double s,
                     bint reml, double* info, double* rhs) noexcept nogil:
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double v, w, logdet = 0.0, acc, quad = 0.0, r

    for j in range(p * p):
        info[j] = 0.0
    for j in range(p):
        rhs[j] = 0.0
    for k in range(n):
        v = a[k] + s * b[k]
        if not v > 0.0:
            return -INFINITY
        logdet += log(v)
        w = 1.0 / v
        for i in range(p):
            acc = X[k, i] * w
            rhs[i] += acc * z[k]
            for j in range(i + 1):
                info[i * p + j] += acc * X[k, j]
    # in-place lower Cholesky of info
    cdef double logdet_info = 0.0
    for j in range(p):
        acc = info[j * p + j]
        for k in range(j):
            acc -= info[j * p + k] * info[j * p + k]
        if not acc > 0.0:
            return -INFINITY
        acc = sqrt(acc)
        info[j * p + j] = acc
        logdet_info += 2.0 * log(acc)
        for i in range(j + 1, p):
            r = info[i * p + j]
            for k in range(j):
                r -= info[i * p + k] * info[j * p + k]
            info[i * p + j] = r / acc
    # beta: forward then backward substitution, stored in rhs
    for i in range(p):
        acc = rhs[i]
        for k in range(i):
            acc -= info[i * p + k] * rhs[k]
        rhs[i] = acc / info[i * p + i]
    for i in range(p - 1, -1, -1):
        acc = rhs[i]
        for k in range(i + 1, p):
            acc -= info[k * p + i] * rhs[k]
        rhs[i] = acc / info[i * p + i]
    for k in range(n):
        r = z[k]
        for i in range(p):
            r -= X[k, i] * rhs[i]
        quad += r * r / (a[k] + s * b[k])
    if reml:
        return -0.5 * (logdet + logdet_info + quad)
    return -0.5 * (logdet + quad)


def profile_loglik(const double[::1] z, const double[:, ::1] X, const double[::1] a,
                   const double[::1] b, double s, bint reml):
    cdef Py_ssize_t p = X.shape[1]
    cdef double* info = <double*> malloc((p * p + p) * sizeof(double))
    cdef double out
    if info == NULL:
        raise MemoryError()
    try:
        out = _profile(z, X, a, b, s, reml, info, info + p * p)
    finally:
        free(info)
    return out


def maximize_profile(const double[::1] z, const double[:, ::1] X, const double[::1] a,
                     const double[::1] b, bint reml, double lo, double hi,
                     double xatol, int maxfun):
    """Bounded Brent maximization of ``profile_loglik`` over ``s`` in
    [lo, hi]. Returns (s, loglik, evaluations, converged)."""
    cdef Py_ssize_t p = X.shape[1]
    cdef double* info = <double*> malloc((p * p + p) * sizeof(double))
    cdef double* rhs
    cdef double aa = lo, bb = hi, fulc, nfc, xf, x, fx, fu, ffulc, fnfc
    cdef double xm, tol1, tol2, rat = 0.0, e = 0.0, r, q, pp, si
    cdef int num, golden
    cdef bint converged = True
    if info == NULL:
        raise MemoryError()
    rhs = info + p * p
    try:
        with nogil:
            fulc = aa + GOLDEN * (bb - aa)
            nfc = fulc
            xf = fulc
            x = xf
            fx = -_profile(z, X, a, b, x, reml, info, rhs)
            num = 1
            ffulc = fx
            fnfc = fx
            xm = 0.5 * (aa + bb)
            tol1 = SQRT_EPS * fabs(xf) + xatol / 3.0
            tol2 = 2.0 * tol1
            while fabs(xf - xm) > (tol2 - 0.5 * (bb - aa)):
                golden = 1
                if fabs(e) > tol1:
                    golden = 0
                    r = (xf - nfc) * (fx - ffulc)
                    q = (xf - fulc) * (fx - fnfc)
                    pp = (xf - fulc) * q - (xf - nfc) * r
                    q = 2.0 * (q - r)
                    if q > 0.0:
                        pp = -pp
                    q = fabs(q)
                    r = e
                    e = rat
                    if (fabs(pp) < fabs(0.5 * q * r)) and (pp > q * (aa - xf)) and (pp < q * (bb - xf)):
                        rat = pp / q
                        x = xf + rat
                        if ((x - aa) < tol2) or ((bb - x) < tol2):
                            si = 1.0 if xm - xf >= 0.0 else -1.0
                            rat = tol1 * si
                    else:
                        golden = 1
                if golden:
                    if xf >= xm:
                        e = aa - xf
                    else:
                        e = bb - xf
                    rat = GOLDEN * e
                si = 1.0 if rat >= 0.0 else -1.0
                x = xf + si * (fabs(rat) if fabs(rat) > tol1 else tol1)
                fu = -_profile(z, X, a, b, x, reml, info, rhs)
                num += 1
                if fu <= fx:
                    if x >= xf:
                        aa = xf
                    else:
                        bb = xf
                    fulc = nfc
                    ffulc = fnfc
                    nfc = xf
                    fnfc = fx
                    xf = x
                    fx = fu
                else:
                    if x < xf:
                        aa = x
                    else:
                        bb = x
                    if (fu <= fnfc) or (nfc == xf):
                        fulc = nfc
                        ffulc = fnfc
                        nfc = x
                        fnfc = fu
                    elif (fu <= ffulc) or (fulc == xf) or (fulc == nfc):
                        fulc = x
                        ffulc = fu
                xm = 0.5 * (aa + bb)
                tol1 = SQRT_EPS * fabs(xf) + xatol / 3.0
                tol2 = 2.0 * tol1
                if num >= maxfun:
                    converged = False
                    break
    finally:
        free(info)
    return xf, -fx, num, converged


def haversine_matrix(const double[::1] lon, const double[::1] lat, double radius):
    cdef Py_ssize_t n = lon.shape[0]
    cdef Py_ssize_t i, j
    cdef double deg = 0.017453292519943295
    cdef double dlat, dlon, h, d
    out = np.zeros((n, n))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dlat = (lat[j] - lat[i]) * deg
                dlon = (lon[j] - lon[i]) * deg
                h = sin(0.5 * dlat) ** 2 + cos(lat[i] * deg) * cos(lat[j] * deg) * sin(0.5 * dlon) ** 2
                if h > 1.0:
                    h = 1.0
                d = 2.0 * radius * asin(sqrt(h))
                o[i, j] = d
                o[j, i] = d
    return out
