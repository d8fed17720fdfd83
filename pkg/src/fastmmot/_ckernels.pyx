# cython: language_level=3
"""Compiled kernels.  Same signatures and results as ``_pykernels``.

Batched arrays are (N, B), Fortran-ordered so that each column (the axis the
product contracts over) is contiguous.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, isfinite, fabs, INFINITY

cnp.import_array()

NAME = "compiled"


# ---------------------------------------------------------------- column kernels

cdef void _ftvp1_col(const double* phi, const double* psi, Py_ssize_t n, double mu,
                     double* out, double* C, double* D) noexcept nogil:
    # C, D need n + 2 slots; C[k] = sum_{j>=k} mu^(j-k+1) psi[j]
    cdef Py_ssize_t k
    cdef double A, Bp, J1, J2, J5, J6
    C[n] = 0.0
    C[n + 1] = 0.0
    D[n] = 0.0
    D[n + 1] = 0.0
    for k in range(n - 1, -1, -1):
        C[k] = mu * (C[k + 1] + psi[k])
        D[k] = mu * (D[k + 1] + phi[k])
    # backward region sums go straight into out
    J5 = 0.0
    J6 = 0.0
    out[n - 1] = 0.0
    if n >= 2:
        out[n - 2] = phi[n - 1] * C[n - 1]
        J5 = out[n - 2]
    for k in range(n - 3, -1, -1):
        J5 = mu * J5 + phi[k + 1] * C[k + 1]
        J6 = mu * (J6 + psi[k + 1] * D[k + 2])
        out[k] = J5 + J6
    A = phi[0]
    Bp = psi[0]
    J1 = psi[0] * A
    J2 = 0.0
    out[0] += J1 + A * C[1] + Bp * D[1]
    for k in range(1, n):
        J2 = mu * (J2 + phi[k] * Bp)
        A = mu * A + phi[k]
        Bp = mu * Bp + psi[k]
        J1 = mu * J1 + psi[k] * A
        out[k] += J1 + J2 + A * C[k + 1] + Bp * D[k + 1]


cdef void _ftvp2_col(const double* phi, const double* psi, Py_ssize_t n, double mu, double h,
                     double* out, double* C, double* Ch, double* D, double* Dh) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s, t, A, Ah, Bp, Bh, J1, J1h, J2, J2h, J5, J5h, J6, J6h
    for k in range(n, n + 2):
        C[k] = 0.0
        Ch[k] = 0.0
        D[k] = 0.0
        Dh[k] = 0.0
    for k in range(n - 1, -1, -1):
        s = C[k + 1] + psi[k]
        C[k] = mu * s
        Ch[k] = mu * (Ch[k + 1] + 2.0 * s)
        t = D[k + 1] + phi[k]
        D[k] = mu * t
        Dh[k] = mu * (Dh[k + 1] + 2.0 * t)
    J5 = 0.0
    J5h = 0.0
    J6 = 0.0
    J6h = 0.0
    out[n - 1] = 0.0
    for k in range(n - 2, -1, -1):
        J5h = mu * (J5h + 2.0 * J5) + phi[k + 1] * Ch[k + 1]
        J5 = mu * J5 + phi[k + 1] * C[k + 1]
        if k <= n - 3:
            J6h = mu * (J6h + 2.0 * J6 + psi[k + 1] * (Dh[k + 2] + 2.0 * D[k + 2]))
            J6 = mu * (J6 + psi[k + 1] * D[k + 2])
        out[k] = J5h + J6h
    A = phi[0]
    Ah = 0.0
    Bp = psi[0]
    Bh = 0.0
    J1 = psi[0] * A
    J1h = 0.0
    J2 = 0.0
    J2h = 0.0
    out[0] = h * (out[0] + A * Ch[1] + Bp * Dh[1])
    for k in range(1, n):
        J2h = mu * (J2h + 2.0 * J2 + phi[k] * (Bh + 2.0 * Bp))
        J2 = mu * (J2 + phi[k] * Bp)
        Ah = mu * (Ah + 2.0 * A)
        A = mu * A + phi[k]
        Bh = mu * (Bh + 2.0 * Bp)
        Bp = mu * Bp + psi[k]
        J1h = mu * (J1h + 2.0 * J1) + psi[k] * Ah
        J1 = mu * J1 + psi[k] * A
        out[k] = h * (J1h + J2h + Ah * C[k + 1] + A * Ch[k + 1]
                      + Bh * D[k + 1] + Bp * Dh[k + 1] + out[k])


cdef void _ftvp_log_col(const double* phi, const double* psi, const double* a, const double* b,
                        const double* g, Py_ssize_t n, double L, bint weighted, double h,
                        double* out, double* C, double* Ch, double* D, double* Dh) noexcept nogil:
    cdef Py_ssize_t k
    cdef double ca, cb, cg, e1, e2, e3, e4, e5, e6
    cdef double A, Ah, Bp, Bh, J1, J1h, J2, J2h, J5, J5h, J6, J6h
    for k in range(n, n + 2):
        C[k] = 0.0
        Ch[k] = 0.0
        D[k] = 0.0
        Dh[k] = 0.0
    C[n - 1] = psi[n - 1]
    D[n - 1] = phi[n - 1]
    Ch[n - 1] = 2.0 * C[n - 1]
    Dh[n - 1] = 2.0 * D[n - 1]
    for k in range(n - 2, -1, -1):
        cb = exp(L + b[k + 1] - b[k])
        ca = exp(L + a[k + 1] - a[k])
        if weighted:
            Ch[k] = cb * (Ch[k + 1] + 2.0 * C[k + 1]) + 2.0 * psi[k]
            Dh[k] = ca * (Dh[k + 1] + 2.0 * D[k + 1]) + 2.0 * phi[k]
        C[k] = cb * C[k + 1] + psi[k]
        D[k] = ca * D[k + 1] + phi[k]
    J5 = 0.0
    J5h = 0.0
    J6 = 0.0
    J6h = 0.0
    out[n - 1] = 0.0
    for k in range(n - 2, -1, -1):
        cg = exp(L + g[k] - g[k + 1])
        e5 = phi[k + 1] * exp(L + a[k + 1] + b[k + 1] + g[k])
        if weighted:
            J5h = cg * (J5h + 2.0 * J5) + e5 * Ch[k + 1]
        J5 = cg * J5 + e5 * C[k + 1]
        if k <= n - 3:
            e6 = psi[k + 1] * exp(2.0 * L + b[k + 1] + a[k + 2] + g[k])
            if weighted:
                J6h = cg * (J6h + 2.0 * J6) + e6 * (Dh[k + 2] + 2.0 * D[k + 2])
            J6 = cg * J6 + e6 * D[k + 2]
        if weighted:
            out[k] = J5h + J6h
        else:
            out[k] = J5 + J6
    A = phi[0]
    Ah = 0.0
    Bp = psi[0]
    Bh = 0.0
    J1 = psi[0] * exp(a[0] + b[0] + g[0]) * A
    J1h = 0.0
    J2 = 0.0
    J2h = 0.0
    for k in range(n):
        if k > 0:
            cg = exp(L + g[k] - g[k - 1])
            e2 = phi[k] * exp(L + a[k] + b[k - 1] + g[k])
            ca = exp(L + a[k - 1] - a[k])
            cb = exp(L + b[k - 1] - b[k])
            e1 = psi[k] * exp(a[k] + b[k] + g[k])
            if weighted:
                J2h = cg * (J2h + 2.0 * J2) + e2 * (Bh + 2.0 * Bp)
                Ah = ca * (Ah + 2.0 * A)
                Bh = cb * (Bh + 2.0 * Bp)
            J2 = cg * J2 + e2 * Bp
            A = ca * A + phi[k]
            Bp = cb * Bp + psi[k]
            if weighted:
                J1h = cg * (J1h + 2.0 * J1) + e1 * Ah
            J1 = cg * J1 + e1 * A
        if k + 1 < n:
            e3 = exp(L + g[k] + a[k] + b[k + 1])
            e4 = exp(L + g[k] + b[k] + a[k + 1])
        else:
            e3 = 0.0
            e4 = 0.0
        if weighted:
            out[k] = h * (J1h + J2h + e3 * (Ah * C[k + 1] + A * Ch[k + 1])
                          + e4 * (Bh * D[k + 1] + Bp * Dh[k + 1]) + out[k])
        else:
            out[k] = J1 + J2 + e3 * A * C[k + 1] + e4 * Bp * D[k + 1] + out[k]


# ---------------------------------------------------------------- batched API

def _prep(*arrays):
    return [np.asfortranarray(x, dtype=np.float64) for x in arrays]


def ftvp1(phi, psi, double lam):
    phi, psi = _prep(phi, psi)
    cdef const double[::1, :] P = phi
    cdef const double[::1, :] Q = psi
    cdef Py_ssize_t n = P.shape[0], nb = P.shape[1], c
    out = np.empty((n, nb), order="F")
    if n == 0:
        return out
    cdef double[::1, :] O = out
    cdef double[::1] work = np.empty(2 * (n + 2))
    with nogil:
        for c in range(nb):
            _ftvp1_col(&P[0, c], &Q[0, c], n, lam * lam, &O[0, c], &work[0], &work[n + 2])
    return out


def ftvp2(phi, psi, double lam, double h):
    phi, psi = _prep(phi, psi)
    cdef const double[::1, :] P = phi
    cdef const double[::1, :] Q = psi
    cdef Py_ssize_t n = P.shape[0], nb = P.shape[1], c, m = n + 2
    out = np.empty((n, nb), order="F")
    if n == 0:
        return out
    cdef double[::1, :] O = out
    cdef double[::1] work = np.empty(4 * m)
    with nogil:
        for c in range(nb):
            _ftvp2_col(&P[0, c], &Q[0, c], n, lam * lam, h, &O[0, c],
                       &work[0], &work[m], &work[2 * m], &work[3 * m])
    return out


def _log_batched(phi, psi, a, b, g, double log_lam, bint weighted, double h):
    phi, psi, a, b, g = _prep(phi, psi, a, b, g)
    cdef const double[::1, :] P = phi
    cdef const double[::1, :] Q = psi
    cdef const double[::1, :] Av = a
    cdef const double[::1, :] Bv = b
    cdef const double[::1, :] Gv = g
    cdef Py_ssize_t n = P.shape[0], nb = P.shape[1], c, m = n + 2
    out = np.empty((n, nb), order="F")
    if n == 0:
        return out
    cdef double[::1, :] O = out
    cdef double[::1] work = np.empty(4 * m)
    with nogil:
        for c in range(nb):
            _ftvp_log_col(&P[0, c], &Q[0, c], &Av[0, c], &Bv[0, c], &Gv[0, c], n,
                          2.0 * log_lam, weighted, h, &O[0, c],
                          &work[0], &work[m], &work[2 * m], &work[3 * m])
    return out


def ftvp_log(phi, psi, a, b, g, double log_lam):
    return _log_batched(phi, psi, a, b, g, log_lam, False, 1.0)


def ftvp_log_cost(phi, psi, a, b, g, double log_lam, double h):
    return _log_batched(phi, psi, a, b, g, log_lam, True, h)


def scan_const(double mu, x, bint reverse=False):
    """y[k] = mu * y[k-1] + x[k] along axis 0 (y[k+1] when reverse)."""
    xa = np.asarray(x, dtype=np.float64)
    y = np.array(xa, dtype=np.float64, copy=True)
    cdef double[:, :] Y = y if y.ndim == 2 else y.reshape(-1, 1)
    cdef Py_ssize_t n = Y.shape[0], nb = Y.shape[1], k, c
    with nogil:
        if reverse:
            for k in range(n - 2, -1, -1):
                for c in range(nb):
                    Y[k, c] += mu * Y[k + 1, c]
        else:
            for k in range(1, n):
                for c in range(nb):
                    Y[k, c] += mu * Y[k - 1, c]
    return y


def scan_var(coef, x, bint reverse=False):
    """y[k] = coef[k] * y[k-1] + x[k]; reverse uses y[k+1]."""
    xa = np.asarray(x, dtype=np.float64)
    ca = np.asarray(coef, dtype=np.float64)
    y = np.array(xa, dtype=np.float64, copy=True)
    cdef double[:, :] Y = y if y.ndim == 2 else y.reshape(-1, 1)
    cdef const double[:, :] K = ca if ca.ndim == 2 else ca.reshape(-1, 1)
    cdef Py_ssize_t n = Y.shape[0], nb = Y.shape[1], k, c
    with nogil:
        if reverse:
            for k in range(n - 2, -1, -1):
                for c in range(nb):
                    Y[k, c] += K[k, c] * Y[k + 1, c]
        else:
            for k in range(1, n):
                for c in range(nb):
                    Y[k, c] += K[k, c] * Y[k - 1, c]
    return y


# ---------------------------------------------------------------- 2D product

def ftvp2d_1(phi, psi, double lam1, double lam2):
    """Product against the separable 2D kernel; fields are (N, M)."""
    phi, psi = _prep(phi, psi)
    cdef const double[::1, :] P = phi
    cdef const double[::1, :] Q = psi
    cdef Py_ssize_t n = P.shape[0], m = P.shape[1], k, i
    cdef double mu1 = lam1 * lam1, mu2 = lam2 * lam2
    out = np.zeros((n, m), order="F")
    if n == 0 or m == 0:
        return out
    cdef double[::1, :] O = out
    # column scans of the outer recursion
    cdef double[::1, :] A = np.empty((n, m), order="F")
    cdef double[::1, :] Bp = np.empty((n, m), order="F")
    cdef double[::1, :] C = np.zeros((n, m + 2), order="F")
    cdef double[::1, :] D = np.zeros((n, m + 2), order="F")
    cdef double[::1] J = np.zeros(n)
    cdef double[::1] tmp = np.empty(n)
    cdef double[::1] work = np.empty(2 * (n + 2))
    cdef double* w1 = &work[0]
    cdef double* w2 = &work[n + 2]
    with nogil:
        for i in range(n):
            A[i, 0] = P[i, 0]
            Bp[i, 0] = Q[i, 0]
        for k in range(1, m):
            for i in range(n):
                A[i, k] = mu2 * A[i, k - 1] + P[i, k]
                Bp[i, k] = mu2 * Bp[i, k - 1] + Q[i, k]
        for k in range(m - 1, -1, -1):
            for i in range(n):
                C[i, k] = mu2 * (C[i, k + 1] + Q[i, k])
                D[i, k] = mu2 * (D[i, k + 1] + P[i, k])
        # region 1: running sum of inner(A_k, psi_k)
        for k in range(m):
            _ftvp1_col(&A[0, k], &Q[0, k], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                J[i] = mu2 * J[i] + tmp[i] if k > 0 else tmp[i]
                O[i, k] += J[i]
        # region 2: inner(phi_k, Bp_{k-1}), k >= 1
        for i in range(n):
            J[i] = 0.0
        for k in range(1, m):
            _ftvp1_col(&P[0, k], &Bp[0, k - 1], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                J[i] = mu2 * (J[i] + tmp[i])
                O[i, k] += J[i]
        # regions 3 and 4 have no running sum
        for k in range(m - 1):
            _ftvp1_col(&A[0, k], &C[0, k + 1], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                O[i, k] += tmp[i]
            _ftvp1_col(&D[0, k + 1], &Bp[0, k], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                O[i, k] += tmp[i]
        # region 5, backward
        for i in range(n):
            J[i] = 0.0
        for k in range(m - 2, -1, -1):
            _ftvp1_col(&P[0, k + 1], &C[0, k + 1], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                J[i] = mu2 * J[i] + tmp[i]
                O[i, k] += J[i]
        # region 6, backward
        for i in range(n):
            J[i] = 0.0
        for k in range(m - 3, -1, -1):
            _ftvp1_col(&D[0, k + 2], &Q[0, k + 1], n, mu1, &tmp[0], w1, w2)
            for i in range(n):
                J[i] = mu2 * (J[i] + tmp[i])
                O[i, k] += J[i]
    return out


# ---------------------------------------------------------------- Sinkhorn loops

cdef inline bint _update(double* x, const double* marg, const double* denom, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef bint ok = True
    for i in range(n):
        if marg[i] == 0.0:
            x[i] = 0.0
        else:
            x[i] = marg[i] / denom[i]
            if not isfinite(x[i]):
                ok = False
    return ok


cdef inline double _violation(const double* x, const double* prod, const double* marg, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += fabs(x[i] * prod[i] - marg[i])
    return s


def sinkhorn3(const double[::1] u, const double[::1] v, const double[::1] w, double lam,
              double tol, Py_ssize_t itr_max, bint full, double[::1] phi, double[::1] psi,
              double[::1] chi, double[::1] residuals):
    """Fast 3-marginal loop; updates phi, psi, chi in place.

    Returns (iterations, status): 0 ok, 1 non-finite scaling, 2 non-finite residual.
    """
    cdef Py_ssize_t n = u.shape[0], t = 0
    cdef double mu = lam * lam, res = INFINITY
    cdef int status = 0
    cdef double[::1] work = np.empty(3 * (n + 2))
    cdef double* prod = &work[0]
    cdef double* w1 = &work[n + 2]
    cdef double* w2 = &work[2 * (n + 2)]
    with nogil:
        while t < itr_max and res > tol:
            t += 1
            _ftvp1_col(&psi[0], &chi[0], n, mu, prod, w1, w2)
            if not _update(&phi[0], &u[0], prod, n):
                status = 1
                break
            _ftvp1_col(&phi[0], &chi[0], n, mu, prod, w1, w2)
            if not _update(&psi[0], &v[0], prod, n):
                status = 1
                break
            _ftvp1_col(&phi[0], &psi[0], n, mu, prod, w1, w2)
            if not _update(&chi[0], &w[0], prod, n):
                status = 1
                break
            _ftvp1_col(&psi[0], &chi[0], n, mu, prod, w1, w2)
            res = _violation(&phi[0], prod, &u[0], n)
            _ftvp1_col(&phi[0], &chi[0], n, mu, prod, w1, w2)
            res += _violation(&psi[0], prod, &v[0], n)
            if full:
                _ftvp1_col(&phi[0], &psi[0], n, mu, prod, w1, w2)
                res += _violation(&chi[0], prod, &w[0], n)
            if not isfinite(res):
                status = 2
                break
            residuals[t - 1] = res
    return t, status


cdef void _dense_contract(const double* K, Py_ssize_t n1, Py_ssize_t n2, Py_ssize_t n3, int mode,
                          const double* x, const double* y, double* out) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s, xi, xy
    if mode == 0:
        for i in range(n1):
            s = 0.0
            for j in range(n2):
                xy = 0.0
                for k in range(n3):
                    xy += K[(i * n2 + j) * n3 + k] * y[k]
                s += x[j] * xy
            out[i] = s
    elif mode == 1:
        for j in range(n2):
            out[j] = 0.0
        for i in range(n1):
            xi = x[i]
            for j in range(n2):
                xy = 0.0
                for k in range(n3):
                    xy += K[(i * n2 + j) * n3 + k] * y[k]
                out[j] += xi * xy
    else:
        for k in range(n3):
            out[k] = 0.0
        for i in range(n1):
            for j in range(n2):
                xy = x[i] * y[j]
                for k in range(n3):
                    out[k] += K[(i * n2 + j) * n3 + k] * xy


def dense_sinkhorn3(const double[:, :, ::1] K, const double[::1] u, const double[::1] v,
                    const double[::1] w, double tol, Py_ssize_t itr_max, bint full,
                    double[::1] phi, double[::1] psi, double[::1] chi, double[::1] residuals):
    """Same loop as ``sinkhorn3`` over an explicit C-ordered kernel."""
    cdef Py_ssize_t n1 = K.shape[0], n2 = K.shape[1], n3 = K.shape[2], t = 0
    cdef double res = INFINITY
    cdef int status = 0
    cdef double[::1] work = np.empty(max(n1, n2, n3))
    cdef double* prod = &work[0]
    cdef const double* k0 = &K[0, 0, 0]
    with nogil:
        while t < itr_max and res > tol:
            t += 1
            _dense_contract(k0, n1, n2, n3, 0, &psi[0], &chi[0], prod)
            if not _update(&phi[0], &u[0], prod, n1):
                status = 1
                break
            _dense_contract(k0, n1, n2, n3, 1, &phi[0], &chi[0], prod)
            if not _update(&psi[0], &v[0], prod, n2):
                status = 1
                break
            _dense_contract(k0, n1, n2, n3, 2, &phi[0], &psi[0], prod)
            if not _update(&chi[0], &w[0], prod, n3):
                status = 1
                break
            _dense_contract(k0, n1, n2, n3, 0, &psi[0], &chi[0], prod)
            res = _violation(&phi[0], prod, &u[0], n1)
            _dense_contract(k0, n1, n2, n3, 1, &phi[0], &chi[0], prod)
            res += _violation(&psi[0], prod, &v[0], n2)
            if full:
                _dense_contract(k0, n1, n2, n3, 2, &phi[0], &psi[0], prod)
                res += _violation(&chi[0], prod, &w[0], n3)
            if not isfinite(res):
                status = 2
                break
            residuals[t - 1] = res
    return t, status
