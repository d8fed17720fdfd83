"""Pure-Python kernels.

The scalar routines here are the reference form of the linear-time
recursions: plain loops over one vector, written so that every multiply and
add is explicit (the operation counter in ``opcount`` runs them on an
instrumented float type).  The batched functions at the bottom wrap them
with the same signatures as the compiled module, so either can serve as the
active backend.

Indices are 0-based.  ``mu`` is lambda squared, the decay of one grid step
in the three-marginal exponent.  Suffix arrays carry one or two trailing
zeros so the boundary terms fall out of the recurrences.
"""

import math

import numpy as np
from scipy.signal import lfilter

NAME = "python"


def _exp(x):
    # overflow gives inf, as in C, instead of raising
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def ftvp1_scalar(phi, psi, lam, regions=None):
    """out[k] = sum_{i,j} lam^(|i-j|+|i-k|+|j-k|) phi[i] psi[j].

    If ``regions`` is a list it receives the six per-region partial sums.
    """
    n = len(phi)
    mu = lam * lam
    # C[k] = sum_{j>=k} mu^(j-k+1) psi[j],  D[k] = same with phi
    C = [0.0] * (n + 2)
    D = [0.0] * (n + 2)
    for k in range(n - 1, -1, -1):
        C[k] = mu * (C[k + 1] + psi[k])
        D[k] = mu * (D[k + 1] + phi[k])
    J5 = [0.0] * n
    J6 = [0.0] * n
    for k in range(n - 2, -1, -1):
        J5[k] = mu * J5[k + 1] + phi[k + 1] * C[k + 1]
    for k in range(n - 3, -1, -1):
        J6[k] = mu * (J6[k + 1] + psi[k + 1] * D[k + 2])

    out = [0.0] * n
    keep = regions is not None
    if keep:
        R = [[0.0] * n for _ in range(6)]
    A = Bp = J1 = J2 = 0.0
    for k in range(n):
        if k == 0:
            A = phi[0]
            Bp = psi[0]
            J1 = psi[0] * A
        else:
            J2 = mu * (J2 + phi[k] * Bp)
            A = mu * A + phi[k]
            Bp = mu * Bp + psi[k]
            J1 = mu * J1 + psi[k] * A
        J3 = A * C[k + 1]
        J4 = Bp * D[k + 1]
        out[k] = J1 + J2 + J3 + J4 + J5[k] + J6[k]
        if keep:
            for p, val in enumerate((J1, J2, J3, J4, J5[k], J6[k])):
                R[p][k] = val
    if keep:
        regions[:] = R
    return out


def ftvp2_scalar(phi, psi, lam, h, regions=None):
    """Cost-weighted product: out[k] = sum_{i,j} c_ijk K_ijk phi[i] psi[j].

    Every accumulator X has a twin Xh holding the same sum with each term
    multiplied by its exponent (distance in grid steps).
    """
    n = len(phi)
    mu = lam * lam
    C = [0.0] * (n + 2)
    Ch = [0.0] * (n + 2)
    D = [0.0] * (n + 2)
    Dh = [0.0] * (n + 2)
    for k in range(n - 1, -1, -1):
        s = C[k + 1] + psi[k]
        C[k] = mu * s
        Ch[k] = mu * (Ch[k + 1] + 2.0 * s)
        t = D[k + 1] + phi[k]
        D[k] = mu * t
        Dh[k] = mu * (Dh[k + 1] + 2.0 * t)
    J5 = [0.0] * (n + 1)
    J5h = [0.0] * (n + 1)
    J6 = [0.0] * (n + 1)
    J6h = [0.0] * (n + 1)
    for k in range(n - 2, -1, -1):
        J5h[k] = mu * (J5h[k + 1] + 2.0 * J5[k + 1]) + phi[k + 1] * Ch[k + 1]
        J5[k] = mu * J5[k + 1] + phi[k + 1] * C[k + 1]
    for k in range(n - 3, -1, -1):
        J6h[k] = mu * (J6h[k + 1] + 2.0 * J6[k + 1] + psi[k + 1] * (Dh[k + 2] + 2.0 * D[k + 2]))
        J6[k] = mu * (J6[k + 1] + psi[k + 1] * D[k + 2])

    out = [0.0] * n
    keep = regions is not None
    if keep:
        R = [[0.0] * n for _ in range(6)]
    A = Ah = Bp = Bh = J1 = J1h = J2 = J2h = 0.0
    for k in range(n):
        if k == 0:
            A = phi[0]
            Bp = psi[0]
            J1 = psi[0] * A
        else:
            J2h = mu * (J2h + 2.0 * J2 + phi[k] * (Bh + 2.0 * Bp))
            J2 = mu * (J2 + phi[k] * Bp)
            Ah = mu * (Ah + 2.0 * A)
            A = mu * A + phi[k]
            Bh = mu * (Bh + 2.0 * Bp)
            Bp = mu * Bp + psi[k]
            J1h = mu * (J1h + 2.0 * J1) + psi[k] * Ah
            J1 = mu * J1 + psi[k] * A
        J3h = Ah * C[k + 1] + A * Ch[k + 1]
        J4h = Bh * D[k + 1] + Bp * Dh[k + 1]
        out[k] = h * (J1h + J2h + J3h + J4h + J5h[k] + J6h[k])
        if keep:
            for p, val in enumerate((J1h, J2h, J3h, J4h, J5h[k], J6h[k])):
                R[p][k] = h * val
    if keep:
        regions[:] = R
    return out


def ftvp_log_scalar(phi, psi, a, b, g, log_lam, weighted=False, h=1.0):
    """Product against the kernel rescaled by exp(a_i + b_j + g_k).

    ``a``, ``b``, ``g`` are potentials already divided by epsilon.  Every
    accumulator is stored relative to the potential at its own index, so
    only differences of neighbouring potentials enter the step factors.
    Each factor joining accumulators is the rescaled kernel entry of one
    index tuple, at most 1 when the potentials are dual feasible.
    With ``weighted`` the cost-weighted product is returned instead.
    """
    n = len(phi)
    L = 2.0 * log_lam
    exp = _exp
    C = [0.0] * (n + 2)
    Ch = [0.0] * (n + 2)
    D = [0.0] * (n + 2)
    Dh = [0.0] * (n + 2)
    C[n - 1] = psi[n - 1]
    D[n - 1] = phi[n - 1]
    Ch[n - 1] = 2.0 * C[n - 1]
    Dh[n - 1] = 2.0 * D[n - 1]
    for k in range(n - 2, -1, -1):
        cb = exp(L + b[k + 1] - b[k])
        C[k] = cb * C[k + 1] + psi[k]
        ca = exp(L + a[k + 1] - a[k])
        D[k] = ca * D[k + 1] + phi[k]
        if weighted:
            Ch[k] = cb * (Ch[k + 1] + 2.0 * C[k + 1]) + 2.0 * psi[k]
            Dh[k] = ca * (Dh[k + 1] + 2.0 * D[k + 1]) + 2.0 * phi[k]
    J5 = [0.0] * (n + 1)
    J5h = [0.0] * (n + 1)
    J6 = [0.0] * (n + 1)
    J6h = [0.0] * (n + 1)
    for k in range(n - 2, -1, -1):
        cg = exp(L + g[k] - g[k + 1])
        e5 = phi[k + 1] * exp(L + a[k + 1] + b[k + 1] + g[k])
        if weighted:
            J5h[k] = cg * (J5h[k + 1] + 2.0 * J5[k + 1]) + e5 * Ch[k + 1]
        J5[k] = cg * J5[k + 1] + e5 * C[k + 1]
    for k in range(n - 3, -1, -1):
        cg = exp(L + g[k] - g[k + 1])
        e6 = psi[k + 1] * exp(2.0 * L + b[k + 1] + a[k + 2] + g[k])
        if weighted:
            J6h[k] = cg * (J6h[k + 1] + 2.0 * J6[k + 1]) + e6 * (Dh[k + 2] + 2.0 * D[k + 2])
        J6[k] = cg * J6[k + 1] + e6 * D[k + 2]

    out = [0.0] * n
    A = Ah = Bp = Bh = J1 = J1h = J2 = J2h = 0.0
    for k in range(n):
        if k == 0:
            A = phi[0]
            Bp = psi[0]
            J1 = psi[0] * exp(a[0] + b[0] + g[0]) * A
        else:
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
            e3 = e4 = 0.0
        if weighted:
            J3h = e3 * (Ah * C[k + 1] + A * Ch[k + 1])
            J4h = e4 * (Bh * D[k + 1] + Bp * Dh[k + 1])
            out[k] = h * (J1h + J2h + J3h + J4h + J5h[k] + J6h[k])
        else:
            out[k] = J1 + J2 + e3 * A * C[k + 1] + e4 * Bp * D[k + 1] + J5[k] + J6[k]
    return out


# ---------------------------------------------------------------------------
# batched interface shared with the compiled module; arrays are (N, B) and the
# contraction runs along axis 0, one column at a time


def _columns(*arrays):
    return [np.asarray(x, dtype=np.float64) for x in arrays]


def ftvp1(phi, psi, lam):
    phi, psi = _columns(phi, psi)
    out = np.empty(phi.shape)
    for c in range(phi.shape[1]):
        out[:, c] = ftvp1_scalar(phi[:, c].tolist(), psi[:, c].tolist(), lam)
    return out


def ftvp2(phi, psi, lam, h):
    phi, psi = _columns(phi, psi)
    out = np.empty(phi.shape)
    for c in range(phi.shape[1]):
        out[:, c] = ftvp2_scalar(phi[:, c].tolist(), psi[:, c].tolist(), lam, h)
    return out


def _ftvp_log_batched(phi, psi, a, b, g, log_lam, weighted, h):
    phi, psi, a, b, g = _columns(phi, psi, a, b, g)
    out = np.empty(phi.shape)
    for c in range(phi.shape[1]):
        out[:, c] = ftvp_log_scalar(
            phi[:, c].tolist(), psi[:, c].tolist(),
            a[:, c].tolist(), b[:, c].tolist(), g[:, c].tolist(),
            log_lam, weighted, h,
        )
    return out


def ftvp_log(phi, psi, a, b, g, log_lam):
    return _ftvp_log_batched(phi, psi, a, b, g, log_lam, False, 1.0)


def ftvp_log_cost(phi, psi, a, b, g, log_lam, h):
    return _ftvp_log_batched(phi, psi, a, b, g, log_lam, True, h)


def scan_const(mu, x, reverse=False):
    """y[k] = mu * y[k-1] + x[k] along axis 0 (y[k+1] when reverse)."""
    x = np.asarray(x, dtype=np.float64)
    if reverse:
        return lfilter([1.0], [1.0, -mu], x[::-1], axis=0)[::-1].copy()
    return lfilter([1.0], [1.0, -mu], x, axis=0)


def scan_var(coef, x, reverse=False):
    """y[k] = coef[k] * y[k-1] + x[k]; reverse uses y[k+1]; coef[0] (coef[-1]) unused."""
    x = np.asarray(x, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    y = np.empty_like(x)
    n = x.shape[0]
    if n == 0:
        return y
    if reverse:
        y[n - 1] = x[n - 1]
        for k in range(n - 2, -1, -1):
            y[k] = coef[k] * y[k + 1] + x[k]
    else:
        y[0] = x[0]
        for k in range(1, n):
            y[k] = coef[k] * y[k - 1] + x[k]
    return y


def ftvp2d_1(phi, psi, lam1, lam2):
    from .ftvp2d import sweep

    log_mu = 2.0 * math.log(lam2) if lam2 > 0 else -math.inf
    return sweep(phi, psi, log_mu, lambda x, y, p: ftvp1(x, y, lam1))


def _divide(u, d):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = u / d
    q[u == 0] = 0.0
    return q


def _sinkhorn3_loop(contract, u, v, w, tol, itr_max, full, phi, psi, chi, residuals):
    res = math.inf
    t = 0
    while t < itr_max and res > tol:
        t += 1
        phi[:] = _divide(u, contract(0, psi, chi))
        if not np.all(np.isfinite(phi)):
            return t, 1
        psi[:] = _divide(v, contract(1, phi, chi))
        if not np.all(np.isfinite(psi)):
            return t, 1
        chi[:] = _divide(w, contract(2, phi, psi))
        if not np.all(np.isfinite(chi)):
            return t, 1
        res = (np.abs(phi * contract(0, psi, chi) - u).sum()
               + np.abs(psi * contract(1, phi, chi) - v).sum())
        if full:
            res += np.abs(chi * contract(2, phi, psi) - w).sum()
        if not math.isfinite(res):
            return t, 2
        residuals[t - 1] = res
    return t, 0


def sinkhorn3(u, v, w, lam, tol, itr_max, full, phi, psi, chi, residuals):
    """Fast 3-marginal loop; updates phi, psi, chi in place.

    Returns (iterations, status) with status 0 = ok, 1 = non-finite scaling,
    2 = non-finite residual (in the iteration reported).
    """

    def contract(mode, x, y):
        return np.array(ftvp1_scalar(x.tolist(), y.tolist(), lam))

    return _sinkhorn3_loop(contract, u, v, w, tol, itr_max, full, phi, psi, chi, residuals)


def dense_sinkhorn3(K, u, v, w, tol, itr_max, full, phi, psi, chi, residuals):
    """Same loop over an explicit (N1, N2, N3) kernel."""
    K = np.asarray(K, dtype=np.float64)

    def contract(mode, x, y):
        if mode == 0:
            return np.einsum("ijk,j,k->i", K, x, y)
        if mode == 1:
            return np.einsum("ijk,i,k->j", K, x, y)
        return np.einsum("ijk,i,j->k", K, x, y)

    return _sinkhorn3_loop(contract, u, v, w, tol, itr_max, full, phi, psi, chi, residuals)
