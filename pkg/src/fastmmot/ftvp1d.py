"""Linear-time products of the 3-marginal L1 kernel with two vectors.

All functions return the contraction with the free index last:
``out[k] = sum_{i,j} K[i, j, k] * phi[i] * psi[j]`` where
``K[i, j, k] = lam ** (|i-j| + |i-k| + |j-k|)``.  Because K is symmetric in
its three indices the same call serves every free mode.

Inputs may be 1D vectors or (N, B) batches contracted column by column.
"""

from __future__ import annotations

import math

import numpy as np

from . import _backend
from ._pykernels import ftvp1_scalar, ftvp2_scalar
from .core import InvalidParam, NonFinite, ShapeMismatch

MODES = {"i": 0, "j": 1, "k": 2}


def _prepare(*vectors):
    arrs = [np.asarray(v, dtype=np.float64) for v in vectors]
    shape = arrs[0].shape
    if arrs[0].ndim not in (1, 2) or arrs[0].shape[0] == 0:
        raise ShapeMismatch(f"expected a nonempty vector or (N, B) batch, got shape {shape}")
    for a in arrs[1:]:
        if a.shape != shape:
            raise ShapeMismatch(f"shape {a.shape} does not match {shape}")
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise NonFinite("input contains NaN or infinite entries")
    flat = arrs[0].ndim == 1
    cols = [a.reshape(-1, 1) if flat else a for a in arrs]
    return cols, flat


def _check_lam(lam):
    if not (0.0 <= lam <= 1.0):
        raise InvalidParam(f"decay factor must lie in [0, 1], got {lam}")


def _finish(out, flat):
    return out[:, 0].copy() if flat else out


def ftvp1(phi, psi, lam: float) -> np.ndarray:
    _check_lam(lam)
    (p, q), flat = _prepare(phi, psi)
    return _finish(_backend.kernels.ftvp1(p, q, lam), flat)


def ftvp2(phi, psi, lam: float, h: float) -> np.ndarray:
    """Cost-weighted product; the grid spacing ``h`` is applied here, once."""
    _check_lam(lam)
    if not h > 0:
        raise InvalidParam(f"h must be positive, got {h}")
    (p, q), flat = _prepare(phi, psi)
    return _finish(_backend.kernels.ftvp2(p, q, lam, h), flat)


def _log_lam(lam, log_lam):
    if log_lam is not None:
        return float(log_lam)
    _check_lam(lam)
    if lam == 0:
        raise InvalidParam("pass log_lam directly when lambda underflows to zero")
    return math.log(lam)


def ftvp_log(phi, psi, alpha, beta, gamma, lam: float = None, epsilon: float = 1.0,
             log_lam: float = None) -> np.ndarray:
    """Product against K scaled by exp((alpha_i + beta_j + gamma_k) / epsilon).

    ``log_lam`` (= -h/epsilon) may be given instead of ``lam`` so that
    decay factors below the double range still work.
    """
    if not epsilon > 0:
        raise InvalidParam(f"epsilon must be positive, got {epsilon}")
    ll = _log_lam(lam, log_lam)
    (p, q, a, b, g), flat = _prepare(phi, psi, alpha, beta, gamma)
    return _finish(_backend.kernels.ftvp_log(p, q, a / epsilon, b / epsilon, g / epsilon, ll), flat)


def ftvp_log_cost(phi, psi, alpha, beta, gamma, lam: float = None, epsilon: float = 1.0,
                  h: float = 1.0, log_lam: float = None) -> np.ndarray:
    """Cost-weighted counterpart of :func:`ftvp_log`."""
    if not epsilon > 0:
        raise InvalidParam(f"epsilon must be positive, got {epsilon}")
    if not h > 0:
        raise InvalidParam(f"h must be positive, got {h}")
    ll = _log_lam(lam, log_lam)
    (p, q, a, b, g), flat = _prepare(phi, psi, alpha, beta, gamma)
    return _finish(
        _backend.kernels.ftvp_log_cost(p, q, a / epsilon, b / epsilon, g / epsilon, ll, h), flat
    )


def contract_mode(phi_a, phi_b, lam: float, bound_modes=("i", "j")) -> np.ndarray:
    """K contracted with ``phi_a`` on the first bound mode and ``phi_b`` on the second.

    The kernel is invariant under any permutation of its indices, so every
    choice of bound modes reduces to the same product.
    """
    modes = [MODES.get(m, m) for m in bound_modes]
    if len(modes) != 2 or len(set(modes)) != 2 or not set(modes) <= {0, 1, 2}:
        raise InvalidParam(f"need two distinct modes out of i, j, k; got {bound_modes}")
    if modes[0] > modes[1]:
        phi_a, phi_b = phi_b, phi_a
    return ftvp1(phi_a, phi_b, lam)


def ftvp1_regions(phi, psi, lam: float) -> np.ndarray:
    """Per-region partial sums, shape (6, N); rows follow the region numbering 1..6."""
    _check_lam(lam)
    (p, q), _ = _prepare(phi, psi)
    regions = []
    ftvp1_scalar(p[:, 0].tolist(), q[:, 0].tolist(), lam, regions)
    return np.array(regions)


def ftvp2_regions(phi, psi, lam: float, h: float) -> np.ndarray:
    _check_lam(lam)
    (p, q), _ = _prepare(phi, psi)
    regions = []
    ftvp2_scalar(p[:, 0].tolist(), q[:, 0].tolist(), lam, h, regions)
    return np.array(regions)
