"""Test-instance generators: seeded random marginals, Ricker wavelets, images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Grid1D,
    InvalidParam,
    Marginal1D,
    Marginal2D,
    NegativeMass,
    NonFinite,
    ShapeMismatch,
    ZeroMass,
    ZeroSignal,
)


def generator(seed: int) -> np.random.Generator:
    """PCG64 stream; numpy keeps its output stable across releases and platforms."""
    return np.random.Generator(np.random.PCG64(seed))


def random_marginal(n: int, seed: int = 0) -> Marginal1D:
    if n < 1:
        raise InvalidParam(f"n must be at least 1, got {n}")
    return Marginal1D(generator(seed).random(n))


def random_marginal_2d(n: int, m: int, seed: int = 0) -> Marginal2D:
    if n < 1 or m < 1:
        raise InvalidParam(f"grid must be at least 1 x 1, got {n} x {m}")
    vals = generator(seed).random((m, n)).T  # column-major draw order
    return Marginal2D.on_unit_square(vals)


def random_instance(n: int, count: int = 3, seed: int = 0) -> list:
    """``count`` marginals drawn in sequence from one stream."""
    rng = generator(seed)
    return [Marginal1D(rng.random(n)) for _ in range(count)]


def random_instance_2d(n: int, m: int, count: int = 3, seed: int = 0) -> list:
    rng = generator(seed)
    return [Marginal2D.on_unit_square(rng.random((m, n)).T) for _ in range(count)]


def ricker(t, A: float = 1.0, F0: float = 1.0):
    arg = (math.pi * F0 * np.asarray(t, dtype=np.float64)) ** 2
    out = A * (1.0 - 2.0 * arg) * np.exp(-arg)
    return float(out) if np.ndim(out) == 0 else out


def normalize_signal(f, delta: float = 0.0) -> Marginal1D:
    """(f^2 / |f^2|_1 + delta) / (1 + n delta), n the sample count."""
    if delta < 0:
        raise InvalidParam(f"delta must be nonnegative, got {delta}")
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(f)):
        raise NonFinite("signal contains NaN or infinite samples")
    sq = f * f
    total = sq.sum()
    if total == 0:
        raise ZeroSignal("signal is identically zero")
    return Marginal1D((sq / total + delta) / (1.0 + f.size * delta))


@dataclass(frozen=True)
class RickerConfig:
    A: float = 1.0
    F0: float = 1.0
    tau: float = 0.0
    delta: float = 1e-3
    interval: tuple = (-2.0, 2.0)
    n: int = 100

    def __post_init__(self):
        if not self.F0 > 0:
            raise InvalidParam("F0 must be positive")
        if self.n < 2:
            raise InvalidParam("need at least two samples")
        if self.delta < 0:
            raise InvalidParam("delta must be nonnegative")

    def grid(self) -> Grid1D:
        return Grid1D.on_interval(self.n, *self.interval)

    def times(self) -> np.ndarray:
        return np.linspace(self.interval[0], self.interval[1], self.n)

    def marginal(self) -> Marginal1D:
        return normalize_signal(ricker(self.times() - self.tau, self.A, self.F0), self.delta)


def ricker_instance(n: int = 100, shifts=(0.0, 0.75, 1.5), delta: float = 1e-3,
                    interval=(-2.0, 2.0)):
    """Shifted wavelets on one grid; returns (marginals, grid)."""
    cfgs = [RickerConfig(tau=s, delta=delta, interval=tuple(interval), n=n) for s in shifts]
    return [c.marginal() for c in cfgs], cfgs[0].grid()


def image_to_marginal(pixels, delta: float = 0.0) -> Marginal2D:
    """Normalize a grayscale grid to unit mass on [0,1]^2.

    ``delta`` is added to every cell of the normalized image before the
    final renormalization, which keeps dark cells from carrying zero mass.
    """
    p = np.asarray(pixels, dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise ShapeMismatch(f"expected a nonempty 2D pixel grid, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise NonFinite("image contains NaN or infinite values")
    if np.any(p < 0):
        raise NegativeMass("image contains negative values")
    if delta < 0:
        raise InvalidParam(f"delta must be nonnegative, got {delta}")
    total = p.sum()
    if total == 0:
        if delta == 0:
            raise ZeroMass("image is entirely black")
        q = np.zeros_like(p)
    else:
        q = p / total
    return Marginal2D.on_unit_square(q + delta)


def synthetic_image(n: int, m: int = None, seed: int = 0, blobs: int = 3) -> np.ndarray:
    """Sum of random Gaussian blobs scaled to 0..255, for demos and tests."""
    m = n if m is None else m
    rng = generator(seed)
    y, x = np.mgrid[0:n, 0:m]
    img = np.zeros((n, m))
    for _ in range(blobs):
        cy, cx = rng.random(2) * [n, m]
        width = (0.05 + 0.15 * rng.random()) * max(n, m)
        img += rng.random() * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * width**2))
    return np.round(255.0 * img / img.max())
