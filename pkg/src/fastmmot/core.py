"""Domain types, configuration and validation shared by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MMOTError(Exception):
    """Base class; ``category`` is the machine-readable name used by the CLI."""

    @property
    def category(self) -> str:
        return type(self).__name__


class NegativeMass(MMOTError, ValueError):
    pass


class ZeroMass(MMOTError, ValueError):
    pass


class NonFinite(MMOTError, ValueError):
    pass


class InvalidParam(MMOTError, ValueError):
    pass


class ShapeMismatch(MMOTError, ValueError):
    pass


class SizeOverflow(MMOTError):
    pass


class FactorialBudget(MMOTError):
    pass


class ParseError(MMOTError):
    pass


class ZeroSignal(MMOTError, ValueError):
    pass


class NumericalOverflow(MMOTError, ArithmeticError):
    """A scaling vector or residual left the finite range.

    ``iteration`` is the 1-based iteration in which it happened and
    ``report`` holds the partial SolveReport up to the last finite residual.
    """

    def __init__(self, message, iteration=None, report=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report


@dataclass(frozen=True)
class Grid1D:
    n: int
    h: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParam(f"grid needs at least one point, got n={self.n}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParam(f"grid spacing must be positive, got h={self.h}")

    @classmethod
    def on_interval(cls, n: int, start: float = 0.0, stop: float = 1.0) -> "Grid1D":
        """Endpoint-inclusive sampling: h = (stop - start) / (n - 1)."""
        if n < 1:
            raise InvalidParam(f"grid needs at least one point, got n={n}")
        if n == 1:
            return cls(1, float(stop - start) if stop > start else 1.0)
        return cls(n, (stop - start) / (n - 1))

    def points(self, start: float = 0.0) -> np.ndarray:
        return start + self.h * np.arange(self.n)


def _as_weights(raw) -> np.ndarray:
    arr = np.array(raw, dtype=np.float64)
    if arr.size == 0:
        raise ShapeMismatch("marginal is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("marginal contains NaN or infinite entries")
    if np.any(arr < 0):
        raise NegativeMass("marginal contains negative entries")
    total = arr.sum()
    if total == 0:
        raise ZeroMass("marginal has zero total mass")
    # already normalized up to summation rounding: keep as is, so that
    # normalizing twice gives exactly the same vector as normalizing once
    if abs(total - 1.0) <= 4 * arr.size * np.finfo(np.float64).eps:
        return arr
    return arr / total


@dataclass(frozen=True, eq=False)
class Marginal1D:
    weights: np.ndarray

    def __post_init__(self):
        w = _as_weights(self.weights).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True, eq=False)
class Marginal2D:
    """Weights on an N x M grid; ``weights[i1, i2]``.  Flattening is column-major."""

    weights: np.ndarray
    h1: float = 1.0
    h2: float = 1.0

    def __post_init__(self):
        w = _as_weights(self.weights)
        if w.ndim != 2:
            raise ShapeMismatch(f"2D marginal needs a 2D array, got shape {w.shape}")
        w = np.asfortranarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        for name in ("h1", "h2"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise InvalidParam(f"{name} must be positive, got {val}")

    @classmethod
    def on_unit_square(cls, weights) -> "Marginal2D":
        w = np.asarray(weights)
        n, m = w.shape
        return cls(w, Grid1D.on_interval(n).h, Grid1D.on_interval(m).h)

    @property
    def shape(self):
        return self.weights.shape

    def flat(self) -> np.ndarray:
        return self.weights.ravel(order="F")


def validate_marginal(weights) -> Marginal1D:
    if isinstance(weights, Marginal1D):
        return weights
    return Marginal1D(weights)


@dataclass(frozen=True)
class KernelParams:
    """Decay factor lambda = exp(-h/eps) derived from spacing and regularization."""

    h: float
    epsilon: float
    lam: float = field(init=False)
    log_lam: float = field(init=False)

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParam(f"h must be positive and finite, got {self.h}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidParam(f"epsilon must be positive and finite, got {self.epsilon}")
        object.__setattr__(self, "log_lam", -self.h / self.epsilon)
        object.__setattr__(self, "lam", math.exp(-self.h / self.epsilon))


def kernel_params(h: float, epsilon: float) -> KernelParams:
    return KernelParams(h, epsilon)


@dataclass(frozen=True)
class CoefficientTable:
    """Exponent coefficients of the six order regions of the 3-marginal kernel.

    On region p the exponent |i-j|+|i-k|+|j-k| equals a_p*i + b_p*j + c_p*k.
    """

    a: tuple = (-2, 0, -2, 2, 0, 2)
    b: tuple = (0, -2, 2, -2, 2, 0)
    c: tuple = (2, 2, 0, 0, -2, -2)

    def __post_init__(self):
        if not (len(self.a) == len(self.b) == len(self.c) == 6):
            raise InvalidParam("coefficient table needs six rows")
        for p in range(6):
            if self.a[p] + self.b[p] + self.c[p] != 0:
                raise InvalidParam(f"row {p + 1} does not sum to zero")

    def row(self, p: int) -> tuple:
        """1-based row access, matching the region numbering."""
        return self.a[p - 1], self.b[p - 1], self.c[p - 1]


# "skip_last" sums the violations of every marginal but the last one, which the
# final update of each iteration already fixes; "full" includes it anyway
RESIDUAL_MODES = ("skip_last", "full")


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    tol: float = 1e-9
    itr_max: int = 100
    stabilize: bool = False
    tau: float = 1e30
    residual_mode: str = "skip_last"

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidParam(f"epsilon must be positive, got {self.epsilon}")
        if not self.tol > 0:
            raise InvalidParam(f"tol must be positive, got {self.tol}")
        if int(self.itr_max) != self.itr_max or self.itr_max < 1:
            raise InvalidParam(f"itr_max must be a positive integer, got {self.itr_max}")
        if not self.tau > 1:
            raise InvalidParam(f"tau must exceed 1, got {self.tau}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise InvalidParam(f"residual_mode must be one of {RESIDUAL_MODES}")

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "tol": self.tol,
            "itr_max": int(self.itr_max),
            "stabilize": bool(self.stabilize),
            "tau": self.tau,
            "residual_mode": self.residual_mode,
        }


@dataclass(frozen=True, eq=False)
class ScalingState:
    """Scaling vectors (one per marginal) and log potentials in cost units.

    The effective scaling of marginal j is ``scalings[j] * exp(potentials[j] / epsilon)``.
    """

    scalings: tuple
    potentials: tuple = None
    epsilon: float = 1.0

    def __post_init__(self):
        sc = tuple(np.array(s, dtype=np.float64) for s in self.scalings)
        if self.potentials is None:
            pots = tuple(np.zeros_like(s) for s in sc)
        else:
            pots = tuple(np.array(p, dtype=np.float64) for p in self.potentials)
            if len(pots) != len(sc) or any(p.shape != s.shape for p, s in zip(pots, sc)):
                raise ShapeMismatch("potentials must match the scaling shapes")
        for arr in sc + pots:
            arr.setflags(write=False)
        object.__setattr__(self, "scalings", sc)
        object.__setattr__(self, "potentials", pots)

    @property
    def order(self) -> int:
        return len(self.scalings)

    @property
    def has_potentials(self) -> bool:
        return any(np.any(p != 0) for p in self.potentials)

    def effective(self) -> tuple:
        return tuple(s * np.exp(p / self.epsilon) for s, p in zip(self.scalings, self.potentials))

    def log_effective(self) -> tuple:
        with np.errstate(divide="ignore"):
            return tuple(np.log(s) + p / self.epsilon for s, p in zip(self.scalings, self.potentials))


@dataclass(frozen=True)
class IterationTrace:
    """Residual and absorption count per iteration, with wall time at each
    iteration end spread evenly over the measured elapsed time."""

    residuals: tuple
    absorptions: tuple
    wall_time: tuple


@dataclass
class SolveReport:
    distance: float
    iterations: int
    residuals: list
    converged: bool
    elapsed: float
    config: dict
    absorptions: list = field(default_factory=list)
    solver: str = ""

    def trace(self) -> IterationTrace:
        n = len(self.residuals)
        absn = tuple(self.absorptions) if len(self.absorptions) == n else (0,) * n
        return IterationTrace(tuple(self.residuals), absn,
                              tuple(self.elapsed * (t + 1) / n for t in range(n)))

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "solver": self.solver,
            "distance": self.distance,
            "iterations": self.iterations,
            "converged": self.converged,
            "residuals": list(self.residuals),
            "absorptions": list(self.absorptions),
            "config": dict(self.config),
        }
        if include_timing:
            out["elapsed_s"] = self.elapsed
        return out


def check_same_length(arrays: Sequence[np.ndarray], what: str = "vectors") -> int:
    n = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != n:
            raise ShapeMismatch(f"{what} have different shapes: {n} vs {a.shape}")
    return n
