"""Arithmetic operation counting for the reference recursions.

The scalar kernels in ``_pykernels`` are run on ``CountingFloat`` values; each
add, subtract or multiply involving one of them bumps a shared counter.
"""

from __future__ import annotations

from ._pykernels import ftvp1_scalar, ftvp2_scalar
from .signals import generator


class Counter:
    def __init__(self):
        self.add = 0
        self.mul = 0

    @property
    def total(self) -> int:
        return self.add + self.mul


class CountingFloat(float):
    __slots__ = ("counter",)

    def __new__(cls, value, counter):
        obj = super().__new__(cls, value)
        obj.counter = counter
        return obj

    def _wrap(self, value):
        return CountingFloat(value, self.counter)

    def __add__(self, other):
        self.counter.add += 1
        return self._wrap(float(self) + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        self.counter.add += 1
        return self._wrap(float(self) - float(other))

    def __rsub__(self, other):
        self.counter.add += 1
        return self._wrap(float(other) - float(self))

    def __mul__(self, other):
        self.counter.mul += 1
        return self._wrap(float(self) * float(other))

    __rmul__ = __mul__


def count_ops(kind: str, n: int, lam: float = 0.5, h: float = 1.0, seed: int = 0) -> Counter:
    """Run one product of length ``n`` on counting floats; ``kind`` is 'ftvp1' or 'ftvp2'."""
    counter = Counter()
    rng = generator(seed)
    phi = [CountingFloat(x, counter) for x in rng.random(n)]
    psi = [CountingFloat(x, counter) for x in rng.random(n)]
    lam_c = CountingFloat(lam, counter)
    if kind == "ftvp1":
        ftvp1_scalar(phi, psi, lam_c)
    elif kind == "ftvp2":
        ftvp2_scalar(phi, psi, lam_c, CountingFloat(h, counter))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return counter
