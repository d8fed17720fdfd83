"""Kernel backend selection.

The compiled module is used when it imports, unless ``FASTMMOT_BACKEND=python``
is set.  ``use(name)`` switches backends at runtime (tests and the backend
benchmark rely on it).
"""

import contextlib
import os

from . import _pykernels as python

try:
    from . import _ckernels as compiled
except ImportError:
    compiled = None

AVAILABLE = {"python": python}
if compiled is not None:
    AVAILABLE["compiled"] = compiled

if os.environ.get("FASTMMOT_BACKEND", "").lower() == "python" or compiled is None:
    kernels = python
else:
    kernels = compiled


def name() -> str:
    return "compiled" if kernels is compiled and compiled is not None else "python"


def set_backend(which: str):
    global kernels
    if which not in AVAILABLE:
        raise ValueError(f"backend {which!r} not available; have {sorted(AVAILABLE)}")
    kernels = AVAILABLE[which]


@contextlib.contextmanager
def use(which: str):
    prev = kernels
    set_backend(which)
    try:
        yield
    finally:
        globals()["kernels"] = prev
