"""Entropic multi-marginal optimal transport with L1 cost in linear time per
Sinkhorn iteration, plus a dense reference implementation to check it."""

from . import _backend
from .core import (
    CoefficientTable,
    FactorialBudget,
    Grid1D,
    InvalidParam,
    IterationTrace,
    KernelParams,
    Marginal1D,
    Marginal2D,
    MMOTError,
    NegativeMass,
    NonFinite,
    NumericalOverflow,
    ParseError,
    ScalingState,
    ShapeMismatch,
    SinkhornConfig,
    SizeOverflow,
    SolveReport,
    ZeroMass,
    ZeroSignal,
    kernel_params,
    validate_marginal,
)
from .ftvp1d import contract_mode, ftvp1, ftvp2, ftvp_log, ftvp_log_cost
from .ftvp2d import fast_sinkhorn_2d, ftvp2d_1, ftvp2d_2, ftvp2d_log, ftvp2d_log_cost
from .multimarginal import fast_sinkhorn_lm, ftvp_lm, ftvp_lm_cost, region_table
from .solver import distance, fast_sinkhorn_3m, fast_sinkhorn_3m_stabilized, residual

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return _backend.name()
