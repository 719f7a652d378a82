"""Minimal shortfall risk and risk-minimizing hedges for American options on multinomial lattices."""

from .plfunc import PiecewiseLinear, DomainError, CoverageError
from .market import ModelParams, JumpBasis, LatticeError, build_orthogonal, jump_basis, min_depth
from .payoff import PayoffSpec, eval_F
from .dp import solve, shortfall_risk, rollout, Portfolio, snell_risk_of_portfolio

__all__ = [
    "PiecewiseLinear", "DomainError", "CoverageError",
    "ModelParams", "JumpBasis", "LatticeError", "build_orthogonal", "jump_basis", "min_depth",
    "PayoffSpec", "eval_F",
    "solve", "shortfall_risk", "rollout", "Portfolio", "snell_risk_of_portfolio",
]
__version__ = "0.1.0"
