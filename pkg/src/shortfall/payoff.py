"""American payoff functionals ``F(t, path)`` on discrete price paths.

A path is an array of shape ``(..., k+1, d)`` holding prices at the grid
times up to ``t`` (leading axes batch several paths).  Prices are held
constant between grid times, so the payoff at ``t`` only sees rows ``0..k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .market import JumpBasis, ModelParams, stock_paths

KINDS = ("put_on_asset", "call_on_asset", "put_on_min", "call_on_max", "floating_lookback_put")
PATH_DEPENDENT = frozenset({"floating_lookback_put"})


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff kind, 1-based asset index where relevant, strike and optional cap."""

    kind: str
    strike: float = 0.0
    asset: int = 1
    cap: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not self.strike >= 0.0:
            raise ValueError(f"strike must be >= 0, got {self.strike!r}")
        if self.asset < 1:
            raise ValueError(f"asset index is 1-based, got {self.asset}")
        if self.cap is not None:
            if self.kind not in ("call_on_asset", "call_on_max"):
                raise ValueError(f"cap only applies to calls, not {self.kind}")
            if not self.cap > 0.0:
                raise ValueError(f"cap must be > 0, got {self.cap!r}")

    @property
    def path_dependent(self) -> bool:
        return self.kind in PATH_DEPENDENT

    def bound(self) -> float:
        """Uniform upper bound on the payoff (``inf`` when unbounded)."""
        if self.kind in ("put_on_asset", "put_on_min"):
            return float(self.strike)
        if self.cap is not None:
            return float(self.cap)
        return float("inf")

    def growth_constant(self) -> Optional[float]:
        """A constant ``C`` with ``F(t, x) <= C sup_s |x(s)|``, or None for bounded puts.

        Calls and the lookback put are dominated by a price component, so
        ``C = 1``.  Puts are bounded by the strike but not by a multiple of
        ``sup |x|`` near the zero path; use :meth:`bound` for them.
        """
        if self.kind in ("put_on_asset", "put_on_min"):
            return None
        return 1.0


def eval_F(spec: PayoffSpec, t: float, path) -> np.ndarray | float:
    """Payoff at time ``t`` of price path(s) ``path`` observed up to ``t``."""
    x = np.asarray(path, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-2] == 0:
        raise ValueError("empty price path")
    if not 0.0 <= t:
        raise ValueError(f"time must be >= 0, got {t!r}")
    d = x.shape[-1]
    if spec.kind in ("put_on_asset", "call_on_asset", "floating_lookback_put") and spec.asset > d:
        raise ValueError(f"asset {spec.asset} does not exist in a {d}-asset path")
    i = spec.asset - 1
    now = x[..., -1, :]
    if spec.kind == "put_on_asset":
        out = np.maximum(spec.strike - now[..., i], 0.0)
    elif spec.kind == "call_on_asset":
        out = np.maximum(now[..., i] - spec.strike, 0.0)
    elif spec.kind == "put_on_min":
        out = np.maximum(spec.strike - now.min(axis=-1), 0.0)
    elif spec.kind == "call_on_max":
        out = np.maximum(now.max(axis=-1) - spec.strike, 0.0)
    else:
        out = x[..., :, i].max(axis=-1) - now[..., i]
    if spec.cap is not None:
        out = np.minimum(out, spec.cap)
    if np.ndim(out) == 0:
        return float(out)
    return out


def lattice_payoff(spec: PayoffSpec, basis: JumpBasis, params: ModelParams, path: Sequence[int]) -> float:
    """Payoff at step ``k = len(path)`` of the lattice path with 1-based outcomes ``path``."""
    k = len(path)
    if k > basis.n:
        raise ValueError(f"path of length {k} exceeds lattice depth {basis.n}")
    prices = stock_paths(basis, params, path)
    return float(eval_F(spec, k * params.T / basis.n, prices))
