"""Multinomial lattice approximation of a d-asset Black-Scholes market.

Each step has ``d + 1`` equally likely outcomes.  Outcome ``m`` (1-based in the
public API) moves asset ``i`` by the factor ``1 + w_n[m-1, i]`` where

    w_n[m] = (T/n) b + sqrt(T/n) * sigma @ w[m],
    w[m]   = sqrt(d+1) * A[m, :d],

and ``A`` is an orthogonal ``(d+1) x (d+1)`` matrix whose last column is
constant.  Rates are zero: all prices are already discounted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_DIM = 8


class LatticeError(ValueError):
    """The lattice is not usable at the requested depth."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Market description: horizon ``T`` (years), prices ``S0``, drift ``b``, volatility ``sigma``."""

    T: float
    S0: np.ndarray
    b: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        S0 = np.atleast_1d(np.asarray(self.S0, dtype=float))
        d = S0.size
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float).reshape(d, d) if np.size(self.sigma) == d * d else None
        if sigma is None:
            raise ValueError(f"sigma must be a {d}x{d} matrix")
        if b.size != d:
            raise ValueError(f"drift b must have {d} entries, got {b.size}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be > 0, got {self.T!r}")
        if np.any(S0 <= 0):
            raise ValueError("initial prices S0 must be > 0")
        if d > MAX_DIM:
            raise ValueError(f"at most {MAX_DIM} assets supported, got {d}")
        cond = np.linalg.cond(sigma)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"volatility matrix sigma is singular (condition number {cond:.3g})")
        for arr in (S0, b, sigma):
            arr.flags.writeable = False
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self) -> int:
        return self.S0.size

    @classmethod
    def single(cls, T: float, S0: float, b: float, sigma: float) -> "ModelParams":
        return cls(T=T, S0=[S0], b=[b], sigma=[[sigma]])


@dataclass(frozen=True, eq=False)
class JumpBasis:
    """Orthogonal matrix ``A``, jump vectors ``w`` and per-step returns ``w_n`` at depth ``n``."""

    A: np.ndarray
    w: np.ndarray
    n: int
    w_n: np.ndarray
    dt: float = field(default=0.0)

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def factors(self) -> np.ndarray:
        """Per-step gross price factors, shape ``(d+1, d)``."""
        return 1.0 + self.w_n


@dataclass(frozen=True, eq=False)
class RiskNeutralWeights:
    q: np.ndarray


def build_orthogonal(d: int) -> np.ndarray:
    """Householder reflection taking ``e_{d+1}`` to the normalized all-ones vector.

    The first ``d`` columns are negated afterwards so that for ``d = 1``
    outcome 1 is the up move.  Columns are orthonormal and the last one is
    ``(1/sqrt(d+1), ..., 1/sqrt(d+1))``.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    m = d + 1
    v = np.full(m, 1.0 / np.sqrt(m))
    u = -v.copy()
    u[-1] += 1.0
    H = np.eye(m) - 2.0 * np.outer(u, u) / (u @ u)
    H[:, :d] *= -1.0
    H[:, -1] = v
    return H


def _check_orthogonal(A: np.ndarray) -> None:
    m = A.shape[0]
    if A.shape != (m, m) or m < 2:
        raise ValueError("A must be a square matrix of size d+1 >= 2")
    if np.max(np.abs(A @ A.T - np.eye(m))) > 1e-12:
        raise ValueError("A is not orthogonal")
    if np.max(np.abs(A[:, -1] - 1.0 / np.sqrt(m))) > 1e-12:
        raise ValueError("last column of A must be constant 1/sqrt(d+1)")


def _step_returns(params: ModelParams, w: np.ndarray, n: int) -> np.ndarray:
    dt = params.T / n
    return dt * params.b + np.sqrt(dt) * w @ params.sigma.T


def min_depth(params: ModelParams, A: np.ndarray | None = None, n_max: int = 10**6) -> int:
    """Smallest ``n`` for which every per-step price factor is positive."""
    A = build_orthogonal(params.d) if A is None else np.asarray(A, dtype=float)
    w = np.sqrt(params.d + 1) * A[:, : params.d]
    for n in range(1, n_max + 1):
        if np.all(1.0 + _step_returns(params, w, n) > 0.0):
            return n
    raise LatticeError(f"no admissible depth up to {n_max}")


def jump_basis(params: ModelParams, n: int, A: np.ndarray | None = None) -> JumpBasis:
    """Jump vectors and per-step returns for the ``n``-step lattice."""
    if n < 1:
        raise LatticeError(f"depth n must be >= 1, got {n}")
    A = build_orthogonal(params.d) if A is None else np.array(A, dtype=float)
    _check_orthogonal(A)
    if A.shape[0] != params.d + 1:
        raise ValueError(f"A must be {params.d + 1}x{params.d + 1}")
    w = np.sqrt(params.d + 1) * A[:, : params.d]
    w_n = _step_returns(params, w, n)
    bad = np.argwhere(1.0 + w_n <= 0.0)
    if bad.size:
        m, i = bad[0]
        raise LatticeError(
            f"price factor of asset {i + 1} under outcome {m + 1} is {1.0 + w_n[m, i]:.6g} <= 0 "
            f"at n={n}; min_depth is {min_depth(params, A)}"
        )
    for arr in (A, w, w_n):
        arr.flags.writeable = False
    return JumpBasis(A=A, w=w, n=n, w_n=w_n, dt=params.T / n)


def stock_paths(basis: JumpBasis, params: ModelParams, path: Sequence[int]) -> np.ndarray:
    """Prices at times ``0, T/n, ..., kT/n`` along an outcome path; shape ``(k+1, d)``."""
    d = params.d
    out = np.empty((len(path) + 1, d))
    out[0] = params.S0
    for k, m in enumerate(path):
        if not 1 <= m <= d + 1:
            raise ValueError(f"outcome {m} outside 1..{d + 1}")
        out[k + 1] = out[k] * (1.0 + basis.w_n[m - 1])
    return out


def layer_prices(basis: JumpBasis, params: ModelParams, k: int) -> np.ndarray:
    """Price paths of every depth-``k`` node in base-(d+1) order; shape ``((d+1)^k, k+1, d)``.

    Node ``s`` at depth ``k`` has outcome digits ``s = sum (omega_j - 1) (d+1)^(k-j)``.
    """
    m = params.d + 1
    paths = params.S0.reshape(1, 1, -1).copy()
    f = basis.factors
    for _ in range(k):
        last = paths[:, -1:, :] * f[None, :, :]  # (N, m, d)
        nxt = np.concatenate(
            [np.repeat(paths, m, axis=0), last.reshape(-1, 1, params.d)], axis=1
        )
        paths = nxt
    return paths


def risk_neutral_weights(basis: JumpBasis) -> RiskNeutralWeights:
    """Unique one-step martingale weights: ``sum_m q_m w_n[m] = 0``, ``sum q = 1``."""
    d = basis.d
    M = np.vstack([basis.w_n.T, np.ones((1, d + 1))])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    try:
        q = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise LatticeError("per-step returns do not span R^d") from exc
    if np.any(q <= 0.0):
        raise LatticeError("lattice admits arbitrage at this depth; increase n")
    q.flags.writeable = False
    return RiskNeutralWeights(q=q)
