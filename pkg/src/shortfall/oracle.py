"""Brute-force reference computations for tiny lattices.

Nothing here calls into :mod:`shortfall.dp` or the piecewise-linear
machinery: the tree, the payoffs, the martingale weights and the polytope
vertices are all rebuilt from the jump basis so that agreement with the
dynamic program is evidence rather than self-confirmation.

Shortfall risk is bracketed by a grid-restricted dynamic program.  Hedges
come from a barycentric grid on the (simplex) hedge set and wealth is rounded
down to a uniform grid.  Rounding down discards money; a self-financing
strategy that parks the discarded amount in the bond does at least as well,
so the grid value is a true upper bound on the risk.  The lower bound
subtracts a Lipschitz slack for the grid spacing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .market import JumpBasis, ModelParams
from .payoff import PayoffSpec


class BudgetError(RuntimeError):
    """The requested brute-force search is larger than the configured budget."""

    def __init__(self, size: int, budget: int, what: str = "oracle grid search", unit: str = "evaluations"):
        super().__init__(f"{what} needs about {size:,} {unit}, budget is {budget:,}")
        self.size = size
        self.budget = budget


@dataclass(frozen=True)
class GridSearchConfig:
    """Resolution of the brute-force search.

    ``hedge_resolution`` is the number of grid intervals along each edge of
    the hedge simplex; ``wealth_resolution`` the number of wealth cells on
    ``[0, max payoff]``.  Doubling both refines the grid by nesting.
    """

    hedge_resolution: int = 16
    wealth_resolution: int = 256
    n_max: int = 3
    budget: int = 50_000_000

    def __post_init__(self):
        if self.hedge_resolution < 2 or self.wealth_resolution < 2:
            raise ValueError("grid resolutions must be >= 2")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")

    def doubled(self) -> "GridSearchConfig":
        return GridSearchConfig(2 * self.hedge_resolution, 2 * self.wealth_resolution, self.n_max, self.budget)


# --------------------------------------------------------------------------- #
# Tree and payoffs
# --------------------------------------------------------------------------- #

def tree_prices(basis: JumpBasis, params: ModelParams, k: int) -> np.ndarray:
    """Price paths of all depth-``k`` nodes, shape ``((d+1)^k, k+1, d)``.

    Nodes are ordered lexicographically by outcome sequence, first step most
    significant.
    """
    m = basis.d + 1
    factors = 1.0 + np.asarray(basis.w_n, dtype=float)
    seqs = np.array(list(itertools.product(range(m), repeat=k)), dtype=np.int64).reshape(m**k, k)
    steps = factors[seqs]  # (N, k, d)
    ones = np.ones((seqs.shape[0], 1, basis.d))
    return params.S0[None, None, :] * np.cumprod(np.concatenate([ones, steps], axis=1), axis=1)


def payoff_values(spec: PayoffSpec, prices: np.ndarray) -> np.ndarray:
    """Payoff of each price path in a ``(N, k+1, d)`` batch."""
    i = spec.asset - 1
    last = prices[:, -1, :]
    kind = spec.kind
    if kind == "put_on_asset":
        v = spec.strike - last[:, i]
    elif kind == "call_on_asset":
        v = last[:, i] - spec.strike
    elif kind == "put_on_min":
        v = spec.strike - np.min(last, axis=1)
    elif kind == "call_on_max":
        v = np.max(last, axis=1) - spec.strike
    elif kind == "floating_lookback_put":
        v = np.max(prices[:, :, i], axis=1) - last[:, i]
    else:
        raise ValueError(f"unknown payoff kind {kind!r}")
    v = np.maximum(v, 0.0)
    if spec.cap is not None:
        v = np.minimum(v, spec.cap)
    return v


def tree_payoffs(spec: PayoffSpec, basis: JumpBasis, params: ModelParams) -> list[np.ndarray]:
    """Payoff arrays for layers ``0..n``."""
    return [payoff_values(spec, tree_prices(basis, params, k)) for k in range(basis.n + 1)]


def martingale_weights(basis: JumpBasis) -> np.ndarray:
    """Positive ``q`` with ``sum q = 1`` and ``sum q_i w_n[i] = 0``, via the null space of ``w_n^T``."""
    W = np.asarray(basis.w_n, dtype=float).T
    _, _, vt = np.linalg.svd(W)
    q = vt[-1]
    q = q / q.sum()
    if np.any(q <= 0.0) or np.linalg.norm(W @ q) > 1e-10 * max(1.0, np.abs(W).max()):
        raise ValueError("per-step returns admit no strictly positive martingale weights")
    return q


# --------------------------------------------------------------------------- #
# Optimal stopping
# --------------------------------------------------------------------------- #

def snell_value(weights, payoffs) -> float:
    """Optimal stopping value of ``payoffs`` (one array per layer) under i.i.d. step ``weights``."""
    w = np.asarray(weights, dtype=float)
    m = w.size
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector")
    U = np.asarray(payoffs[-1], dtype=float)
    for layer in reversed(payoffs[:-1]):
        U = np.maximum(np.asarray(layer, dtype=float), U.reshape(-1, m) @ w)
    return float(U[0])


def uniform_snell_value(spec: PayoffSpec, basis: JumpBasis, params: ModelParams) -> float:
    """Optimal stopping value under equal outcome weights (the zero-capital risk)."""
    m = basis.d + 1
    return snell_value(np.full(m, 1.0 / m), tree_payoffs(spec, basis, params))


def american_price(spec: PayoffSpec, basis: JumpBasis, params: ModelParams) -> float:
    """Complete-market price: optimal stopping under the martingale weights."""
    return snell_value(martingale_weights(basis), tree_payoffs(spec, basis, params))


def binomial_american_price(S0: float, strike: float, up: float, down: float, n: int,
                            kind: str = "put") -> float:
    """Recombining binomial price with zero interest, ``q = (1 - down) / (up - down)``."""
    if not down < 1.0 < up or down <= 0.0:
        raise ValueError(f"need 0 < down < 1 < up, got down={down}, up={up}")
    q = (1.0 - down) / (up - down)
    sign = -1.0 if kind == "put" else 1.0
    if kind not in ("put", "call"):
        raise ValueError(f"kind must be 'put' or 'call', got {kind!r}")

    def exercise(k):
        j = np.arange(k + 1)
        S = S0 * up ** (k - j) * down**j
        return np.maximum(sign * (S - strike), 0.0)

    V = exercise(n)
    for k in range(n - 1, -1, -1):
        V = np.maximum(exercise(k), q * V[:-1] + (1.0 - q) * V[1:])
    return float(V[0])


# --------------------------------------------------------------------------- #
# Hedge set
# --------------------------------------------------------------------------- #

def hedge_vertices(basis: JumpBasis) -> np.ndarray:
    """Vertices of ``{u : 1 + <u, w_n[i]> >= 0 for all i}``, one per omitted constraint."""
    W = np.asarray(basis.w_n, dtype=float)
    m, d = W.shape
    out = []
    for skip in range(m):
        M = np.delete(W, skip, axis=0)
        out.append(np.linalg.solve(M, -np.ones(d)))
    return np.array(out)


def hedge_grid(basis: JumpBasis, resolution: int) -> np.ndarray:
    """Barycentric grid on the hedge simplex (includes the vertices) plus the zero hedge."""
    V = hedge_vertices(basis)
    m = V.shape[0]
    pts = []
    for c in itertools.product(range(resolution + 1), repeat=m - 1):
        if sum(c) <= resolution:
            lam = np.array(list(c) + [resolution - sum(c)], dtype=float) / resolution
            pts.append(lam @ V)
    pts.append(np.zeros(V.shape[1]))
    return np.array(pts)


def covering_radius(basis: JumpBasis, resolution: int) -> float:
    """Bound on the distance from any hedge in the simplex to the nearest grid point.

    Rounding barycentric weights to multiples of ``1/r`` with the
    largest-remainder rule moves each weight by less than ``1/r``.
    """
    V = hedge_vertices(basis)
    c = V.mean(axis=0)
    return V.shape[0] / resolution * float(np.max(np.linalg.norm(V - c, axis=1)))


# --------------------------------------------------------------------------- #
# Grid search
# --------------------------------------------------------------------------- #

def search_size(basis: JumpBasis, cfg: GridSearchConfig) -> int:
    m = basis.d + 1
    G = math.comb(cfg.hedge_resolution + m - 1, m - 1) + 1
    return basis.n * m ** basis.n * G * (cfg.wealth_resolution + 1)


def _round_down(grid: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Index of the largest grid wealth not above ``z`` (capped at the top)."""
    return np.searchsorted(grid, z, side="right") - 1


def brute_force_risk(x: float, spec: PayoffSpec, basis: JumpBasis, params: ModelParams,
                     cfg: GridSearchConfig = GridSearchConfig()) -> tuple[float, float]:
    """``(upper, lower)`` bracketing the minimal shortfall risk at capital ``x``."""
    if x < 0:
        raise ValueError(f"capital must be >= 0, got {x!r}")
    n = basis.n
    if n > cfg.n_max:
        raise BudgetError(search_size(basis, cfg), cfg.budget, f"depth {n} exceeds n_max={cfg.n_max};")
    size = search_size(basis, cfg)
    if size > cfg.budget:
        raise BudgetError(size, cfg.budget)

    m = basis.d + 1
    W = np.asarray(basis.w_n, dtype=float)
    phi = tree_payoffs(spec, basis, params)
    ymax = max(float(p.max()) for p in phi)
    if ymax <= 0.0:
        return 0.0, 0.0
    if x == 0.0:
        v = snell_value(np.full(m, 1.0 / m), phi)
        return v, v

    U = hedge_grid(basis, cfg.hedge_resolution)
    growth = np.maximum(1.0 + U @ W.T, 0.0)  # (G, m)
    cells = cfg.wealth_resolution
    dy = ymax / cells
    y = np.arange(cells + 1) * dy
    idx = _round_down(y, y[:, None, None] * growth[None])  # (Y, G, m)

    val = np.maximum(phi[n][:, None] - y[None, :], 0.0)  # (nodes, Y)
    for k in range(n - 1, 0, -1):
        nodes = m**k
        kids = val.reshape(nodes, m, cells + 1)
        cont = np.zeros((nodes, cells + 1, growth.shape[0]))
        for i in range(m):
            cont += kids[:, i, :][:, idx[:, :, i]]
        cont /= m
        val = np.maximum(phi[k][:, None] - y[None, :], cont.min(axis=2))

    root_idx = _round_down(y, x * growth)  # (G, m)
    kids = val.reshape(m, cells + 1)
    cont = np.mean([kids[i, root_idx[:, i]] for i in range(m)], axis=0)
    upper = max(float(phi[0][0]) - x, float(cont.min()))
    if x >= ymax:
        upper = 0.0

    # slack: wealth rounding and hedge spacing, propagated with a
    # Lipschitz bound on the true risk in wealth
    V = hedge_vertices(basis)
    lam = float(np.max(1.0 + V @ W.T))
    drift = max(1.0, float(np.max(1.0 + V @ W.mean(axis=0))))
    delta = covering_radius(basis, cfg.hedge_resolution)
    wmax = float(np.max(np.linalg.norm(W, axis=1)))
    slack = 0.0
    for k in range(n):
        lip = drift ** (n - k - 1)
        wealth = x if k == 0 else min(ymax, x * lam**k)
        slack += lip * (wealth * wmax * delta + dy)
    return upper, max(0.0, upper - slack)
