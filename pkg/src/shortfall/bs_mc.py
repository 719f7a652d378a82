"""Monte Carlo under geometric Brownian motion.

Paths are drawn in fixed blocks of ``BLOCK`` paths; block ``j`` of stream
``s`` uses its own ``SeedSequence(seed, spawn_key=(s, j))`` generator, so a
given path never depends on how many paths are requested after it or on how
the work is split.  Averages use numpy's pairwise summation over a fixed
order and are therefore reproducible for a fixed seed.

Shortfall estimates are taken over stopping rules that act on the time grid
only, so they bound the continuous-time worst case from below.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .market import JumpBasis, ModelParams
from .payoff import PayoffSpec, eval_F

BLOCK = 4096
MAIN, PILOT = 0, 1

# hedge(k, prices up to time k, wealth) -> positions as fractions of wealth, shape (N, d)
Hedge = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SimConfig:
    n_paths: int
    n_grid: int
    seed: int
    params: ModelParams

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.n_grid < 1:
            raise ValueError(f"n_grid must be >= 1, got {self.n_grid}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    @property
    def dt(self) -> float:
        return self.params.T / self.n_grid


@dataclass(frozen=True, eq=False)
class Ensemble:
    times: np.ndarray      # (n_grid + 1,)
    dW: np.ndarray         # (N, n_grid, d) Brownian increments
    prices: np.ndarray     # (N, n_grid + 1, d)

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo mean with its standard error."""

    label: str
    estimate: float
    stderr: float
    n_paths: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.estimate - target) <= k * self.stderr


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return m, se


def _increments(cfg: SimConfig, stream: int) -> np.ndarray:
    d = cfg.params.d
    blocks = []
    for j in range(-(-cfg.n_paths // BLOCK)):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(stream, j)))
        blocks.append(rng.standard_normal((BLOCK, cfg.n_grid, d)))
    z = np.concatenate(blocks)[: cfg.n_paths]
    return z * np.sqrt(cfg.dt)


def gbm_paths(cfg: SimConfig, stream: int = MAIN) -> Ensemble:
    """Exact GBM samples at the grid times."""
    p = cfg.params
    dW = _increments(cfg, stream)
    W = np.concatenate([np.zeros((cfg.n_paths, 1, p.d)), np.cumsum(dW, axis=1)], axis=1)
    t = np.arange(cfg.n_grid + 1) * cfg.dt
    drift = p.b - 0.5 * np.sum(p.sigma**2, axis=1)
    logS = np.log(p.S0) + W @ p.sigma.T + t[None, :, None] * drift[None, None, :]
    return Ensemble(times=t, dW=dW, prices=np.exp(logS))


def market_price_of_risk(params: ModelParams) -> np.ndarray:
    """``theta`` solving ``sigma theta = b``."""
    return np.linalg.solve(params.sigma, params.b)


def density_path(dW: np.ndarray, params: ModelParams, dt: float) -> np.ndarray:
    """Density process of the martingale measure at the grid times, shape ``(N, n_grid + 1)``."""
    theta = market_price_of_risk(params)
    W = np.concatenate([np.zeros((dW.shape[0], 1, dW.shape[2])), np.cumsum(dW, axis=1)], axis=1)
    t = np.arange(dW.shape[1] + 1) * dt
    return np.exp(-0.5 * float(theta @ theta) * t[None, :] - W @ theta)


def martingale_checks(cfg: SimConfig) -> list[MCEstimate]:
    """``E[M(T)]`` and ``E[M(T) S_i(T)] / S_i(0)``; both should be 1."""
    ens = gbm_paths(cfg)
    M = density_path(ens.dW, cfg.params, cfg.dt)[:, -1]
    out = [MCEstimate("E[M(T)]", *_mean_se(M), cfg.n_paths, cfg.seed)]
    for i in range(cfg.params.d):
        v = M * ens.prices[:, -1, i] / cfg.params.S0[i]
        out.append(MCEstimate(f"E[M(T)S_{i + 1}(T)]/S_{i + 1}(0)", *_mean_se(v), cfg.n_paths, cfg.seed))
    return out


# --------------------------------------------------------------------------- #
# Hedges
# --------------------------------------------------------------------------- #

def zero_hedge(k: int, prices: np.ndarray, wealth: np.ndarray) -> np.ndarray:
    return np.zeros((prices.shape[0], prices.shape[2]))


def lattice_policy_hedge(policy, basis: JumpBasis) -> Hedge:
    """Follow a lattice policy along simulated paths.

    Each simulated step is mapped to the lattice outcome whose log price
    factor is nearest to the observed log return; the hedge is then looked
    up in the policy of the resulting node at the current wealth.  Steps past
    the lattice depth use the zero hedge.
    """
    logf = np.log(1.0 + np.asarray(basis.w_n))  # (m, d)

    def hedge(k: int, prices: np.ndarray, wealth: np.ndarray) -> np.ndarray:
        N, _, d = prices.shape
        u = np.zeros((N, d))
        if k >= policy.n:
            return u
        r = np.diff(np.log(prices), axis=1)  # (N, k, d)
        outcomes = np.argmin(np.sum((r[:, :, None, :] - logf[None, None]) ** 2, axis=3), axis=2) + 1
        keys, inverse = np.unique(outcomes.reshape(N, k), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for g, key in enumerate(keys):
            rows = np.flatnonzero(inverse == g)
            node = policy.node(tuple(int(o) for o in key))
            y = wealth[rows]
            j = np.maximum(np.searchsorted(node.y_lo, y, side="right") - 1, 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = np.where(y > 0.0, 1.0 / y, 0.0)
            u[rows] = node.base[j] + node.recip[j] * inv[:, None]
        return u

    return hedge


def simulate_wealth(ens: Ensemble, x: float, hedge: Hedge) -> np.ndarray:
    """Wealth at the grid times; once it would go negative it is set to 0 and stays there."""
    N, K1, _ = ens.prices.shape
    V = np.empty((N, K1))
    V[:, 0] = x
    for k in range(K1 - 1):
        u = hedge(k, ens.prices[:, : k + 1, :], V[:, k])
        ret = ens.prices[:, k + 1, :] / ens.prices[:, k, :] - 1.0
        nxt = V[:, k] * (1.0 + np.sum(u * ret, axis=1))
        V[:, k + 1] = np.where(V[:, k] > 0.0, np.maximum(nxt, 0.0), 0.0)
    return V


def _shortfalls(ens: Ensemble, spec: PayoffSpec, V: np.ndarray) -> np.ndarray:
    Y = np.stack([eval_F(spec, t, ens.prices[:, : k + 1, :]) for k, t in enumerate(ens.times)], axis=1)
    return np.maximum(Y - V, 0.0)


def _fit_rule(Z: np.ndarray) -> tuple[np.ndarray, int]:
    """Thresholds of the backward threshold rule and the best fixed stopping time on ``Z``.

    Returns ``(thresholds, fixed)`` where ``fixed = -1`` selects the threshold
    rule and ``fixed = k`` always stops at grid time ``k``.
    """
    K1 = Z.shape[1]
    c = np.full(K1, -np.inf)
    U = Z[:, -1].copy()
    for k in range(K1 - 2, -1, -1):
        c[k] = float(np.mean(U))
        U = np.where(Z[:, k] >= c[k], Z[:, k], U)
    c[-1] = -np.inf
    rule_value = float(np.mean(_apply_rule(Z, c)))
    fixed_values = np.mean(Z, axis=0)
    best = int(np.argmax(fixed_values))
    if fixed_values[best] > rule_value:
        return c, best
    return c, -1


def _apply_rule(Z: np.ndarray, c: np.ndarray) -> np.ndarray:
    stop = Z >= c[None, :]
    stop[:, -1] = True
    first = np.argmax(stop, axis=1)
    return Z[np.arange(Z.shape[0]), first]


def grid_hedge_risk_lower_bound(hedge: Hedge, x: float, spec: PayoffSpec, cfg: SimConfig,
                                pilot_paths: Optional[int] = None) -> MCEstimate:
    """Shortfall of ``hedge`` from capital ``x`` under one grid stopping rule.

    The rule (threshold or fixed time) is fitted on an independent pilot
    ensemble and then evaluated on the main ensemble, so the estimate is
    unbiased for that rule and hence, up to Monte Carlo error, a lower bound
    on the worst-case shortfall over grid stopping times.
    """
    if x < 0:
        raise ValueError(f"capital must be >= 0, got {x!r}")
    pilot_cfg = SimConfig(pilot_paths or min(cfg.n_paths, 4 * BLOCK), cfg.n_grid, cfg.seed, cfg.params)
    pilot = gbm_paths(pilot_cfg, PILOT)
    c, fixed = _fit_rule(_shortfalls(pilot, spec, simulate_wealth(pilot, x, hedge)))
    ens = gbm_paths(cfg, MAIN)
    Z = _shortfalls(ens, spec, simulate_wealth(ens, x, hedge))
    vals = Z[:, fixed] if fixed >= 0 else _apply_rule(Z, c)
    label = "grid stopping lower bound (" + (f"fixed time {fixed}" if fixed >= 0 else "threshold rule") + ")"
    return MCEstimate(label, *_mean_se(vals), cfg.n_paths, cfg.seed)
