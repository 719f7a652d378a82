"""Backward recursion for the minimal shortfall risk on the multinomial lattice.

``H_n(y) = (phi_n - y)^+`` at the leaves and, for ``k < n``,

    H_k(y) = max((phi_k - y)^+, min_{u in K} 1/(d+1) sum_i H_{k+1}^{(i)}(y (1 + <u, w_n[i]>)))

where ``K = {u : <u, w_n[i]> >= -1}``.  Every ``H_k`` is a
:class:`~shortfall.plfunc.PiecewiseLinear`; the inner minimum is solved exactly
as the lower envelope of the finite candidate family from
:mod:`shortfall.polytope`.  ``H_0(x)`` is the minimal shortfall risk with
initial capital ``x``; the argmin hedges give the optimal portfolio.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import plfunc
from .market import JumpBasis, ModelParams, layer_prices, min_depth, LatticeError
from .payoff import PayoffSpec, eval_F
from .plfunc import PiecewiseLinear, ZERO
from .polytope import ConstraintPolytope, feasibility_intervals, polytope_for, symbolic_candidates

log = logging.getLogger(__name__)

# wealth slightly below zero from rounding is treated as zero
WEALTH_TOL = 1e-9


class AdmissibilityError(ValueError):
    """A portfolio's wealth became negative."""


# --------------------------------------------------------------------------- #
# State spaces
# --------------------------------------------------------------------------- #

class FullTree:
    """Non-recombining tree: node ``s`` at depth ``k`` has children ``s (d+1) + i``."""

    recombining = False

    def __init__(self, m: int):
        self.m = m

    def size(self, k: int) -> int:
        return self.m**k

    def children(self, k: int) -> np.ndarray:
        return np.arange(self.size(k))[:, None] * self.m + np.arange(self.m)[None, :]

    def index(self, path: Sequence[int]) -> int:
        s = 0
        for w in path:
            s = s * self.m + (w - 1)
        return s

    def path(self, k: int, s: int) -> tuple[int, ...]:
        digits = []
        for _ in range(k):
            s, r = divmod(s, self.m)
            digits.append(r + 1)
        return tuple(reversed(digits))

    def prices(self, basis: JumpBasis, params: ModelParams, k: int) -> np.ndarray:
        return layer_prices(basis, params, k)


class CountTree:
    """Recombining lattice keyed by outcome counts; exact for path-independent payoffs."""

    recombining = True

    def __init__(self, m: int, n: int):
        self.m = m
        self._paths = []
        self._index = []
        for k in range(n + 1):
            reps = list(itertools.combinations_with_replacement(range(1, m + 1), k))
            self._paths.append(reps)
            self._index.append({self._counts(p): s for s, p in enumerate(reps)})

    def _counts(self, path) -> tuple[int, ...]:
        c = [0] * self.m
        for w in path:
            c[w - 1] += 1
        return tuple(c)

    def size(self, k: int) -> int:
        return len(self._paths[k])

    def children(self, k: int) -> np.ndarray:
        out = np.empty((self.size(k), self.m), dtype=np.int64)
        nxt = self._index[k + 1]
        for s, p in enumerate(self._paths[k]):
            c = list(self._counts(p))
            for i in range(self.m):
                c[i] += 1
                out[s, i] = nxt[tuple(c)]
                c[i] -= 1
        return out

    def index(self, path: Sequence[int]) -> int:
        return self._index[len(path)][self._counts(path)]

    def path(self, k: int, s: int) -> tuple[int, ...]:
        return self._paths[k][s]

    def prices(self, basis: JumpBasis, params: ModelParams, k: int) -> np.ndarray:
        reps = self._paths[k]
        out = np.empty((len(reps), k + 1, params.d))
        out[:, 0] = params.S0
        f = basis.factors
        for s, p in enumerate(reps):
            for j, w in enumerate(p):
                out[s, j + 1] = out[s, j] * f[w - 1]
        return out


def _state_space(spec: PayoffSpec, d: int, n: int, recombine: bool):
    if recombine:
        if spec.path_dependent:
            raise ValueError(f"{spec.kind} is path-dependent; the recombining lattice is not exact for it")
        return CountTree(d + 1, n)
    return FullTree(d + 1)


def layer_payoffs(spec: PayoffSpec, basis: JumpBasis, params: ModelParams, k: int, space=None) -> np.ndarray:
    """``phi_k`` for every depth-``k`` node of ``space`` (full tree by default)."""
    space = FullTree(params.d + 1) if space is None else space
    prices = space.prices(basis, params, k)
    return np.atleast_1d(eval_F(spec, k * params.T / basis.n, prices))


# --------------------------------------------------------------------------- #
# Policies
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class NodePolicy:
    """Hedge ``u(y) = base[j] + recip[j] / y`` for ``y`` in ``[y_lo[j], y_lo[j+1])``."""

    y_lo: np.ndarray
    base: np.ndarray
    recip: np.ndarray

    def hedge(self, y: float) -> np.ndarray:
        if y < 0.0:
            raise plfunc.DomainError(f"wealth must be >= 0, got {y!r}")
        j = int(np.searchsorted(self.y_lo, y, side="right")) - 1
        if j < 0:
            raise LookupError(f"no policy interval contains y={y!r}")
        if y == 0.0:
            return self.base[j].copy()
        return self.base[j] + self.recip[j] / y

    def intervals(self) -> list[tuple[float, float, np.ndarray, np.ndarray]]:
        ends = np.append(self.y_lo[1:], np.inf)
        return [(float(a), float(b), self.base[j], self.recip[j])
                for j, (a, b) in enumerate(zip(self.y_lo, ends))]


def _zero_policy(d: int) -> NodePolicy:
    return NodePolicy(np.zeros(1), np.zeros((1, d)), np.zeros((1, d)))


@dataclass(eq=False)
class PolicyTable:
    """Argmin hedges per depth ``k < n`` and node."""

    layers: list
    space: object
    w_n: np.ndarray

    @property
    def n(self) -> int:
        return len(self.layers)

    def node(self, path: Sequence[int]) -> NodePolicy:
        return self.layers[len(path)][self.space.index(path)]

    def hedge(self, path: Sequence[int], y: float) -> np.ndarray:
        return self.node(path).hedge(y)


# --------------------------------------------------------------------------- #
# One node of the recursion
# --------------------------------------------------------------------------- #

def _pareto(lo: np.ndarray, C: np.ndarray, rank: np.ndarray) -> np.ndarray:
    """Indices not dominated in (start of validity, pinned cost); lower is better in both."""
    order = np.lexsort((rank, C, lo))
    Cs = C[order]
    best = np.minimum.accumulate(Cs)
    prev = np.concatenate([[np.inf], best[:-1]])
    tol = 1e-12 * max(1.0, float(np.max(np.abs(C))))
    return order[Cs < prev - tol]


def continuation(children: Sequence[PiecewiseLinear], P: ConstraintPolytope, w_n: np.ndarray,
                 eps: float = 0.0):
    """``y -> min_{u in K} 1/(d+1) sum_i children[i](y (1 + <u, w_n[i]>))`` and its argmin policy."""
    m = len(children)
    d = m - 1
    if all(c.is_zero() for c in children):
        return ZERO, _zero_policy(d)
    fam = symbolic_candidates(P, [c.breakpoints for c in children])
    lo, hi = feasibility_intervals(P, fam.base, fam.recip)
    gain = 1.0 + fam.base @ w_n.T
    shift = fam.recip @ w_n.T
    rank = np.lexsort((np.linalg.norm(fam.base, axis=1), np.linalg.norm(fam.recip, axis=1)))
    rank_of = np.empty_like(rank)
    rank_of[rank] = np.arange(rank.size)

    # pinned outcomes contribute constants children[j](level_j)
    pinned = np.zeros(len(fam))
    for j in range(m):
        rows = np.flatnonzero(fam.free != j)
        pos = j - (fam.free[rows] < j)
        pinned[rows] += children[j](fam.levels[rows, pos])

    seg_slope, seg_icpt, seg_lo, seg_hi, seg_cand = [], [], [], [], []
    for alpha in range(m):
        rows = np.flatnonzero((fam.free == alpha) & (hi >= lo))
        if rows.size == 0:
            continue
        if np.any(np.isfinite(hi[rows])):
            raise RuntimeError("candidate with bounded validity; pinned levels must be nonnegative")
        rows = rows[_pareto(lo[rows], pinned[rows], rank_of[rows])]
        f = children[alpha]
        g = gain[rows, alpha][:, None]
        e = shift[rows, alpha][:, None]
        C = pinned[rows][:, None]
        ybreak = (f.breakpoints[None, :] - e) / g
        ybreak[:, 0] = lo[rows]
        if f.n_pieces:
            c = f.slopes[None, :]
            dd = f.intercepts[None, :]
            seg_slope.append((c * g / m).ravel())
            seg_icpt.append(((C + c * e + dd) / m).ravel())
            seg_lo.append(ybreak[:, :-1].ravel())
            seg_hi.append(ybreak[:, 1:].ravel())
            seg_cand.append(np.repeat(rows, f.n_pieces))
        seg_slope.append(np.zeros(rows.size))
        seg_icpt.append(C[:, 0] / m)
        seg_lo.append(ybreak[:, -1])
        seg_hi.append(np.full(rows.size, np.inf))
        seg_cand.append(rows)
    slope = np.concatenate(seg_slope)
    icpt = np.concatenate(seg_icpt)
    cand = np.concatenate(seg_cand)
    starts, ends, src = plfunc.envelope_pieces(
        slope, icpt, np.concatenate(seg_lo), np.concatenate(seg_hi), rank_of[cand]
    )
    fin = np.isfinite(ends)
    bp = np.append(starts[fin], ends[fin][-1:]) if fin.any() else np.zeros(1)
    c, d = slope[src[fin]], icpt[src[fin]]
    vscale = max(1.0, float(np.max(np.abs(c * bp[:-1] + d)))) if c.size else 1.0
    bp, c, d, _ = plfunc.remove_slivers(bp, c, d, plfunc.value_tolerance(vscale, eps, bp[-1]))
    G = plfunc.normalize(PiecewiseLinear(bp, c, d), eps) if c.size else ZERO
    # ownership comes from the raw envelope: each raw piece lies inside its
    # candidate's feasible range, which need not hold after sliver removal
    real = ends > starts
    owner = cand[src[real]]
    piece_lo = starts[real]
    first = np.concatenate([[True], owner[1:] != owner[:-1]])
    y_lo = piece_lo[first].copy()
    y_lo[0] = 0.0
    chosen = owner[first]
    policy = NodePolicy(y_lo, fam.base[chosen].copy(), fam.recip[chosen].copy())
    return G, policy


def node_step(children: Sequence[PiecewiseLinear], phi: float, P: ConstraintPolytope,
              w_n: np.ndarray, eps: float = 0.0):
    """One application of the recursion at a node with immediate payoff ``phi``."""
    G, policy = continuation(children, P, w_n, eps)
    H = plfunc.pointwise_max(G, plfunc.from_shortfall(phi))
    if eps > 0.0:
        H = plfunc.normalize(H, eps)
    return H, policy


# --------------------------------------------------------------------------- #
# Layers
# --------------------------------------------------------------------------- #

def terminal_layer(spec: PayoffSpec, basis: JumpBasis, params: ModelParams, n: Optional[int] = None,
                   space=None) -> list[PiecewiseLinear]:
    """``H_n = (phi_n - y)^+`` at every leaf."""
    n = basis.n if n is None else n
    phi = layer_payoffs(spec, basis, params, n, space)
    return [plfunc.from_shortfall(v) for v in phi]


def backward_step(next_layer: Sequence[PiecewiseLinear], k: int, spec: PayoffSpec, basis: JumpBasis,
                  params: ModelParams, eps: float = 0.0, space=None, threads: int = 1):
    """Layer ``k`` of value functions and policies from layer ``k+1``."""
    space = FullTree(params.d + 1) if space is None else space
    P = polytope_for(basis.w_n)
    phi = layer_payoffs(spec, basis, params, k, space)
    kids = space.children(k)
    if kids.size and int(kids.max()) >= len(next_layer):
        raise ValueError(f"layer {k + 1} has {len(next_layer)} nodes; expected {space.size(k + 1)}")

    def one(s):
        return node_step([next_layer[i] for i in kids[s]], float(phi[s]), P, basis.w_n, eps)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(kids.shape[0])))
    else:
        out = [one(s) for s in range(kids.shape[0])]
    return [h for h, _ in out], [p for _, p in out]


@dataclass(eq=False)
class ShortfallSolution:
    """Output of :func:`solve`."""

    spec: PayoffSpec
    params: ModelParams
    basis: JumpBasis
    H0: PiecewiseLinear
    policy: Optional[PolicyTable]
    values: Optional[list]
    breakpoint_counts: list = field(default_factory=list)
    eps: float = 0.0
    error_bound: float = 0.0
    space: object = None

    @property
    def n(self) -> int:
        return self.basis.n

    def risk(self, x):
        return shortfall_risk(x, self)

    def value(self, path: Sequence[int]) -> PiecewiseLinear:
        if self.values is None:
            raise ValueError("solve(..., keep_values=True) is needed for node values")
        return self.values[len(path)][self.space.index(path)]


def solve(spec: PayoffSpec, params: ModelParams, n: int, *, basis: Optional[JumpBasis] = None,
          eps: float = 0.0, recombine: bool = False, keep_policy: bool = True,
          keep_values: bool = False, threads: int = 1) -> ShortfallSolution:
    """Run the full backward recursion on the ``n``-step lattice."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if basis is None:
        nmin = min_depth(params)
        if n < nmin:
            raise LatticeError(f"n={n} is below min_depth={nmin}")
        from .market import jump_basis

        basis = jump_basis(params, n)
    elif basis.n != n:
        raise ValueError(f"basis built for n={basis.n}, not {n}")
    space = _state_space(spec, params.d, n, recombine)
    layer = terminal_layer(spec, basis, params, n, space)
    counts = [_layer_stats(n, layer)]
    values = [layer] if keep_values else None
    policies = []
    for k in range(n - 1, -1, -1):
        layer, pol = backward_step(layer, k, spec, basis, params, eps, space, threads)
        counts.append(_layer_stats(k, layer))
        if keep_values:
            values.append(layer)
        if keep_policy:
            policies.append(pol)
        log.debug("depth %d: %d nodes, max %d breakpoints", k, len(layer), counts[-1][1])
    H0 = layer[0]
    if values is not None:
        values.reverse()
    policy = PolicyTable(policies[::-1], space, basis.w_n) if keep_policy else None
    max_bp = max(h.support_end for h in (values[0] if values else [H0]))
    return ShortfallSolution(
        spec=spec, params=params, basis=basis, H0=H0, policy=policy, values=values,
        breakpoint_counts=counts[::-1], eps=eps,
        error_bound=n * eps * max_bp if eps > 0 else 0.0, space=space,
    )


def _layer_stats(k: int, layer: Sequence[PiecewiseLinear]) -> tuple[int, int, float]:
    sizes = np.array([f.breakpoints.size for f in layer])
    return k, int(sizes.max()), float(sizes.mean())


def shortfall_risk(x, solution: ShortfallSolution):
    """``R_n(x) = H_0(x)``."""
    if np.any(np.asarray(x) < 0):
        raise plfunc.DomainError("initial capital must be >= 0")
    return plfunc.evaluate(solution.H0, x)


# --------------------------------------------------------------------------- #
# Portfolios
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class Portfolio:
    """Initial capital and a hedge rule ``(path, wealth) -> u`` (``u`` in hedge units)."""

    x: float
    hedge: Callable[[tuple, float], np.ndarray]

    @classmethod
    def from_policy(cls, policy: PolicyTable, x: float) -> "Portfolio":
        return cls(x, policy.hedge)

    @classmethod
    def static(cls, x: float, u) -> "Portfolio":
        u = np.asarray(u, dtype=float)
        return cls(x, lambda path, y: u)


def _next_wealth(y: float, u: np.ndarray, ret: np.ndarray, where) -> float:
    v = y * (1.0 + float(u @ ret))
    if v < -WEALTH_TOL * max(1.0, y):
        raise AdmissibilityError(f"negative wealth {v!r} at node {where}")
    return max(v, 0.0)


def rollout(policy: PolicyTable, x: float, path: Sequence[int]) -> np.ndarray:
    """Wealth ``V(0..k)`` of the optimal portfolio along ``path``."""
    if x < 0:
        raise plfunc.DomainError("initial capital must be >= 0")
    if len(path) > policy.n:
        raise ValueError(f"path longer than the lattice depth {policy.n}")
    V = np.empty(len(path) + 1)
    V[0] = x
    for k, w in enumerate(path):
        u = policy.hedge(tuple(path[:k]), V[k])
        V[k + 1] = _next_wealth(V[k], u, policy.w_n[w - 1], tuple(path[: k + 1]))
    return V


def portfolio_wealth(portfolio: Portfolio, basis: JumpBasis) -> list[np.ndarray]:
    """Wealth at every node of the full tree, layer by layer."""
    tree = FullTree(basis.d + 1)
    layers = [np.array([float(portfolio.x)])]
    for k in range(basis.n):
        prev = layers[-1]
        nxt = np.empty(prev.size * tree.m)
        for s, y in enumerate(prev):
            path = tree.path(k, s)
            u = np.asarray(portfolio.hedge(path, y), dtype=float) if y > 0 else None
            for i in range(tree.m):
                nxt[s * tree.m + i] = 0.0 if u is None else _next_wealth(y, u, basis.w_n[i], path + (i + 1,))
        layers.append(nxt)
    return layers


def snell_risk_of_portfolio(portfolio: Portfolio, spec: PayoffSpec, basis: JumpBasis,
                            params: ModelParams) -> float:
    """``U(0) = max_tau E[(Y(tau) - V(tau))^+]`` under uniform outcome weights."""
    wealth = portfolio_wealth(portfolio, basis)
    m = basis.d + 1
    U = None
    for k in range(basis.n, -1, -1):
        short = np.maximum(layer_payoffs(spec, basis, params, k) - wealth[k], 0.0)
        U = short if U is None else np.maximum(short, U.reshape(-1, m).mean(axis=1))
    return float(U[0])
