"""Hedge polytope ``K = {u : <u, v_i> >= -1}`` and the finite candidate family.

For ``u`` in ``K`` the next-step wealth in outcome ``i`` is
``z_i = y (1 + <u, v_i>) >= 0``.  The minimum over ``K`` of a sum of
piecewise-linear functions of the ``z_i`` is attained where ``d`` of the
``z_i`` sit on breakpoints of their functions.  Fixing ``z_j = a_j`` for a
size-``d`` subset of directions gives ``<v_j, u> = a_j / y - 1``, hence
``u(y) = p + q / y`` with ``p = -M^{-1} 1`` and ``q = M^{-1} a``.
"""

from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .plfunc import TAU

log = logging.getLogger(__name__)

SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class ConstraintPolytope:
    """``K_J`` for ``d+1`` directions spanning R^d with a positive null combination."""

    directions: np.ndarray

    def __post_init__(self):
        V = np.array(self.directions, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] + 1:
            raise ValueError("need d+1 direction vectors in R^d")
        if np.linalg.matrix_rank(V) < V.shape[1]:
            raise ValueError("directions do not span R^d")
        weights = _null_combination(V)
        if weights is None:
            raise ValueError("no strictly positive combination of the directions vanishes; K is unbounded")
        V.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "directions", V)
        object.__setattr__(self, "_weights", weights)
        object.__setattr__(self, "_subsets", _subset_inverses(V))

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    @property
    def null_weights(self) -> np.ndarray:
        """Positive weights ``p`` with ``sum p_i v_i = 0`` and ``sum p_i = 1``."""
        return self._weights

    def vertices(self) -> np.ndarray:
        """Extreme points: ``d`` constraints active at level -1."""
        pts = []
        for S in itertools.combinations(range(self.d + 1), self.d):
            M = self.directions[list(S)]
            if np.linalg.cond(M) > SINGULAR_COND:
                continue
            u = np.linalg.solve(M, -np.ones(self.d))
            if contains(self, u):
                pts.append(u)
        return np.array(pts)


def polytope_for(directions) -> ConstraintPolytope:
    """Shared (immutable) polytope for a direction matrix; built once per distinct matrix."""
    V = np.ascontiguousarray(directions, dtype=float)
    return _cached_polytope(V.shape, V.tobytes())


@functools.lru_cache(maxsize=64)
def _cached_polytope(shape: tuple, raw: bytes) -> ConstraintPolytope:
    return ConstraintPolytope(np.frombuffer(raw, dtype=float).reshape(shape))


def _subset_inverses(V: np.ndarray) -> list:
    """``(free, pinned, M^{-1})`` for each nonsingular choice of ``d`` pinned directions."""
    d = V.shape[1]
    out = []
    for alpha in range(d, -1, -1):
        S = [j for j in range(d + 1) if j != alpha]
        M = V[S]
        if np.linalg.cond(M) > SINGULAR_COND:
            log.debug("skipping singular direction subset %s", S)
            continue
        out.append((alpha, S, np.linalg.inv(M)))
    return out


def _null_combination(V: np.ndarray) -> np.ndarray | None:
    _, _, vt = np.linalg.svd(V.T)
    p = vt[-1]
    if np.linalg.norm(V.T @ p) > 1e-9 * max(1.0, np.abs(V).max()):
        return None
    if p.sum() < 0:
        p = -p
    if np.any(p <= 0):
        return None
    return p / p.sum()


def contains(P: ConstraintPolytope, u) -> bool | np.ndarray:
    """Membership test with the global tolerance; ``u`` may be a batch ``(..., d)``."""
    u = np.asarray(u, dtype=float)
    ok = np.all(u @ P.directions.T >= -1.0 - TAU, axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok


@dataclass(frozen=True)
class SymbolicCandidate:
    """``u(y) = base + recip / y`` with ``<v_j, u> = level_j / y - 1`` for ``j`` in ``chosen``."""

    base: np.ndarray
    recip: np.ndarray
    chosen: tuple[int, ...]
    levels: tuple[float, ...]

    def __call__(self, y: float) -> np.ndarray:
        if y == 0.0:
            return self.base.copy()
        return self.base + self.recip / y


@dataclass(frozen=True, eq=False)
class CandidateFamily:
    """Array form of many symbolic candidates.

    ``free[k]`` is the one direction not pinned by candidate ``k``;
    ``chosen[k]`` lists the pinned directions and ``levels[k]`` their
    breakpoint levels (0 is the face level ``<v, u> = -1``).
    """

    base: np.ndarray
    recip: np.ndarray
    free: np.ndarray
    chosen: np.ndarray
    levels: np.ndarray

    def __len__(self) -> int:
        return self.base.shape[0]

    def __getitem__(self, k: int) -> SymbolicCandidate:
        return SymbolicCandidate(
            self.base[k], self.recip[k], tuple(int(j) for j in self.chosen[k]),
            tuple(float(a) for a in self.levels[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def at(self, y: float) -> np.ndarray:
        """All candidate hedges at wealth ``y > 0``; shape ``(N, d)``."""
        return self.base + self.recip / y


def candidate_levels(breakpoints: Sequence[float]) -> np.ndarray:
    """Distinct levels for one direction: its breakpoints plus the face level 0."""
    return np.unique(np.concatenate([np.asarray(breakpoints, dtype=float), [0.0]]))


def symbolic_candidates(P: ConstraintPolytope, child_breakpoints: Sequence[Sequence[float]]) -> CandidateFamily:
    """Every ``u(y)`` pinning ``d`` directions to breakpoint (or face) levels.

    ``child_breakpoints[i]`` are the breakpoints of the function applied to
    the wealth in outcome ``i``.  Singular direction subsets are skipped.
    """
    d = P.d
    if len(child_breakpoints) != d + 1:
        raise ValueError(f"need {d + 1} breakpoint lists, got {len(child_breakpoints)}")
    levels = [candidate_levels(b) for b in child_breakpoints]
    bases, recips, frees, chosens, lvls = [], [], [], [], []
    for alpha, S, Minv in P._subsets:
        grids = np.meshgrid(*[levels[j] for j in S], indexing="ij")
        a = np.stack([g.reshape(-1) for g in grids], axis=1)
        N = a.shape[0]
        p = -Minv @ np.ones(d)
        bases.append(np.broadcast_to(p, (N, d)))
        recips.append(a @ Minv.T)
        frees.append(np.full(N, alpha, dtype=np.int64))
        chosens.append(np.broadcast_to(np.array(S, dtype=np.int64), (N, d)))
        lvls.append(a)
    return CandidateFamily(
        base=np.concatenate(bases),
        recip=np.concatenate(recips),
        free=np.concatenate(frees),
        chosen=np.concatenate(chosens),
        levels=np.concatenate(lvls),
    )


def feasibility_intervals(P: ConstraintPolytope, base: np.ndarray, recip: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`feasibility_interval`; empty intervals have ``lo > hi``.

    Constraint ``i`` reads ``(1 + <v_i, p>) y + <v_i, q> >= 0`` for ``y > 0``.
    """
    base = np.atleast_2d(base)
    recip = np.atleast_2d(recip)
    A = 1.0 + base @ P.directions.T
    B = recip @ P.directions.T
    scale = 1.0 + np.abs(base) @ np.abs(P.directions.T)
    flat = np.abs(A) <= 1e-12 * scale
    bscale = np.maximum(1.0, np.abs(recip) @ np.abs(P.directions.T))
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(flat, 0.0, -B / A)
    lower = np.where(~flat & (A > 0), root, 0.0)
    upper = np.where(~flat & (A < 0), root, np.inf)
    never = flat & (B < -TAU * bscale)
    lo = np.maximum(lower.max(axis=1), 0.0)
    hi = upper.min(axis=1)
    hi = np.where(never.any(axis=1) | (hi <= 0.0), -np.inf, hi)
    return lo, hi


def feasibility_interval(P: ConstraintPolytope, cand: SymbolicCandidate) -> tuple[float, float]:
    """``{y > 0 : u(y) in K}`` as ``(lo, hi)``; ``lo > hi`` means empty."""
    lo, hi = feasibility_intervals(P, cand.base[None, :], cand.recip[None, :])
    return float(lo[0]), float(hi[0])
