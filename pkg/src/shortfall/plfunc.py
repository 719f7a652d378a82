"""Continuous, non-increasing, nonnegative piecewise-linear functions of wealth.

Every value function of the backward recursion lives in this class: a finite
list of affine pieces on ``[a_1, a_{m+1})`` with ``a_1 = 0`` followed by an
identically zero tail on ``[a_{m+1}, inf)``.  All operations are pure and
return new (immutable) instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

# Global comparison tolerance for breakpoint deduplication (relative to max(1, |a|)).
TAU = 1e-9
# Tie tolerance on values inside the envelope sweep (relative to the value scale).
VALUE_TOL = 1e-13
# Relative tolerance under which two slopes count as equal when eps == 0.
SLOPE_TOL = 1e-12
# Relative sup-norm change allowed when dropping degenerate pieces with eps == 0.
NOISE_TOL = 1e-11


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class CoverageError(RuntimeError):
    """The candidate family leaves part of the requested domain uncovered."""

    def __init__(self, lo: float, hi: float):
        super().__init__(f"no valid candidate on [{lo!r}, {hi!r}]")
        self.interval = (lo, hi)


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """``y -> slopes[j] * y + intercepts[j]`` on ``[breakpoints[j], breakpoints[j+1])``.

    The function is zero from ``breakpoints[-1]`` on.  The zero function has
    ``breakpoints == [0.0]`` and no pieces.  Continuity, monotonicity and
    nonnegativity are checked on construction.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float).reshape(-1)
        c = np.array(self.slopes, dtype=float).reshape(-1)
        d = np.array(self.intercepts, dtype=float).reshape(-1)
        for arr in (bp, c, d):
            arr.flags.writeable = False
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", c)
        object.__setattr__(self, "intercepts", d)
        _validate(bp, c, d)

    @property
    def n_pieces(self) -> int:
        return self.slopes.size

    @property
    def support_end(self) -> float:
        """First wealth level from which the function is identically zero."""
        return float(self.breakpoints[-1])

    @property
    def values(self) -> np.ndarray:
        """Function values at the breakpoints (last one is 0)."""
        out = np.zeros(self.breakpoints.size)
        out[:-1] = self.slopes * self.breakpoints[:-1] + self.intercepts
        return out

    def is_zero(self) -> bool:
        return self.n_pieces == 0

    def is_canonical(self) -> bool:
        """True when no two adjacent pieces are collinear."""
        c = self.slopes
        if c.size < 2:
            return True
        same = np.abs(np.diff(c)) <= SLOPE_TOL * np.maximum(1.0, np.abs(c[1:]))
        return not bool(np.any(same))

    def __call__(self, y):
        return evaluate(self, y)

    def __repr__(self) -> str:
        pts = ", ".join(f"({a:.6g}, {v:.6g})" for a, v in zip(self.breakpoints, self.values))
        return f"PiecewiseLinear[{pts}]"

    def to_record(self) -> list[list[float]]:
        """Flat ``[[breakpoint, value], ...]`` list; the final pair is the zero marker."""
        return [[float(a), float(v)] for a, v in zip(self.breakpoints, self.values)]


def _validate(bp: np.ndarray, c: np.ndarray, d: np.ndarray) -> None:
    if bp.size != c.size + 1 or c.size != d.size:
        raise ValueError("need len(breakpoints) == len(slopes) + 1 == len(intercepts) + 1")
    if bp[0] != 0.0:
        raise ValueError(f"first breakpoint must be 0, got {bp[0]!r}")
    code, j, size = _check(bp, c, d)
    if code == 1:
        raise ValueError("non-finite breakpoint or coefficient")
    if code == 2:
        raise ValueError("breakpoints must be strictly increasing")
    if code == 3:
        raise ValueError("function must be non-increasing (all slopes <= 0)")
    if code == 4:
        raise ValueError("function must be nonnegative")
    if code == 5:
        raise ValueError(f"discontinuity of size {size:.3g} at y={bp[j + 1]!r}")
    if code == 6:
        raise ValueError(f"last piece does not reach 0 at y={bp[-1]!r} (value {size!r})")


@njit(cache=True)
def _check(bp, c, d):
    """``(code, index, size)``; code 0 means valid."""
    n = c.size
    for k in range(n + 1):
        if not np.isfinite(bp[k]):
            return 1, k, 0.0
    for k in range(n):
        if not (np.isfinite(c[k]) and np.isfinite(d[k])):
            return 1, k, 0.0
    if n == 0:
        return 0, 0, 0.0
    scale = 1.0
    for k in range(n):
        if bp[k + 1] <= bp[k]:
            return 2, k, 0.0
        scale = max(scale, abs(c[k] * bp[k] + d[k]))
    tol = TAU * scale
    for k in range(n):
        if c[k] > SLOPE_TOL * max(1.0, abs(d[k])):
            return 3, k, 0.0
    for k in range(n):
        if c[k] * bp[k] + d[k] < -tol:
            return 4, k, 0.0
    worst, at = 0.0, -1
    for k in range(n - 1):
        jump = abs(c[k] * bp[k + 1] + d[k] - (c[k + 1] * bp[k + 1] + d[k + 1]))
        if jump > worst:
            worst, at = jump, k
    if worst > tol:
        return 5, at, worst
    last = c[n - 1] * bp[n] + d[n - 1]
    if abs(last) > tol:
        return 6, n - 1, last
    return 0, 0, 0.0


ZERO = PiecewiseLinear(np.zeros(1), np.zeros(0), np.zeros(0))


def from_points(breakpoints: Sequence[float], values: Sequence[float]) -> PiecewiseLinear:
    """Linear interpolation through ``(breakpoints[i], values[i])``; ``values[-1]`` must be 0."""
    a = np.asarray(breakpoints, dtype=float)
    v = np.asarray(values, dtype=float)
    if a.size != v.size or a.size == 0:
        raise ValueError("breakpoints and values must be nonempty and of equal length")
    if abs(v[-1]) > TAU * max(1.0, float(np.max(np.abs(v)))):
        raise ValueError("last value must be the zero marker")
    if a.size == 1:
        return ZERO
    c = np.diff(v) / np.diff(a)
    d = v[:-1] - c * a[:-1]
    return PiecewiseLinear(a, c, d)


def from_record(record: Iterable[Sequence[float]]) -> PiecewiseLinear:
    pairs = np.asarray(list(record), dtype=float).reshape(-1, 2)
    return from_points(pairs[:, 0], pairs[:, 1])


def from_shortfall(payoff_value: float) -> PiecewiseLinear:
    """``y -> (payoff_value - y)^+``."""
    v = float(payoff_value)
    if not v >= 0.0:
        raise DomainError(f"payoff value must be >= 0, got {payoff_value!r}")
    if v == 0.0:
        return ZERO
    return PiecewiseLinear(np.array([0.0, v]), np.array([-1.0]), np.array([v]))


def evaluate(f: PiecewiseLinear, y):
    """Exact value of ``f`` at ``y`` (scalar or array); 0 past the last breakpoint."""
    ya = np.asarray(y, dtype=float)
    if np.any(ya < 0.0) or np.any(np.isnan(ya)):
        raise DomainError("wealth must be >= 0")
    idx = np.searchsorted(f.breakpoints, ya, side="right") - 1
    inside = idx < f.n_pieces
    k = np.where(inside, idx, 0)
    if f.n_pieces == 0:
        out = np.zeros_like(ya)
    else:
        out = np.where(inside, f.slopes[k] * ya + f.intercepts[k], 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _merge_breakpoints(arrays: Iterable[np.ndarray]) -> np.ndarray:
    b = np.unique(np.concatenate(list(arrays)))
    if b.size > 1:
        keep = np.ones(b.size, dtype=bool)
        keep[1:] = np.diff(b) > TAU * np.maximum(1.0, np.abs(b[1:]))
        b = b[keep]
    return b


def _coeffs_on(f: PiecewiseLinear, mids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slope/intercept of the piece of ``f`` containing each midpoint (0, 0 in the tail)."""
    if f.n_pieces == 0:
        z = np.zeros(mids.size)
        return z, z.copy()
    idx = np.searchsorted(f.breakpoints, mids, side="right") - 1
    inside = idx < f.n_pieces
    k = np.where(inside, idx, 0)
    return np.where(inside, f.slopes[k], 0.0), np.where(inside, f.intercepts[k], 0.0)


def pointwise_max(f: PiecewiseLinear, g: PiecewiseLinear) -> PiecewiseLinear:
    if f.n_pieces == 0:
        return g
    if g.n_pieces == 0:
        return f
    b = _merge_breakpoints([f.breakpoints, g.breakpoints])
    mids = 0.5 * (b[:-1] + b[1:])
    cf, df = _coeffs_on(f, mids)
    cg, dg = _coeffs_on(g, mids)
    delta_lo = (cf - cg) * b[:-1] + (df - dg)
    delta_hi = (cf - cg) * b[1:] + (df - dg)
    cross = delta_lo * delta_hi < 0.0
    if np.any(cross):
        roots = b[:-1][cross] + delta_lo[cross] / (delta_lo[cross] - delta_hi[cross]) * np.diff(b)[cross]
        b = _merge_breakpoints([b, roots])
        mids = 0.5 * (b[:-1] + b[1:])
        cf, df = _coeffs_on(f, mids)
        cg, dg = _coeffs_on(g, mids)
    take_f = cf * mids + df >= cg * mids + dg
    return normalize(PiecewiseLinear(b, np.where(take_f, cf, cg), np.where(take_f, df, dg)))


def precompose_scale(f: PiecewiseLinear, lam: float) -> PiecewiseLinear:
    """``y -> f(lam * y)`` for ``lam > 0``."""
    if not lam > 0.0:
        raise DomainError(f"scale factor must be > 0, got {lam!r}")
    return PiecewiseLinear(f.breakpoints / lam, f.slopes * lam, f.intercepts)


def scaled_sum(fs: Sequence[PiecewiseLinear], alpha: float) -> PiecewiseLinear:
    """``alpha * sum(fs)`` on the merged breakpoint grid."""
    if not fs:
        raise ValueError("scaled_sum needs at least one function")
    b = _merge_breakpoints([f.breakpoints for f in fs])
    if b.size == 1:
        return ZERO
    mids = 0.5 * (b[:-1] + b[1:])
    c = np.zeros(mids.size)
    d = np.zeros(mids.size)
    for f in fs:
        cf, df = _coeffs_on(f, mids)
        c += cf
        d += df
    return normalize(PiecewiseLinear(b, alpha * c, alpha * d))


def sliver_tolerance(bp: np.ndarray) -> np.ndarray:
    """Length under which the piece ending at each of ``bp[1:]`` counts as degenerate."""
    return TAU * np.maximum(1.0, np.abs(bp[1:]))


def value_tolerance(vscale: float, eps: float = 0.0, support: float = 0.0) -> float:
    """Sup-norm budget for dropping pieces: rounding noise, or half the ``eps`` allowance."""
    if eps > 0.0:
        return max(0.5 * eps * support, NOISE_TOL * vscale)
    return NOISE_TOL * vscale


def remove_slivers(bp, c, d, tol: float = 0.0):
    """Remove pieces whose neighbours can take over at a sup-norm cost of at most ``tol``.

    A removed piece is replaced by its two neighbours, extended to the point
    where their lines meet; a piece whose neighbours meet outside it stays
    unless the jump left at the join is rounding-sized.  Pieces shorter than the
    breakpoint tolerance always go: rounding splits a point where three or
    more lines meet into such a piece.  The piece after ``bp[-1]`` is taken
    to be the zero line.  Returns ``(bp, c, d, kept)`` where ``kept`` indexes
    the surviving input pieces.
    """
    bp = np.array(bp, dtype=float)
    c = np.array(c, dtype=float)
    d = np.array(d, dtype=float)
    if c.size == 0:
        return bp, c, d, np.arange(0)
    vscale = max(1.0, float(np.max(np.abs(c * bp[:-1] + d))))
    return _remove_slivers(bp, c, d, float(tol), vscale)


@njit(cache=True)
def _remove_slivers(bp, c, d, tol, vscale):
    n = c.size
    kept = np.arange(n)
    slack = np.zeros(n)
    while n:
        short = np.empty(n, dtype=np.bool_)
        any_short = False
        for k in range(n):
            short[k] = bp[k + 1] - bp[k] <= TAU * max(1.0, abs(bp[k + 1]))
            any_short |= short[k]
        if tol <= 0.0 and not any_short:
            break
        ok = np.empty(n, dtype=np.bool_)
        xs = np.empty(n)
        err = np.empty(n)
        around = np.empty(n)
        for k in range(n):
            a, b = bp[k], bp[k + 1]
            cl = c[k - 1] if k > 0 else 0.0
            dl = d[k - 1] if k > 0 else 0.0
            cr = c[k + 1] if k + 1 < n else 0.0
            dr = d[k + 1] if k + 1 < n else 0.0
            dc = cl - cr
            if abs(dc) <= SLOPE_TOL * max(1.0, max(abs(cl), abs(cr))):
                x = 0.5 * (a + b)
            else:
                x = min(max((dr - dl) / dc, a), b)
            if k == 0:
                x = 0.0
                e = max(abs(cr * b + dr - (c[0] * b + d[0])), abs(dr - d[0]))
            else:
                e = max(abs(cl * a + dl - (c[k] * a + d[k])), abs(cl * x + dl - (c[k] * x + d[k])),
                        abs(cr * x + dr - (c[k] * x + d[k])), abs(cr * b + dr - (c[k] * b + d[k])))
            xs[k] = x
            err[k] = e
            s = slack[k]
            if k + 1 < n:
                s = max(s, slack[k + 1])
            if k > 0:
                s = max(s, slack[k - 1])
            around[k] = s
            # neighbours meeting outside the piece leave a jump at the clipped join
            jump = 0.0 if k == 0 else abs((cl - cr) * x + dl - dr)
            ok[k] = short[k] or (e + s <= tol and jump <= 0.25 * TAU * vscale)
        keep = np.ones(n, dtype=np.bool_)
        last = -2
        for k in range(n):
            if ok[k] and k > last + 1:
                keep[k] = False
                last = k
        if last == -2:
            break
        for k in range(n):
            if not keep[k]:
                s_new = around[k] + err[k]
                bp[k] = xs[k]
                if k > 0:
                    slack[k - 1] = max(slack[k - 1], s_new)
                if k + 1 < n:
                    slack[k + 1] = max(slack[k + 1], s_new)
        m = 0
        for k in range(n):
            if keep[k]:
                bp[m + 1] = bp[k + 1]
                c[m] = c[k]
                d[m] = d[k]
                kept[m] = kept[k]
                slack[m] = slack[k]
                m += 1
        n = m
    return bp[: n + 1].copy(), c[:n].copy(), d[:n].copy(), kept[:n].copy()


def normalize(f: PiecewiseLinear, eps: float = 0.0) -> PiecewiseLinear:
    """Drop zero-length pieces and merge runs of near-collinear pieces.

    With ``eps == 0`` only collinear neighbours (up to rounding) merge.  With
    ``eps > 0`` a run whose slopes span at most ``eps`` is replaced by its
    chord, which moves the function by at most ``eps * support_end``.
    """
    if eps < 0.0:
        raise DomainError("eps must be >= 0")
    if f.n_pieces == 0:
        return f
    bp, c, d = f.breakpoints, f.slopes, f.intercepts
    vscale0 = max(1.0, float(np.max(np.abs(f.values))))
    bp, c, d, _ = remove_slivers(bp, c, d, value_tolerance(vscale0, eps, f.support_end))
    if c.size == 0:
        return ZERO
    vals = np.empty(bp.size)
    vals[:-1] = c * bp[:-1] + d
    vals[-1] = 0.0
    vscale = max(1.0, float(np.max(np.abs(vals))))

    # a run of pieces at the end that sits on the zero tail is absorbed into it
    m = c.size
    while m > 0 and vals[m - 1] <= TAU * vscale:
        m -= 1
    if m == 0:
        return ZERO
    if m < c.size:
        bp, c, d = bp[: m + 1], c[:m], d[:m]
        vals = np.append(vals[:m], 0.0)

    starts = [0]
    lo = hi = c[0]
    for j in range(1, m):
        lo2, hi2 = min(lo, c[j]), max(hi, c[j])
        tol = eps if eps > 0.0 else SLOPE_TOL * max(1.0, abs(lo2), abs(hi2))
        if hi2 - lo2 <= tol:
            lo, hi = lo2, hi2
        else:
            starts.append(j)
            lo = hi = c[j]
    if len(starts) == m:
        if m == f.n_pieces:
            return f
        return PiecewiseLinear(bp, c, d)
    s = np.array(starts)
    e = np.append(s[1:], m)
    nb = np.append(bp[s], bp[m])
    nv = np.append(vals[s], 0.0)
    nv[-1] = 0.0
    if eps == 0.0:
        # collinear up to rounding: keep the longest member's line, since a
        # chord over a short run would add slope noise that compounds later
        # (unless the run is a staircase of parallel lines whose drift would
        # then show up as a jump at the run's ends)
        length = np.diff(bp[: m + 1])
        rep = np.array([a + int(np.argmax(length[a:b])) for a, b in zip(s, e)])
        slope, icpt = c[rep].copy(), d[rep].copy()
        drift = np.maximum(np.abs(slope * nb[:-1] + icpt - nv[:-1]), np.abs(slope * nb[1:] + icpt - nv[1:]))
        chord = drift > 0.1 * TAU * vscale
        if np.any(chord):
            cs = np.diff(nv) / np.diff(nb)
            slope[chord] = cs[chord]
            icpt[chord] = nv[:-1][chord] - cs[chord] * nb[:-1][chord]
        return PiecewiseLinear(nb, slope, icpt)
    single = (e - s) == 1
    slope = np.where(single, c[s], np.diff(nv) / np.diff(nb))
    icpt = np.where(single, d[s], nv[:-1] - slope * nb[:-1])
    return PiecewiseLinear(nb, slope, icpt)


@dataclass(frozen=True)
class AffineCandidate:
    """``y -> slope * y + intercept`` on the closed validity interval ``[lo, hi]``."""

    slope: float
    intercept: float
    lo: float
    hi: float = float("inf")

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty validity interval [{self.lo}, {self.hi}]")


@njit(cache=True)
def _winner(a, b, slope, rank):
    """Tie-break between two coincident lines: smaller slope, then smaller rank."""
    ds = slope[a] - slope[b]
    st = 1e-15 * max(1.0, abs(slope[b]))
    if ds < -st:
        return a
    if ds > st:
        return b
    return a if rank[a] < rank[b] else b


@njit(cache=True)
def _emit(out_s, out_e, out_i, k, x0, x1, j):
    if k > 0 and out_i[k - 1] == j and out_e[k - 1] == x0:
        out_e[k - 1] = x1
        return k
    out_s[k] = x0
    out_e[k] = x1
    out_i[k] = j
    return k + 1


@njit(cache=True)
def _merge(sa, ea, ia, sb, eb, ib, slope, icpt, rank, tol_v, out_s, out_e, out_i):
    """Lower envelope of two envelopes given as sorted disjoint pieces; returns piece count."""
    na = sa.size
    nb = sb.size
    pa = 0
    pb = 0
    k = 0
    x = min(sa[0], sb[0])
    inf = np.inf
    while x < inf:
        while pa < na and ea[pa] <= x:
            pa += 1
        while pb < nb and eb[pb] <= x:
            pb += 1
        if pa == na and pb == nb:
            break
        act_a = pa < na and sa[pa] <= x
        act_b = pb < nb and sb[pb] <= x
        if not act_a and not act_b:
            nxt = inf
            if pa < na:
                nxt = sa[pa]
            if pb < nb and sb[pb] < nxt:
                nxt = sb[pb]
            x = nxt
            continue
        v = inf
        if act_a:
            v = ea[pa]
        elif pa < na:
            v = sa[pa]
        if act_b:
            v = min(v, eb[pb])
        elif pb < nb:
            v = min(v, sb[pb])
        if not act_b:
            k = _emit(out_s, out_e, out_i, k, x, v, ia[pa])
        elif not act_a:
            k = _emit(out_s, out_e, out_i, k, x, v, ib[pb])
        else:
            a = ia[pa]
            b = ib[pb]
            dsl = slope[a] - slope[b]
            dic = icpt[a] - icpt[b]
            du = dsl * x + dic
            if v == inf:
                if abs(dsl) <= 1e-15 * max(1.0, abs(slope[b])):
                    dv = du
                else:
                    dv = inf if dsl > 0 else -inf
            else:
                dv = dsl * v + dic
            if du <= tol_v and dv <= tol_v:
                if du >= -tol_v and dv >= -tol_v:
                    w = _winner(a, b, slope, rank)
                else:
                    w = a
                k = _emit(out_s, out_e, out_i, k, x, v, w)
            elif du >= -tol_v and dv >= -tol_v:
                k = _emit(out_s, out_e, out_i, k, x, v, b)
            else:
                t = -dic / dsl
                if not t > x:
                    t = x
                if t > v:
                    t = v
                first = a if du < 0 else b
                second = b if du < 0 else a
                if t > x:
                    k = _emit(out_s, out_e, out_i, k, x, t, first)
                if t < v:
                    k = _emit(out_s, out_e, out_i, k, t, v, second)
        x = v
    return k


@njit(cache=True)
def _envelope(slope, icpt, lo, hi, rank, tol_v):
    """Bottom-up pairwise merging of single-segment envelopes."""
    n = slope.size
    order = np.argsort(lo, kind="mergesort")
    S = lo[order].copy()
    E = hi[order].copy()
    I = order.astype(np.int64)
    off = np.arange(n + 1)
    m = n
    while m > 1:
        total = off[m]
        cap = 4 * total + 4
        S2 = np.empty(cap)
        E2 = np.empty(cap)
        I2 = np.empty(cap, dtype=np.int64)
        off2 = np.zeros((m + 1) // 2 + 1, dtype=np.int64)
        k = 0
        g = 0
        for p in range(0, m, 2):
            a0, a1 = off[p], off[p + 1]
            if p + 1 < m:
                b0, b1 = off[p + 1], off[p + 2]
                cnt = _merge(S[a0:a1], E[a0:a1], I[a0:a1], S[b0:b1], E[b0:b1], I[b0:b1],
                             slope, icpt, rank, tol_v, S2[k:], E2[k:], I2[k:])
            else:
                cnt = a1 - a0
                S2[k:k + cnt] = S[a0:a1]
                E2[k:k + cnt] = E[a0:a1]
                I2[k:k + cnt] = I[a0:a1]
            k += cnt
            g += 1
            off2[g] = k
        S, E, I, off = S2[:k], E2[:k], I2[:k], off2
        m = g
    return S[: off[1]].copy(), E[: off[1]].copy(), I[: off[1]].copy()


def envelope_pieces(slope, intercept, lo, hi, rank=None, clamp=False):
    """Lower envelope of line segments as ``(starts, ends, src)``.

    ``src[k]`` is the index of the segment attaining the minimum on
    ``[starts[k], ends[k]]``.  Ties go to the smaller slope, then to the
    smaller ``rank``.  The last entry is the zero tail (``ends[-1] == inf``);
    with ``clamp`` the envelope is cut where it reaches zero and the tail has
    ``src == -1``.  Gaps up to the breakpoint tolerance between abutting
    validity intervals are closed; wider gaps raise :class:`CoverageError`.
    """
    slope = np.ascontiguousarray(slope, dtype=float)
    intercept = np.ascontiguousarray(intercept, dtype=float)
    lo = np.ascontiguousarray(lo, dtype=float)
    hi = np.ascontiguousarray(hi, dtype=float)
    if rank is None:
        rank = np.arange(slope.size, dtype=np.int64)
    rank = np.ascontiguousarray(rank, dtype=np.int64)
    finite = np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)], [1.0]])
    tol_x = TAU * max(1.0, float(np.max(np.abs(finite))))
    v0 = slope * np.maximum(lo, 0.0) + intercept
    tol_v = VALUE_TOL * max(1.0, float(np.max(np.abs(v0))) if v0.size else 1.0)
    ok = hi > lo
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise CoverageError(0.0, float("inf"))
    s, e, i = _envelope(slope[ok], intercept[ok], lo[ok], hi[ok], rank[ok], tol_v)
    src = idx[i]
    if s[0] > tol_x:
        raise CoverageError(0.0, float(s[0]))
    s[0] = 0.0
    gap = s[1:] - e[:-1]
    if np.any(gap > tol_x):
        j = int(np.argmax(gap > tol_x))
        raise CoverageError(float(e[j]), float(s[j + 1]))
    e[:-1] = s[1:]
    if np.isfinite(e[-1]):
        raise CoverageError(float(e[-1]), float("inf"))
    val_s = slope[src] * s + intercept[src]
    if clamp:
        with np.errstate(invalid="ignore"):
            val_e = np.where(np.isfinite(e), slope[src] * e + intercept[src],
                             np.where(slope[src] < 0.0, -np.inf, intercept[src]))
        hit = np.flatnonzero(val_e <= tol_v)
        if hit.size == 0:
            raise ValueError(f"lower envelope does not vanish: nonzero tail from y={s[-1]!r}")
        j = int(hit[0])
        if val_s[j] <= tol_v:
            cut = s[j]
            s, e, src = s[:j], e[:j], src[:j]
        else:
            cut = -intercept[src[j]] / slope[src[j]]
            s, e, src = s[: j + 1], e[: j + 1].copy(), src[: j + 1]
            e[-1] = cut
        return np.append(s, cut), np.append(e, np.inf), np.append(src, -1)
    last = src[-1]
    if abs(slope[last]) > SLOPE_TOL * max(1.0, abs(intercept[last])) or abs(val_s[-1]) > tol_v:
        raise ValueError(f"lower envelope does not vanish: nonzero tail from y={s[-1]!r}")
    return s, e, src


def pieces_to_function(starts, ends, slope, intercept) -> PiecewiseLinear:
    """Assemble swept pieces (tail piece, if any, excluded) into a canonical function."""
    fin = np.isfinite(ends)
    s, e = starts[fin], ends[fin]
    if s.size == 0:
        return ZERO
    bp, c, d, _ = remove_slivers(np.append(s, e[-1]), slope[fin], intercept[fin])
    if c.size == 0:
        return ZERO
    return normalize(PiecewiseLinear(bp, c, d))


def lower_envelope(candidates: Sequence[AffineCandidate], clamp: bool = False) -> PiecewiseLinear:
    """Pointwise minimum over affine candidates valid on their own intervals.

    With ``clamp=True`` the result is the positive part of the minimum.
    Raises :class:`CoverageError` if some ``y >= 0`` is covered by no candidate.
    """
    if not candidates:
        raise CoverageError(0.0, float("inf"))
    slope = np.array([c.slope for c in candidates], dtype=float)
    icpt = np.array([c.intercept for c in candidates], dtype=float)
    lo = np.array([c.lo for c in candidates], dtype=float)
    hi = np.array([c.hi for c in candidates], dtype=float)
    starts, ends, src = envelope_pieces(slope, icpt, lo, hi, clamp=clamp)
    return pieces_to_function(starts, ends, slope[src], icpt[src])
