import numpy as np
import pytest
from hypothesis import given, strategies as st

from shortfall import plfunc as pl
from shortfall.plfunc import AffineCandidate, CoverageError, DomainError, PiecewiseLinear


def pl_functions(max_pieces=6):
    """Random members of the class via interpolation through decreasing values."""

    @st.composite
    def build(draw):
        k = draw(st.integers(0, max_pieces))
        if k == 0:
            return pl.ZERO
        gaps = draw(st.lists(st.floats(0.05, 20.0), min_size=k, max_size=k))
        drops = draw(st.lists(st.floats(0.01, 15.0), min_size=k, max_size=k))
        bp = np.concatenate([[0.0], np.cumsum(gaps)])
        vals = np.concatenate([np.cumsum(drops[::-1])[::-1], [0.0]])
        return pl.normalize(pl.from_points(bp, vals))

    return build()


def samples(f, g=None, n=200, seed=0):
    top = max(f.support_end, g.support_end if g is not None else 0.0, 1.0)
    ys = np.random.default_rng(seed).uniform(0, 1.2 * top, n)
    extra = [f.breakpoints] + ([g.breakpoints] if g is not None else [])
    return np.concatenate([ys, *extra])


def assert_in_class(f):
    # construction validates continuity, monotonicity and sign; here also canonical form
    assert isinstance(f, PiecewiseLinear)
    assert f.breakpoints[0] == 0.0
    assert f.is_canonical()
    assert np.all(f.values >= -1e-12)


# examples ----------------------------------------------------------------------

def test_from_shortfall_examples():
    f = pl.from_shortfall(20)
    assert f.breakpoints.tolist() == [0.0, 20.0] and f.slopes.tolist() == [-1.0] and f.intercepts.tolist() == [20.0]
    assert pl.from_shortfall(0).is_zero() and pl.from_shortfall(0).breakpoints.tolist() == [0.0]
    g = pl.from_shortfall(10.5)
    assert g(0) == 10.5 and g(10) == 0.5 and g(10.5) == 0.0 and g(50) == 0.0
    with pytest.raises(DomainError):
        pl.from_shortfall(-1)


def test_evaluate_examples():
    f = pl.from_shortfall(20)
    assert f(5) == 15 and f(20) == 0 and f(1000) == 0
    assert f(np.array([0.0, 5.0])).tolist() == [20.0, 15.0]
    with pytest.raises(DomainError):
        f(-0.1)


def test_pointwise_max_example():
    h = pl.pointwise_max(pl.from_shortfall(10), pl.from_points([0, 32], [8, 0]))
    assert h.breakpoints == pytest.approx([0, 8 / 3, 32], abs=1e-12)
    assert h.slopes == pytest.approx([-1, -0.25], abs=1e-12)
    f = pl.from_shortfall(7)
    assert pl.pointwise_max(f, pl.ZERO) is f
    assert pl.pointwise_max(f, f).breakpoints.tolist() == f.breakpoints.tolist()


def test_precompose_scale_examples():
    f = pl.from_shortfall(20)
    assert pl.precompose_scale(f, 2).breakpoints.tolist() == [0.0, 10.0]
    assert pl.precompose_scale(f, 0.5).breakpoints.tolist() == [0.0, 40.0]
    assert pl.precompose_scale(f, 0.5)(20) == 10.0
    assert pl.precompose_scale(f, 1).breakpoints.tolist() == f.breakpoints.tolist()
    for lam in (0.0, -1.0):
        with pytest.raises(DomainError):
            pl.precompose_scale(f, lam)


def test_scaled_sum_examples():
    a, b = pl.from_shortfall(10), pl.from_shortfall(20)
    same = pl.scaled_sum([a, a], 0.5)
    assert same.breakpoints.tolist() == [0.0, 10.0] and same.slopes.tolist() == [-1.0]
    mix = pl.scaled_sum([a, b], 0.5)
    assert mix.breakpoints.tolist() == [0.0, 10.0, 20.0]
    assert mix.slopes.tolist() == [-1.0, -0.5] and mix.intercepts.tolist() == [15.0, 10.0]
    assert pl.scaled_sum([pl.ZERO], 7).is_zero()
    with pytest.raises(ValueError):
        pl.scaled_sum([], 1.0)


def test_lower_envelope_examples():
    f = pl.lower_envelope([AffineCandidate(-1, 10, 0), AffineCandidate(-1 / 3, 6, 0)], clamp=True)
    assert f.breakpoints == pytest.approx([0, 6, 10], abs=1e-12)
    assert f.slopes == pytest.approx([-1 / 3, -1], abs=1e-12)
    g = pl.lower_envelope([AffineCandidate(-1, 5, 0, 5), AffineCandidate(0, 0, 5)])
    assert g.breakpoints.tolist() == [0.0, 5.0] and g(2) == 3.0
    dup = pl.lower_envelope([AffineCandidate(-1, 5, 0, 5), AffineCandidate(-1, 5, 0, 5), AffineCandidate(0, 0, 5)])
    assert dup.breakpoints.tolist() == g.breakpoints.tolist()


def test_lower_envelope_coverage_error():
    with pytest.raises(CoverageError) as info:
        pl.lower_envelope([AffineCandidate(-1, 10, 0, 3), AffineCandidate(0, 0, 5)])
    assert info.value.interval == (3.0, 5.0)
    with pytest.raises(ValueError):
        AffineCandidate(-1, 1, 2, 1)


def test_normalize_examples():
    split = PiecewiseLinear([0, 4, 10], [-1, -1], [10, 10])
    merged = pl.normalize(split)
    assert merged.breakpoints.tolist() == [0.0, 10.0]
    canon = pl.from_points([0, 3, 9], [9, 4, 0])
    assert pl.normalize(canon).breakpoints.tolist() == canon.breakpoints.tolist()


def test_normalize_eps_error_bound():
    f = pl.from_points([0, 5, 10], [10.0000005, 5, 0])  # slopes -1.0000001 and -1
    assert f.n_pieces == 2
    g = pl.normalize(f, 1e-6)
    assert g.n_pieces == 1
    ys = np.linspace(0, 12, 1000)
    assert np.max(np.abs(f(ys) - g(ys))) <= 1e-6 * f.support_end


def test_invalid_functions_are_refused():
    with pytest.raises(ValueError, match="discontinuity"):
        PiecewiseLinear([0, 1, 2], [-1, -1], [2, 3])
    with pytest.raises(ValueError, match="non-increasing"):
        PiecewiseLinear([0, 1], [1], [-1])
    with pytest.raises(ValueError, match="reach 0"):
        PiecewiseLinear([0, 1], [-1], [2])
    with pytest.raises(ValueError, match="first breakpoint"):
        PiecewiseLinear([1, 2], [-1], [2])


def test_record_round_trip():
    f = pl.from_points([0, 2, 7], [6, 3, 0])
    assert f.to_record() == [[0.0, 6.0], [2.0, 3.0], [7.0, 0.0]]
    g = pl.from_record(f.to_record())
    assert g.breakpoints.tolist() == f.breakpoints.tolist() and np.allclose(g.values, f.values)


# properties --------------------------------------------------------------------

@given(pl_functions(), pl_functions())
def test_pointwise_max_property(f, g):
    h = pl.pointwise_max(f, g)
    assert_in_class(h)
    ys = samples(f, g)
    assert np.max(np.abs(h(ys) - np.maximum(f(ys), g(ys)))) <= 1e-12 * max(1.0, f(0.0), g(0.0))


@given(pl_functions(), pl_functions(), st.floats(0.01, 5.0))
def test_scaled_sum_property(f, g, alpha):
    h = pl.scaled_sum([f, g], alpha)
    assert_in_class(h)
    ys = samples(f, g)
    assert np.max(np.abs(h(ys) - alpha * (f(ys) + g(ys)))) <= 1e-12 * max(1.0, alpha * (f(0.0) + g(0.0)))


@given(pl_functions(), st.floats(0.05, 20.0))
def test_precompose_scale_property(f, lam):
    h = pl.precompose_scale(f, lam)
    assert_in_class(h)
    ys = samples(f)
    assert np.max(np.abs(h(ys) - f(lam * ys))) <= 1e-12 * max(1.0, f(0.0))


@given(st.lists(st.tuples(st.floats(-5.0, -0.05), st.floats(0.1, 20.0)), min_size=1, max_size=8))
def test_lower_envelope_property(lines):
    cands = [AffineCandidate(c, d, 0.0) for c, d in lines]
    env = pl.lower_envelope(cands, clamp=True)
    assert_in_class(env)
    top = max(-d / c for c, d in lines)
    ys = np.linspace(0, 1.2 * top, 300)
    every = np.array([c * ys + d for c, d in lines])
    assert np.all(env(ys) <= np.maximum(every, 0.0) + 1e-12 * top)
    assert np.max(np.abs(env(ys) - np.maximum(every.min(axis=0), 0.0))) <= 1e-12 * max(1.0, max(d for _, d in lines))


@given(pl_functions())
def test_normalize_property(f):
    # split every piece at its midpoint, then normalize back
    mids = 0.5 * (f.breakpoints[:-1] + f.breakpoints[1:])
    bp = np.sort(np.concatenate([f.breakpoints, mids]))
    split = pl.from_points(bp, f(bp))
    g = pl.normalize(split)
    assert g.is_canonical()
    pts = np.concatenate([split.breakpoints, 0.5 * (split.breakpoints[:-1] + split.breakpoints[1:])])
    assert np.max(np.abs(g(pts) - split(pts))) <= 1e-12 * max(1.0, f(0.0))
    assert g.n_pieces == f.n_pieces


@given(pl_functions(), st.floats(1e-6, 1e-2))
def test_normalize_eps_property(f, eps):
    g = pl.normalize(f, eps)
    assert_in_class(g)
    ys = samples(f, n=500)
    assert np.max(np.abs(f(ys) - g(ys))) <= eps * max(f.support_end, 1e-300) + 1e-12
