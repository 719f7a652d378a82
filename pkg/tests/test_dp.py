import numpy as np
import pytest

from shortfall import dp, plfunc
from shortfall import oracle
from shortfall.market import LatticeError, ModelParams, build_orthogonal, jump_basis
from shortfall.payoff import PayoffSpec

PUT = PayoffSpec("put_on_asset", 100.0)
MIN_PUT = PayoffSpec("put_on_min", 100.0)


@pytest.fixture(scope="module")
def one():
    params = ModelParams.single(1.0, 100.0, 0.0, 0.2)
    return params, dp.solve(PUT, params, 1, keep_values=True)


def test_terminal_layer(one):
    params, sol = one
    leaves = dp.terminal_layer(PUT, sol.basis, params)
    assert leaves[0].is_zero()
    assert leaves[1](0.0) == pytest.approx(20.0) and leaves[1].support_end == pytest.approx(20.0)
    zero = dp.terminal_layer(PayoffSpec("put_on_asset", 0.0), sol.basis, params)
    assert all(f.is_zero() for f in zero)


def test_one_step_value(one):
    _, sol = one
    H = sol.H0
    assert H.breakpoints == pytest.approx([0.0, 10.0], abs=1e-12)
    assert H.slopes == pytest.approx([-1.0], abs=1e-12)
    assert sol.risk(4.0) == pytest.approx(6.0, abs=1e-12)
    assert sol.risk(10.0) == 0.0
    assert sol.risk(0.0) == pytest.approx(10.0, abs=1e-12)
    assert sol.value(()) is sol.H0
    assert sol.value((2,))(0.0) == pytest.approx(20.0)
    with pytest.raises(plfunc.DomainError):
        sol.risk(-1.0)


def test_all_zero_children_give_payoff_shortfall():
    P = dp.ConstraintPolytope(np.array([[0.2], [-0.2]]))
    H, pol = dp.node_step([plfunc.ZERO, plfunc.ZERO], 7.0, P, np.array([[0.2], [-0.2]]))
    assert H(0.0) == pytest.approx(7.0) and H.support_end == pytest.approx(7.0)
    assert pol.hedge(3.0) == pytest.approx([0.0])


def test_rollout_examples(one):
    _, sol = one
    assert sol.policy.hedge((), 4.0) == pytest.approx([-5.0])
    assert dp.rollout(sol.policy, 4.0, [2]) == pytest.approx([4.0, 8.0])
    assert dp.rollout(sol.policy, 4.0, [1]) == pytest.approx([4.0, 0.0])
    assert dp.rollout(sol.policy, 4.0, []) == pytest.approx([4.0])
    with pytest.raises(ValueError):
        dp.rollout(sol.policy, 4.0, [1, 1])
    with pytest.raises(plfunc.DomainError):
        dp.rollout(sol.policy, -1.0, [1])


def test_rich_start_hedges_perfectly(one):
    params, sol = one
    for x in (10.0, 12.0, 50.0):
        port = dp.Portfolio.from_policy(sol.policy, x)
        assert dp.snell_risk_of_portfolio(port, PUT, sol.basis, params) == 0.0


def test_do_nothing_snell(one):
    params, sol = one
    assert dp.snell_risk_of_portfolio(dp.Portfolio.static(5.0, [0.0]), PUT, sol.basis, params) == 7.5
    assert dp.snell_risk_of_portfolio(dp.Portfolio.static(25.0, [0.0]), PUT, sol.basis, params) == 0.0


def test_inadmissible_portfolio_rejected(one):
    params, sol = one
    with pytest.raises(dp.AdmissibilityError, match=r"\(1,\)"):
        dp.snell_risk_of_portfolio(dp.Portfolio.static(5.0, [-6.0]), PUT, sol.basis, params)


def test_two_step_zero_capital_matches_oracle():
    params = ModelParams.single(1.0, 100.0, 0.0, 0.2)
    sol = dp.solve(PUT, params, 2)
    assert sol.risk(0.0) == pytest.approx(oracle.uniform_snell_value(PUT, sol.basis, params), abs=1e-9)


def test_below_min_depth():
    with pytest.raises(LatticeError):
        dp.solve(PUT, ModelParams.single(1.0, 100.0, 0.0, 2.0), 2)


INSTANCES = [
    (ModelParams.single(1.0, 100.0, 0.05, 0.2), PUT, 4),
    (ModelParams.single(0.25, 100.0, 0.3, 0.4), PayoffSpec("floating_lookback_put"), 4),
    (ModelParams(1.0, [100.0, 90.0], [0.1, -0.05], [[0.2, 0.05], [0.0, 0.3]]), MIN_PUT, 3),
    (ModelParams(1.0, [100.0, 90.0], [0.3, -0.2], [[0.3, 0.1], [-0.1, 0.2]]),
     PayoffSpec("call_on_asset", 95.0, asset=2, cap=20.0), 3),
]


@pytest.fixture(scope="module", params=range(len(INSTANCES)))
def solved(request):
    params, spec, n = INSTANCES[request.param]
    return params, spec, dp.solve(spec, params, n, keep_values=True)


def test_policy_optimality(solved, rng):
    params, spec, sol = solved
    for x in rng.uniform(0.0, 1.1 * sol.H0.support_end, 6):
        port = dp.Portfolio.from_policy(sol.policy, x)
        assert dp.snell_risk_of_portfolio(port, spec, sol.basis, params) == pytest.approx(sol.risk(x), abs=1e-9)


def test_random_portfolios_do_no_better(solved, rng):
    params, spec, sol = solved
    V = oracle.hedge_vertices(sol.basis)
    x = 0.4 * sol.H0.support_end
    target = sol.risk(x)
    for _ in range(100):
        table = {}

        def hedge(path, y):
            if path not in table:
                table[path] = rng.dirichlet(np.ones(V.shape[0])) @ V
            return table[path]

        r = dp.snell_risk_of_portfolio(dp.Portfolio(x, hedge), spec, sol.basis, params)
        assert r >= target - 1e-9


def test_dominance_and_monotonicity(solved):
    params, spec, sol = solved
    for k, layer in enumerate(sol.values):
        phi = dp.layer_payoffs(spec, sol.basis, params, k)
        for H, p in zip(layer, phi):
            assert H.is_canonical()
            assert np.all(np.diff(H.values) <= 1e-12)
            ys = np.linspace(0.0, 1.2 * max(H.support_end, p, 1.0), 50)
            assert np.all(H(ys) >= np.maximum(p - ys, 0.0) - 1e-12)


def test_zero_capital_identity(solved):
    params, spec, sol = solved
    assert sol.risk(0.0) == pytest.approx(oracle.uniform_snell_value(spec, sol.basis, params), abs=1e-9)


def test_zero_risk_at_complete_market_price(solved):
    params, spec, sol = solved
    price = oracle.american_price(spec, sol.basis, params)
    assert sol.risk(price + 1e-9) == 0.0
    assert sol.risk(0.999 * price) > 0.0


def test_orthogonal_matrix_invariance():
    params = ModelParams.single(1.0, 100.0, 0.07, 0.25)
    A = build_orthogonal(1)
    B = A.copy()
    B[:, 0] *= -1.0
    for n in (1, 3, 5):
        ha = dp.solve(PUT, params, n, basis=jump_basis(params, n, A)).H0
        hb = dp.solve(PUT, params, n, basis=jump_basis(params, n, B)).H0
        ys = np.linspace(0.0, 1.1 * max(ha.support_end, hb.support_end), 200)
        assert np.max(np.abs(ha(ys) - hb(ys))) <= 1e-9


@pytest.mark.parametrize("spec", [PUT, PayoffSpec("call_on_asset", 95.0, cap=15.0)])
def test_recombining_matches_full_tree(spec):
    params = ModelParams.single(0.5, 100.0, 0.04, 0.3)
    full = dp.solve(spec, params, 7)
    rec = dp.solve(spec, params, 7, recombine=True)
    ys = np.linspace(0.0, 1.1 * full.H0.support_end, 300)
    assert np.max(np.abs(full.H0(ys) - rec.H0(ys))) <= 1e-9
    assert dp.rollout(rec.policy, 3.0, [2, 1, 2]) == pytest.approx(dp.rollout(full.policy, 3.0, [2, 1, 2]), abs=1e-9)


def test_recombining_rejected_for_path_dependent_payoff():
    with pytest.raises(ValueError):
        dp.solve(PayoffSpec("floating_lookback_put"), ModelParams.single(1.0, 100.0, 0.0, 0.2), 3, recombine=True)


def test_count_tree_indexing():
    tree = dp.CountTree(3, 4)
    for k in range(5):
        for s in range(tree.size(k)):
            assert tree.index(tree.path(k, s)) == s
    full = dp.FullTree(3)
    assert full.index((2, 3, 1)) == 1 * 9 + 2 * 3 + 0
    assert full.path(3, 15) == (2, 3, 1)


def test_eps_error_bound():
    params = ModelParams.single(1.0, 100.0, 0.05, 0.2)
    exact = dp.solve(PUT, params, 10)
    eps = 1e-4
    approx = dp.solve(PUT, params, 10, eps=eps)
    assert approx.error_bound > 0.0
    assert approx.breakpoint_counts[0][1] <= exact.breakpoint_counts[0][1]
    ys = np.linspace(0.0, 1.1 * exact.H0.support_end, 2000)
    assert np.max(np.abs(exact.H0(ys) - approx.H0(ys))) <= approx.error_bound


def test_threads_bit_identical(two_asset):
    a = dp.solve(MIN_PUT, two_asset, 4, threads=1)
    b = dp.solve(MIN_PUT, two_asset, 4, threads=4)
    assert np.array_equal(a.H0.breakpoints, b.H0.breakpoints)
    assert np.array_equal(a.H0.slopes, b.H0.slopes)
    assert np.array_equal(a.H0.intercepts, b.H0.intercepts)
    for la, lb in zip(a.policy.layers, b.policy.layers):
        for pa, pb in zip(la, lb):
            assert np.array_equal(pa.y_lo, pb.y_lo) and np.array_equal(pa.recip, pb.recip)


def test_policy_hedges_inside_constraint_set(solved):
    params, spec, sol = solved
    W = sol.basis.w_n
    for layer in sol.policy.layers:
        for node in layer:
            for lo, hi, base, recip in node.intervals():
                top = lo + 1.0 if not np.isfinite(hi) else hi
                for y in np.linspace(max(lo, 1e-9), top, 5)[:-1] if top > lo else []:
                    u = base + recip / y
                    assert np.all(1.0 + W @ u >= -1e-9)
