"""Brute-force reference values; written before the engine tests and frozen by hand."""

import ast
import math
from pathlib import Path

import numpy as np
import pytest

import shortfall.oracle as O
from shortfall.market import ModelParams, jump_basis
from shortfall.payoff import PayoffSpec

PUT = PayoffSpec("put_on_asset", 100.0)


def test_oracle_shares_no_code_with_engine():
    tree = ast.parse(Path(O.__file__).read_text())
    mods = {n.module for n in ast.walk(tree) if isinstance(n, ast.ImportFrom)}
    mods |= {a.name for n in ast.walk(tree) if isinstance(n, ast.Import) for a in n.names}
    assert not any(m and ("dp" in m.split(".") or "plfunc" in m.split(".") or "polytope" in m.split("."))
                   for m in mods)


# snell_value ---------------------------------------------------------------

def test_snell_one_step_uniform(one_step):
    params, spec = one_step
    payoffs = [np.array([0.0]), np.array([0.0, 20.0])]
    assert O.snell_value([0.5, 0.5], payoffs) == 10.0
    assert O.uniform_snell_value(spec, jump_basis(params, 1), params) == 10.0


def test_snell_zero_payoffs():
    assert O.snell_value([0.25, 0.75], [np.zeros(1), np.zeros(2), np.zeros(4)]) == 0.0


def test_snell_rejects_bad_weights():
    with pytest.raises(ValueError):
        O.snell_value([0.6, 0.6], [np.zeros(1), np.zeros(2)])


def test_two_step_uniform_value_closed_form(one_step):
    # factors 1 +- 0.2/sqrt(2); down node: exercise 10 sqrt 2 equals continuation
    params, spec = one_step
    b = jump_basis(params, 2)
    assert O.uniform_snell_value(spec, b, params) == pytest.approx(0.5 + 5 * math.sqrt(2), abs=1e-12)
    assert O.american_price(spec, b, params) == pytest.approx(0.5 + 5 * math.sqrt(2), abs=1e-12)


def test_frozen_lattice_values(two_asset):
    b = jump_basis(two_asset, 2)
    spec = PayoffSpec("put_on_min", 100.0)
    assert O.uniform_snell_value(spec, b, two_asset) == pytest.approx(19.806118852102003, abs=1e-12)
    assert O.american_price(spec, b, two_asset) == pytest.approx(18.540604390053275, abs=1e-12)
    p = ModelParams.single(0.25, 100.0, 0.3, 0.4)
    bl = jump_basis(p, 3)
    look = PayoffSpec("floating_lookback_put")
    assert O.uniform_snell_value(look, bl, p) == pytest.approx(9.542287776405296, abs=1e-12)
    assert O.american_price(look, bl, p) == pytest.approx(11.705555743842865, abs=1e-12)


# prices ----------------------------------------------------------------------

def test_binomial_hand_values():
    assert O.binomial_american_price(100, 100, 1.2, 0.8, 1) == pytest.approx(10.0, abs=1e-12)
    assert O.binomial_american_price(100, 100, 1.1, 0.9, 3) == pytest.approx(7.475, abs=1e-12)
    assert O.binomial_american_price(100, 90, 1.1, 0.9, 3, "call") == pytest.approx(12.475, abs=1e-12)


def test_binomial_rejects_arbitrage():
    with pytest.raises(ValueError):
        O.binomial_american_price(100, 100, 1.2, 1.05, 2)


@pytest.mark.parametrize("n", range(1, 11))
def test_lattice_price_matches_binomial(n):
    params = ModelParams.single(1.0, 100.0, 0.05, 0.2)
    b = jump_basis(params, n)
    ref = O.binomial_american_price(100.0, 100.0, 1 + b.w_n[0, 0], 1 + b.w_n[1, 0], n)
    assert abs(O.american_price(PUT, b, params) - ref) <= 1e-12


def test_deep_in_the_money_put_exercises_now():
    params = ModelParams.single(1.0, 100.0, 0.0, 1e-6)
    spec = PayoffSpec("put_on_asset", 150.0)
    assert O.american_price(spec, jump_basis(params, 4), params) == pytest.approx(50.0, abs=1e-9)


def test_martingale_weights_hand_value():
    params = ModelParams.single(1.0, 100.0, 0.05, 0.2)
    q = O.martingale_weights(jump_basis(params, 4))
    assert q[0] == pytest.approx(0.4375, abs=1e-12)


# hedge grid ------------------------------------------------------------------

def test_hedge_vertices_and_grid(one_step):
    params, _ = one_step
    b = jump_basis(params, 1)
    assert sorted(O.hedge_vertices(b).ravel()) == pytest.approx([-5.0, 5.0])
    assert O.hedge_grid(b, 4).ravel() == pytest.approx([-5.0, -2.5, 0.0, 2.5, 5.0, 0.0], abs=1e-12)
    assert O.covering_radius(b, 4) == pytest.approx(2.5)


def test_hedge_grid_stays_admissible(two_asset):
    b = jump_basis(two_asset, 3)
    U = O.hedge_grid(b, 8)
    assert np.all(1.0 + U @ b.w_n.T >= -1e-12)
    assert len(U) == math.comb(8 + 2, 2) + 1


# brute force -----------------------------------------------------------------

def test_brute_force_one_step_frozen(one_step):
    params, spec = one_step
    b = jump_basis(params, 1)
    upper, lower = O.brute_force_risk(4.0, spec, b, params, O.GridSearchConfig(4, 64))
    # u = -5 sends down-state wealth to 8, rounded to 7.8125 on the 20/64 grid
    assert upper == pytest.approx(6.09375, abs=1e-12)
    assert lower == pytest.approx(3.78125, abs=1e-12)


def test_brute_force_fine_grid_near_six(one_step):
    params, spec = one_step
    upper, lower = O.brute_force_risk(4.0, spec, jump_basis(params, 1), params, O.GridSearchConfig(1000, 1000))
    assert abs(upper - 6.0) <= 1e-2
    assert lower <= 6.0 <= upper


def test_brute_force_refinement_is_monotone(one_step):
    params, spec = one_step
    b = jump_basis(params, 2)
    cfg = O.GridSearchConfig(4, 32)
    uppers = []
    for _ in range(3):
        uppers.append(O.brute_force_risk(4.0, spec, b, params, cfg)[0])
        cfg = cfg.doubled()
    assert uppers == pytest.approx([3.8748421676911544, 3.669496298570358, 3.669496298570358], abs=1e-12)
    assert all(a >= b for a, b in zip(uppers, uppers[1:]))


def test_brute_force_zero_capital_is_uniform_snell(two_asset):
    b = jump_basis(two_asset, 2)
    spec = PayoffSpec("put_on_min", 100.0)
    upper, lower = O.brute_force_risk(0.0, spec, b, two_asset)
    assert upper == lower == pytest.approx(19.806118852102003, abs=1e-12)


def test_brute_force_rich_capital_is_zero(one_step):
    params, spec = one_step
    assert O.brute_force_risk(100.0, spec, jump_basis(params, 2), params) == (0.0, 0.0)


def test_brute_force_budget_refusal(two_asset):
    spec = PayoffSpec("put_on_min", 100.0)
    with pytest.raises(O.BudgetError, match="budget"):
        O.brute_force_risk(1.0, spec, jump_basis(two_asset, 3), two_asset, O.GridSearchConfig(64, 4096, budget=10**6))
    with pytest.raises(O.BudgetError):
        O.brute_force_risk(1.0, spec, jump_basis(two_asset, 4), two_asset)


def test_grid_config_validation():
    with pytest.raises(ValueError):
        O.GridSearchConfig(1, 10)
    assert O.GridSearchConfig(3, 5).doubled() == O.GridSearchConfig(6, 10)
