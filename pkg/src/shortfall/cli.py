"""Command-line entry point: ``shortfall {risk,policy,converge,verify,mc} --config run.toml``.

Exit status: 0 success, 1 a verification check failed, 2 configuration
error, 3 a size budget refused the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import bs_mc, dp, oracle
from .config import ConfigError, RunConfig, load_config
from .market import LatticeError, ModelParams, build_orthogonal, jump_basis, min_depth, risk_neutral_weights
from .oracle import BudgetError, GridSearchConfig

log = logging.getLogger("shortfall")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3
SCHEMA_VERSION = 1
ORACLE_MAX_N = 3


def fmt(v) -> str:
    """17 significant digits; round-trips every double."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def path_str(path) -> str:
    return "-".join(str(int(w)) for w in path)


# --------------------------------------------------------------------------- #
# Budgets and solving
# --------------------------------------------------------------------------- #

def tree_nodes(d: int, n: int, recombine: bool) -> int:
    if recombine:
        return sum(math.comb(k + d, d) for k in range(n + 1))
    m = d + 1
    return (m ** (n + 1) - 1) // (m - 1)


def check_budget(cfg: RunConfig, n: int) -> None:
    size = tree_nodes(cfg.params.d, n, cfg.recombine)
    if size > cfg.budget.max_nodes:
        raise BudgetError(size, cfg.budget.max_nodes, f"lattice with n={n}", "nodes")


def check_depth(params: ModelParams, n: int) -> None:
    nmin = min_depth(params)
    if n < nmin:
        raise ConfigError(f"lattice.n={n} is below min_depth={nmin} for this model")


def run_solve(cfg: RunConfig, n: int, keep_policy: bool = False) -> dp.ShortfallSolution:
    check_depth(cfg.params, n)
    check_budget(cfg, n)
    t0 = time.perf_counter()
    sol = dp.solve(cfg.payoff, cfg.params, n, eps=cfg.eps, recombine=cfg.recombine,
                   keep_policy=keep_policy, threads=cfg.threads)
    log.info("n=%d solved in %.3fs, H0 has %d breakpoints", n, time.perf_counter() - t0, sol.H0.breakpoints.size)
    return sol


# --------------------------------------------------------------------------- #
# Commands; each returns (json document, csv header, csv rows, exit status)
# --------------------------------------------------------------------------- #

def _doc(kind: str, cfg: RunConfig, **body) -> dict:
    return {
        "schema": f"shortfall.{kind}/{SCHEMA_VERSION}",
        "payoff": {"kind": cfg.payoff.kind, "strike": cfg.payoff.strike, "asset": cfg.payoff.asset,
                   "cap": cfg.payoff.cap},
        "model": {"T": cfg.params.T, "S0": cfg.params.S0.tolist(), "b": cfg.params.b.tolist(),
                  "sigma": cfg.params.sigma.tolist()},
        "eps": cfg.eps,
        **body,
    }


def cmd_risk(cfg: RunConfig):
    runs, rows = [], []
    for n in cfg.n:
        sol = run_solve(cfg, n)
        risk = [float(sol.risk(x)) for x in cfg.capital]
        h0 = sol.H0
        runs.append({
            "n": n,
            "error_bound": sol.error_bound,
            "h0": {"breakpoints": h0.breakpoints.tolist(), "values": h0.values.tolist()},
            "rows": [{"x": x, "risk": r} for x, r in zip(cfg.capital, risk)],
        })
        rows += [["risk", n, x, r] for x, r in zip(cfg.capital, risk)]
        rows += [["h0", n, b, v] for b, v in zip(h0.breakpoints, h0.values)]
    return _doc("risk", cfg, runs=runs), ["table", "n", "x", "value"], rows, EXIT_OK


def cmd_policy(cfg: RunConfig, x: float | None = None):
    n = cfg.n[0]
    if x is None:
        x = next((v for v in cfg.capital if v > 0), 0.0)
    if not x > 0:
        raise ConfigError(f"policy needs capital x > 0, got {x}")
    sol = run_solve(cfg, n, keep_policy=True)
    d = cfg.params.d
    space = sol.space
    nodes, rows = [], []
    for k, layer in enumerate(sol.policy.layers):
        for s, pol in enumerate(layer):
            path = space.path(k, s)
            ivs = []
            for lo, hi, base, recip in pol.intervals():
                hi = None if math.isinf(hi) else hi
                ivs.append({"y_lo": lo, "y_hi": hi, "base": base.tolist(), "recip": recip.tolist()})
                rows.append(["hedge", path_str(path), lo, hi, *base, *recip, None])
            nodes.append({"path": list(path), "intervals": ivs})

    wealth_nodes = []
    full = tree_nodes(d, n, False)
    if full <= cfg.budget.max_nodes:
        port = dp.Portfolio.from_policy(sol.policy, x)
        layers = dp.portfolio_wealth(port, sol.basis)
        tree = dp.FullTree(d + 1)
        for k, ys in enumerate(layers):
            for s, y in enumerate(ys):
                path = tree.path(k, s)
                wealth_nodes.append({"path": list(path), "wealth": float(y)})
                rows.append(["wealth", path_str(path), None, None, *([None] * 2 * d), float(y)])
        snell = dp.snell_risk_of_portfolio(port, cfg.payoff, sol.basis, cfg.params)
    else:
        log.warning("rollout tree has %d nodes, above the budget; omitted", full)
        snell = None
    header = ["table", "path", "y_lo", "y_hi", *[f"base_{i + 1}" for i in range(d)],
              *[f"recip_{i + 1}" for i in range(d)], "wealth"]
    doc = _doc("policy", cfg, n=n, x=x, risk=float(sol.risk(x)), rollout_risk=snell,
               nodes=nodes, wealth=wealth_nodes)
    return doc, header, rows, EXIT_OK


def cmd_converge(cfg: RunConfig):
    ns = sorted(set(cfg.n))
    table = {}
    for n in ns:
        sol = run_solve(cfg, n)
        table[n] = [float(sol.risk(x)) for x in cfg.capital]
    rows, out = [], []
    for j, x in enumerate(cfg.capital):
        prev = None
        for n in ns:
            r = table[n][j]
            diff = None if prev is None else abs(r - prev)
            rows.append([n, x, r, diff])
            out.append({"n": n, "x": x, "risk": r, "diff": diff})
            prev = r
    return _doc("converge", cfg, rows=out), ["n", "x", "risk", "diff"], rows, EXIT_OK


def _check(name, passed, measured, tol, detail=""):
    return {"name": name, "passed": bool(passed), "measured": float(measured), "tolerance": float(tol),
            "detail": detail}


def market_checks(params: ModelParams, n: int) -> list[dict]:
    d = params.d
    A = build_orthogonal(d)
    xi = np.sqrt(d + 1) * A[:, :d]
    orth = float(np.max(np.abs(A @ A.T - np.eye(d + 1))))
    mean = float(np.max(np.abs(xi.mean(axis=0))))
    cov = float(np.max(np.abs(xi.T @ xi / (d + 1) - np.eye(d))))
    basis = jump_basis(params, n)
    q = risk_neutral_weights(basis).q
    mart = float(np.max(np.abs(q @ basis.w_n)))
    try:
        ModelParams(T=1.0, S0=[100.0, 100.0], b=[0.0, 0.0], sigma=[[0.2, 0.4], [0.1, 0.2]])
        guard = False
    except ValueError:
        guard = True
    tol = 1e-12
    return [
        _check("orthogonal_matrix", orth <= tol, orth, tol),
        _check("jump_mean_zero", mean <= tol, mean, tol),
        _check("jump_identity_covariance", cov <= tol, cov, tol),
        _check(f"martingale_weights_n{n}", mart <= tol, mart, tol),
        _check("singular_sigma_guard", guard, 0.0 if guard else 1.0, 0.0,
               "a singular volatility matrix must be refused at construction"),
    ]


def lattice_checks(cfg: RunConfig, n: int) -> list[dict]:
    tol = cfg.verify.tolerance
    spec, params = cfg.payoff, cfg.params
    sol = dp.solve(spec, params, n, recombine=cfg.recombine, keep_policy=True)
    basis = sol.basis
    out = []
    unif = oracle.uniform_snell_value(spec, basis, params)
    err = abs(float(sol.H0(0.0)) - unif)
    out.append(_check(f"zero_capital_n{n}", err <= tol, err, tol))
    price = oracle.american_price(spec, basis, params)
    r = float(sol.H0(price + 1e-9))
    out.append(_check(f"zero_risk_at_price_n{n}", r <= tol, r, tol))

    worst = 0.0
    for x in cfg.capital:
        if x > 0:
            port = dp.Portfolio.from_policy(sol.policy, x)
            worst = max(worst, abs(dp.snell_risk_of_portfolio(port, spec, basis, params) - float(sol.H0(x))))
    out.append(_check(f"policy_optimality_n{n}", worst <= tol, worst, tol))

    if params.d == 1:
        A = build_orthogonal(1)
        A2 = A.copy()
        A2[:, 0] *= -1.0
        alt = dp.solve(spec, params, n, basis=jump_basis(params, n, A2), recombine=cfg.recombine, keep_policy=False)
        diff = max(abs(float(sol.H0(x)) - float(alt.H0(x))) for x in cfg.capital + (0.0, price / 2))
        out.append(_check(f"matrix_invariance_n{n}", diff <= tol, diff, tol))

    if n <= ORACLE_MAX_N:
        g = GridSearchConfig(cfg.verify.hedge_resolution, cfg.verify.wealth_resolution, ORACLE_MAX_N,
                             cfg.budget.oracle_evaluations)
        viol, gaps, monotone = 0.0, [], True
        for x in cfg.capital[:5]:
            h = float(sol.H0(x))
            prev = math.inf
            gc = g
            for _ in range(cfg.verify.refinements + 1):
                upper, lower = oracle.brute_force_risk(x, spec, basis, params, gc)
                viol = max(viol, lower - h, h - upper)
                monotone &= upper <= prev + tol
                prev = upper
                gc = gc.doubled()
            gaps.append(prev - h)
        out.append(_check(f"oracle_sandwich_n{n}", viol <= tol, viol, tol))
        out.append(_check(f"oracle_refinement_monotone_n{n}", monotone, max(gaps, default=0.0), tol,
                          "measured is the final upper-bound gap"))
    return out


def cmd_verify(cfg: RunConfig):
    nmin = min_depth(cfg.params)
    checks = market_checks(cfg.params, max(cfg.n[0], nmin))
    small = sorted({n for n in cfg.n if nmin <= n <= ORACLE_MAX_N}) or [nmin]
    for n in small:
        checks += lattice_checks(cfg, n)
    growth = []
    for n in cfg.n:
        sol = run_solve(cfg, n)
        for k, mx, mean in sol.breakpoint_counts:
            growth.append({"n": n, "k": k, "max_breakpoints": mx, "mean_breakpoints": mean})
    ok = all(c["passed"] for c in checks)
    rows = [["check", c["name"], c["passed"], c["measured"], c["tolerance"], None, None, None, None] for c in checks]
    rows += [["growth", None, None, None, None, g["n"], g["k"], g["max_breakpoints"], g["mean_breakpoints"]]
             for g in growth]
    header = ["table", "name", "passed", "measured", "tolerance", "n", "k", "max_breakpoints", "mean_breakpoints"]
    doc = _doc("verify", cfg, passed=ok, checks=checks, growth=growth)
    return doc, header, rows, EXIT_OK if ok else EXIT_VERIFY


def cmd_mc(cfg: RunConfig):
    n = cfg.n[0]
    n_grid = cfg.mc.n_grid or n
    sim = bs_mc.SimConfig(cfg.mc.n_paths, n_grid, cfg.seed, cfg.params)
    ests = [(e, None, None) for e in bs_mc.martingale_checks(sim)]
    hedges = [("zero", bs_mc.zero_hedge)]
    if n_grid == n:
        sol = run_solve(cfg, n, keep_policy=True)
        hedges.append(("lattice_policy", bs_mc.lattice_policy_hedge(sol.policy, sol.basis)))
    else:
        log.warning("mc.n_grid=%d differs from lattice.n=%d; lattice policy not simulated", n_grid, n)
    for name, h in hedges:
        for x in cfg.capital:
            ests.append((bs_mc.grid_hedge_risk_lower_bound(h, x, cfg.payoff, sim), name, x))
    out = [{**e.to_dict(), "hedge": h, "x": x} for e, h, x in ests]
    rows = [[e.label, h, x, e.estimate, e.stderr, e.n_paths, e.seed] for e, h, x in ests]
    header = ["label", "hedge", "x", "estimate", "stderr", "n_paths", "seed"]
    return _doc("mc", cfg, n_grid=n_grid, estimates=out), header, rows, EXIT_OK


# --------------------------------------------------------------------------- #
# Emission
# --------------------------------------------------------------------------- #

def load_schema(kind: str) -> dict:
    text = resources.files("shortfall").joinpath("schemas", f"{kind}.schema.json").read_text()
    return json.loads(text)


def render(doc: dict, header, rows, fmt_name: str, kind: str) -> str:
    if fmt_name == "json":
        jsonschema.validate(doc, load_schema(kind))
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


COMMANDS = {"risk": cmd_risk, "policy": cmd_policy, "converge": cmd_converge, "verify": cmd_verify, "mc": cmd_mc}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shortfall", description="Shortfall risk and optimal hedges on multinomial lattices.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "risk": "risk curve x -> R_n(x) and the breakpoints of the value function",
        "policy": "hedge table per node and the optimal wealth tree for one capital",
        "converge": "risk over a sweep of lattice depths with successive differences",
        "verify": "oracle, consistency and market checks plus a breakpoint growth table",
        "mc": "Black-Scholes Monte Carlo identities and grid-stopping shortfall estimates",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH", help="output file (default: config value or stdout)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--threads", type=int, metavar="N")
        p.add_argument("--eps", type=float, metavar="FLOAT")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "policy":
            p.add_argument("--x", type=float, help="initial capital (default: first capital value)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.eps is not None and args.eps < 0:
            raise ConfigError("--eps must be >= 0")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(threads=args.threads, eps=args.eps, seed=args.seed, out=args.out,
                                 format=args.format)
        if args.command == "policy":
            doc, header, rows, status = cmd_policy(cfg, args.x)
        else:
            doc, header, rows, status = COMMANDS[args.command](cfg)
        text = render(doc, header, rows, cfg.format, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LatticeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
