"""Run configuration read from a TOML file.

Example::

    [model]
    T = 1.0
    S0 = [100.0]
    b = [0.0]
    sigma = [[0.2]]

    [payoff]
    kind = "put_on_asset"
    strike = 100.0

    [lattice]
    n = 1                 # or a list for sweeps: n = [2, 4, 8]
    recombine = false

    [capital]
    x = [0.0, 4.0, 10.0]  # or: grid = { min = 0.0, max = 12.0, count = 13 }
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .market import ModelParams
from .payoff import PayoffSpec


class ConfigError(ValueError):
    """Invalid or unreadable configuration; the message names the field."""


@dataclass(frozen=True)
class Budget:
    """Refusal limits: total full-tree nodes for the recursion and oracle grid evaluations."""

    max_nodes: int = 5_000_000
    oracle_evaluations: int = 50_000_000


@dataclass(frozen=True)
class MCSettings:
    n_paths: int = 100_000
    n_grid: Optional[int] = None


@dataclass(frozen=True)
class VerifySettings:
    hedge_resolution: int = 8
    wealth_resolution: int = 128
    refinements: int = 2
    tolerance: float = 1e-9


@dataclass(frozen=True, eq=False)
class RunConfig:
    params: ModelParams
    payoff: PayoffSpec
    n: tuple[int, ...]
    capital: tuple[float, ...]
    recombine: bool = False
    eps: float = 0.0
    seed: int = 0
    threads: int = 1
    out: Optional[str] = None
    format: str = "csv"
    budget: Budget = field(default_factory=Budget)
    mc: MCSettings = field(default_factory=MCSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _section(doc: dict, name: str, required: bool = True) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _get(sec: dict, where: str, key: str, kind, default=...):
    if key not in sec:
        if default is ...:
            raise ConfigError(f"missing field {where}.{key}")
        return default
    v = sec[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        raise ConfigError(f"field {where}.{key} has type {type(v).__name__}, expected {kind.__name__}")
    return v


def _known(sec: dict, where: str, keys: set) -> None:
    extra = sorted(set(sec) - keys)
    if extra:
        raise ConfigError(f"unknown field(s) in [{where}]: {', '.join(extra)}")


def _capital(sec: dict) -> tuple[float, ...]:
    _known(sec, "capital", {"x", "grid"})
    if ("x" in sec) == ("grid" in sec):
        raise ConfigError("[capital] needs exactly one of capital.x or capital.grid")
    if "x" in sec:
        x = sec["x"]
        xs = x if isinstance(x, list) else [x]
        try:
            vals = tuple(float(v) for v in xs)
        except (TypeError, ValueError):
            raise ConfigError("capital.x must be a number or a list of numbers") from None
    else:
        g = sec["grid"]
        if not isinstance(g, dict):
            raise ConfigError("capital.grid must be a table {min, max, count}")
        _known(g, "capital.grid", {"min", "max", "count"})
        lo = _get(g, "capital.grid", "min", float)
        hi = _get(g, "capital.grid", "max", float)
        count = _get(g, "capital.grid", "count", int)
        if count < 1 or hi < lo:
            raise ConfigError("capital.grid needs count >= 1 and max >= min")
        vals = tuple(float(v) for v in np.linspace(lo, hi, count))
    if not vals:
        raise ConfigError("capital.x is empty")
    if any(not np.isfinite(v) or v < 0 for v in vals):
        raise ConfigError("capital values must be finite and >= 0")
    return vals


def parse_config(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed TOML document."""
    _known(doc, "top level", {"model", "payoff", "lattice", "capital", "run", "output", "budget", "mc", "verify"})
    m = _section(doc, "model")
    _known(m, "model", {"T", "S0", "b", "sigma"})
    for key in ("T", "S0", "b", "sigma"):
        if key not in m:
            raise ConfigError(f"missing field model.{key}")
    try:
        params = ModelParams(T=m["T"], S0=m["S0"], b=m["b"], sigma=m["sigma"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[model]: {exc}") from None

    p = _section(doc, "payoff")
    _known(p, "payoff", {"kind", "strike", "asset", "cap"})
    try:
        payoff = PayoffSpec(
            kind=_get(p, "payoff", "kind", str),
            strike=_get(p, "payoff", "strike", float, 0.0),
            asset=_get(p, "payoff", "asset", int, 1),
            cap=_get(p, "payoff", "cap", float, None),
        )
    except ValueError as exc:
        raise ConfigError(f"[payoff]: {exc}") from None
    if payoff.kind in ("put_on_asset", "call_on_asset", "floating_lookback_put") and payoff.asset > params.d:
        raise ConfigError(f"payoff.asset={payoff.asset} but the model has {params.d} asset(s)")

    lat = _section(doc, "lattice")
    _known(lat, "lattice", {"n", "recombine"})
    if "n" not in lat:
        raise ConfigError("missing field lattice.n")
    ns = lat["n"] if isinstance(lat["n"], list) else [lat["n"]]
    if not ns or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in ns):
        raise ConfigError("lattice.n must be a positive integer or a list of them")
    recombine = _get(lat, "lattice", "recombine", bool, False)
    if recombine and payoff.path_dependent:
        raise ConfigError(f"lattice.recombine is not valid for the path-dependent payoff {payoff.kind}")

    capital = _capital(_section(doc, "capital"))

    run = _section(doc, "run", required=False)
    _known(run, "run", {"eps", "seed", "threads"})
    eps = _get(run, "run", "eps", float, 0.0)
    seed = _get(run, "run", "seed", int, 0)
    # default to one worker per core; output does not depend on the count
    threads = _get(run, "run", "threads", int, os.cpu_count() or 1)
    if eps < 0 or seed < 0 or threads < 1:
        raise ConfigError("run.eps and run.seed must be >= 0 and run.threads >= 1")

    out = _section(doc, "output", required=False)
    _known(out, "output", {"path", "format"})
    fmt = _get(out, "output", "format", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output.format must be 'csv' or 'json', got {fmt!r}")

    b = _section(doc, "budget", required=False)
    _known(b, "budget", {"max_nodes", "oracle_evaluations"})
    budget = Budget(_get(b, "budget", "max_nodes", int, Budget.max_nodes),
                    _get(b, "budget", "oracle_evaluations", int, Budget.oracle_evaluations))

    mc = _section(doc, "mc", required=False)
    _known(mc, "mc", {"n_paths", "n_grid"})
    mcs = MCSettings(_get(mc, "mc", "n_paths", int, MCSettings.n_paths), _get(mc, "mc", "n_grid", int, None))
    if mcs.n_paths < 1 or (mcs.n_grid is not None and mcs.n_grid < 1):
        raise ConfigError("mc.n_paths and mc.n_grid must be >= 1")

    v = _section(doc, "verify", required=False)
    _known(v, "verify", {"hedge_resolution", "wealth_resolution", "refinements", "tolerance"})
    vs = VerifySettings(
        _get(v, "verify", "hedge_resolution", int, VerifySettings.hedge_resolution),
        _get(v, "verify", "wealth_resolution", int, VerifySettings.wealth_resolution),
        _get(v, "verify", "refinements", int, VerifySettings.refinements),
        _get(v, "verify", "tolerance", float, VerifySettings.tolerance),
    )
    if vs.hedge_resolution < 2 or vs.wealth_resolution < 2 or vs.refinements < 0:
        raise ConfigError("verify resolutions must be >= 2 and refinements >= 0")

    return RunConfig(
        params=params, payoff=payoff, n=tuple(ns), capital=capital, recombine=recombine,
        eps=eps, seed=seed, threads=threads, out=_get(out, "output", "path", str, None), format=fmt,
        budget=budget, mc=mcs, verify=vs,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc)
