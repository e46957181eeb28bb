"""JSON run configuration: parsing, validation and canonical hashing.

Schema (all sections except "grid" and "initial_surface" are optional)::

    {
      "grid": {"xi_max": 5, "n_xi": 60, "n_eta": 10, "beta": 0.5, "beta_prime": 1.0},
      "initial_surface": {"family": "linear_spread", "params": {"rate": 0.02, "spread": 0.03}},
      "volatility": [{"family": "constant", "params": {"c": 0.02}, "weight": 1.0}],
      "market_jumps": {"marks": [1.0], "weights": [0.5],
                       "gamma": {"family": "exp_decay", "params": {"c": 0.004, "a": 1.0}}},
      "loss_jumps": {"delta": {"family": "constant", "params": {"c": 0.01}}},
      "simulation": {"horizon": 5, "n_paths": 1000, "seed": 1, "output_times": [1, 5],
                     "bond_maturities": [5], "rate_bound": 0.2, "mode": "credit",
                     "drift": "no_arbitrage", "loss_dynamics": "spread"},
      "checks": {"martingale": {...}, "stcdo": {...}, "drift_check": {...}, "validate": {...}}
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import FactorVolatility, LossJumpSpec, MarketJumpSpec, make_family
from .engine import ModelConfig
from .errors import ConfigError, DataError, UsageError
from .function_space import HbSurface, SurfaceGrid, surface_from_csv
from .pricing import TranchSpec

SECTIONS = {"grid", "initial_surface", "volatility", "market_jumps", "loss_jumps", "simulation",
            "checks", "description"}
SIM_KEYS = {"horizon", "n_paths", "seed", "rate_bound", "mode", "drift", "loss_dynamics",
            "output_times", "bond_maturities", "batch_size", "keep_surfaces", "blowup",
            "initial_loss"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form; whitespace and key order do not matter."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _get(d, key, loc, default=..., kind=None):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", loc)
    if key not in d:
        if default is ...:
            raise ConfigError(f"missing field '{key}'", loc)
        return default
    v = d[key]
    where = f"{loc}.{key}" if loc else key
    if kind is not None and (not isinstance(v, kind) or isinstance(v, bool) and kind is not bool):
        names = kind if isinstance(kind, tuple) else (kind,)
        raise ConfigError(f"expected {' or '.join(k.__name__ for k in names)}", where)
    return v


def _num(d, key, loc, default=...):
    v = _get(d, key, loc, default, (int, float))
    return v if v is None else float(v)


def _check_keys(d, allowed, loc):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown field(s) {sorted(extra)} (allowed: {sorted(allowed)})", loc)


def _family(spec, loc):
    name = _get(spec, "family", loc, kind=str)
    params = _get(spec, "params", loc, {}, dict)
    _check_keys(spec, {"family", "params", "weight"}, loc)
    try:
        return make_family(name, params)
    except ConfigError as e:
        raise ConfigError(str(e), f"{loc}.family" if "unknown registry" in str(e) else f"{loc}.params")


# -- initial surfaces ----------------------------------------------------------


def _flat(grid, p):
    return HbSurface.constant(grid, p["c"])


def _linear_spread(grid, p):
    """rate + rate_slope (1 - e^{-xi}) + (spread + spread_slope (1 - e^{-xi})) (1 - eta)."""
    ramp = (1 - np.exp(-grid.xi))[:, None]
    vals = p["rate"] + p.get("rate_slope", 0.0) * ramp + \
        (p["spread"] + p.get("spread_slope", 0.0) * ramp) * (1 - grid.eta)[None, :]
    return HbSurface(grid, np.broadcast_to(vals, grid.shape).copy())


INITIAL_FAMILIES = {
    "flat": (_flat, {"c"}, set()),
    "linear_spread": (_linear_spread, {"rate", "spread"}, {"rate_slope", "spread_slope"}),
}


def _initial_surface(spec, grid, loc, base_dir):
    name = _get(spec, "family", loc, kind=str)
    if name == "csv":
        path = Path(_get(spec, "path", loc, kind=str))
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        try:
            h = surface_from_csv(path, grid.beta, grid.beta_prime)
        except (OSError, DataError) as e:
            raise ConfigError(f"cannot read surface: {e}", f"{loc}.path")
        if h.grid != grid:
            raise ConfigError("surface file grid does not match the configured grid", f"{loc}.path")
        return h
    if name not in INITIAL_FAMILIES:
        import difflib
        close = difflib.get_close_matches(name, list(INITIAL_FAMILIES) + ["csv"], n=3, cutoff=0.4)
        hint = f"; did you mean {close}?" if close else ""
        raise ConfigError(f"unknown initial surface family '{name}'{hint}", f"{loc}.family")
    fn, req, opt = INITIAL_FAMILIES[name]
    params = _get(spec, "params", loc, {}, dict)
    _check_keys(params, req | opt, f"{loc}.params")
    for k in req:
        _num(params, k, f"{loc}.params")
    return fn(grid, {k: float(v) for k, v in params.items()})


# -- full config ---------------------------------------------------------------


@dataclass
class RunConfig:
    """A parsed configuration: the model plus the checks requested on it."""

    model: ModelConfig
    checks: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def tranche(self) -> TranchSpec | None:
        spec = self.checks.get("stcdo")
        if not spec:
            return None
        loc = "checks.stcdo"
        try:
            return TranchSpec(_num(spec, "x1", loc), _num(spec, "x2", loc),
                              tuple(_get(spec, "dates", loc, kind=list)), _num(spec, "kappa", loc))
        except UsageError as e:
            raise ConfigError(str(e), loc)


def parse_config(raw: dict, base_dir=None, source: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    _check_keys(raw, SECTIONS, "")
    g = _get(raw, "grid", "", kind=dict)
    _check_keys(g, {"xi_max", "n_xi", "n_eta", "beta", "beta_prime"}, "grid")
    try:
        grid = SurfaceGrid(_num(g, "xi_max", "grid"), _get(g, "n_xi", "grid", kind=int),
                           _get(g, "n_eta", "grid", kind=int), _num(g, "beta", "grid", 0.5),
                           _num(g, "beta_prime", "grid", 1.0))
    except UsageError as e:
        raise ConfigError(str(e), "grid")
    h0 = _initial_surface(_get(raw, "initial_surface", "", kind=dict), grid, "initial_surface", base_dir)

    factors, weights = [], []
    for j, f in enumerate(_get(raw, "volatility", "", [], list)):
        loc = f"volatility[{j}]"
        factors.append(_family(f, loc))
        weights.append(_num(f, "weight", loc, 1.0))
    try:
        vol = FactorVolatility(tuple(factors), tuple(weights))
    except UsageError as e:
        raise ConfigError(str(e), "volatility")

    mj = _get(raw, "market_jumps", "", None, dict)
    if mj:
        _check_keys(mj, {"marks", "weights", "gamma"}, "market_jumps")
        try:
            mjump = MarketJumpSpec(tuple(_get(mj, "marks", "market_jumps", kind=list)),
                                   tuple(_get(mj, "weights", "market_jumps", kind=list)),
                                   _family(_get(mj, "gamma", "market_jumps", kind=dict), "market_jumps.gamma"))
        except (UsageError, ValueError, TypeError) as e:
            raise ConfigError(str(e), "market_jumps")
    else:
        mjump = MarketJumpSpec()

    lj = _get(raw, "loss_jumps", "", None, dict)
    if lj:
        _check_keys(lj, {"delta"}, "loss_jumps")
        ljump = LossJumpSpec(_family(_get(lj, "delta", "loss_jumps", kind=dict), "loss_jumps.delta"))
    else:
        ljump = LossJumpSpec()

    sim = _get(raw, "simulation", "", {}, dict)
    _check_keys(sim, SIM_KEYS, "simulation")
    kw = {}
    for key in ("horizon", "rate_bound", "initial_loss"):
        if key in sim:
            kw[key] = _num(sim, key, "simulation")
    for key in ("n_paths", "seed", "batch_size", "keep_surfaces"):
        if key in sim:
            kw[key] = _get(sim, key, "simulation", kind=int)
    for key in ("mode", "drift", "loss_dynamics", "blowup"):
        if key in sim:
            kw[key] = _get(sim, key, "simulation", kind=str)
    for key in ("output_times", "bond_maturities"):
        if key in sim:
            vals = _get(sim, key, "simulation", kind=list)
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
                raise ConfigError("expected a list of numbers", f"simulation.{key}")
            kw[key] = tuple(float(v) for v in vals)
    try:
        model = ModelConfig(grid=grid, initial_surface=h0, vol=vol, mjump=mjump, ljump=ljump, **kw)
    except UsageError as e:
        raise ConfigError(str(e), "simulation")
    checks = _get(raw, "checks", "", {}, dict)
    _check_keys(checks, {"martingale", "stcdo", "drift_check", "validate"}, "checks")
    rc = RunConfig(model, checks, raw, source)
    rc.tranche()
    return rc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", str(path))
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e.msg}", f"{path}:line {e.lineno}, column {e.colno}")
    return parse_config(raw, base_dir=path.parent, source=str(path))


def apply_overrides(rc: RunConfig, seed: int | None = None, paths: int | None = None) -> RunConfig:
    """Command-line overrides; they enter the raw config and hence its hash."""
    raw = json.loads(json.dumps(rc.raw))
    sim = raw.setdefault("simulation", {})
    kw = {}
    if seed is not None:
        sim["seed"] = kw["seed"] = int(seed)
    if paths is not None:
        sim["n_paths"] = kw["n_paths"] = int(paths)
    try:
        model = rc.model.with_(**kw) if kw else rc.model
    except UsageError as e:
        raise ConfigError(str(e), "command line")
    return RunConfig(model, rc.checks, raw, rc.source)
