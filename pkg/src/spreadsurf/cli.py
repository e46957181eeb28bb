"""Command-line front end.

    spreadsurf {simulate,price,drift-check,validate,calibrate-constants} --config PATH
        [--out DIR] [--seed N] [--paths N] [--threads N] [--tolerance-profile {strict,default}]

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or config error,
3 numerical failure (blow-up, thinning bound, non-monotone spread curve).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .coefficients import LossState
from .config import RunConfig, apply_overrides, load_config
from .engine import simulate
from .errors import ConfigError, DataError, ModelError, NumericalError, RangeError, UsageError
from .export import write_ensemble
from .function_space import cache_dir, grid_constants
from .pricing import martingale_test, price_report, stcdo_value, stcdo_value_by_bonds
from .validation import (
    audit_assumptions,
    check_monotonicity,
    check_positivity_conditions,
    drift_residual_table,
    empirical_positivity,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
DRIFT_TOLERANCE = {"default": 1e-3, "strict": 1e-4}


@dataclass
class RunManifest:
    config_path: str
    config_hash: str
    subcommand: str
    output_dir: str
    artifacts: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config_path": self.config_path, "config_hash": self.config_hash,
                "subcommand": self.subcommand, "output_dir": self.output_dir,
                "artifacts": sorted(self.artifacts), "timing": self.timing}

    def write(self, path: Path):
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _run_id(rc: RunConfig, sub: str) -> str:
    stem = Path(rc.source).stem if rc.source else "config"
    return f"{stem}-{sub}-{rc.hash[:10]}"


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(rc, args, root):
    ens = simulate(rc.model, threads=args.threads)
    files = write_ensemble(ens, root.parent, root.name, extra={"config_hash": rc.hash})
    print(f"simulated {ens.n_paths} paths, {len(ens.output_times)} snapshots, "
          f"{len(ens.loss_events['time'])} loss events -> {root}")
    if ens.failures:
        print(f"{len(ens.failures)} path(s) failed numerically")
        return EXIT_NUMERICAL, files
    return EXIT_OK, files


def cmd_price(rc, args, root):
    model = rc.model
    spec = rc.checks.get("martingale", {})
    mats = [float(t) for t in spec.get("maturities", model.output_times)]
    etas = [float(e) for e in spec.get("etas", [1.0])]
    missing = [T for T in mats if T not in model.output_times]
    if missing:
        model = model.with_(output_times=tuple(sorted(set(model.output_times) | set(mats))))
    tr = rc.tranche()
    if tr is not None:
        need = set(tr.payment_dates) - set(model.output_times)
        if need:
            model = model.with_(output_times=tuple(sorted(set(model.output_times) | need)))
    ens = simulate(model, threads=args.threads)
    reports = []
    ok = True
    for T in mats:
        for e in etas:
            m = martingale_test(ens, T, e, profile=args.tolerance_profile)
            rep = price_report(f"bond(T={T:g},eta={e:g})", m.estimate,
                               {"mc_sigmas": 3.0, "bias": m.bias_tol}, m.passed)
            rep["reference"] = m.reference
            reports.append(rep)
            ok &= m.passed
            print(f"martingale T={T:g} eta={e:g}: est={m.estimate.value:.6f} ref={m.reference:.6f} "
                  f"se={m.estimate.stderr:.2e} {'PASS' if m.passed else 'FAIL'}")
    if tr is not None:
        prem, prot, val = stcdo_value(ens, tr)
        bond = stcdo_value_by_bonds(model.initial_surface, tr, model.initial_loss)
        parity = abs(prem.value - bond.value) <= 3.0 * np.hypot(prem.stderr, bond.stderr)
        ok &= bool(parity)
        tol = {"mc_sigmas": 3.0}
        reports.append(price_report("stcdo_premium_leg", prem, tol, parity) | {"bond_route": bond.value})
        reports.append(price_report("stcdo_protection_leg", prot, tol, True))
        reports.append(price_report("stcdo_value", val, tol, True))
        print(f"stcdo premium path={prem.value:.6f}+-{prem.stderr:.1e} bonds={bond.value:.6f} "
              f"protection={prot.value:.6f} {'PASS' if parity else 'FAIL'}")
    files = [_json(root / "price_report.json", reports)]
    return (EXIT_OK if ok else EXIT_FAIL), files


def cmd_drift_check(rc, args, root):
    model = rc.model
    g = model.grid
    spec = rc.checks.get("drift_check", {})
    n_T = min(10, g.n_xi)
    Ts = spec.get("T") or [g.xi[int(round(i * g.n_xi / n_T))] for i in range(1, n_T + 1)]
    etas = spec.get("eta") or [g.eta[int(round(i * g.n_eta / 10))] for i in range(1, 11)]
    level = float(spec.get("loss_level", model.initial_loss))
    tol = float(spec.get("tolerance", DRIFT_TOLERANCE[args.tolerance_profile]))
    R = drift_residual_table(model.initial_surface, LossState(level), model.vol, model.mjump,
                             model.ljump, Ts, etas)
    worst = float(np.nanmax(np.abs(R)))
    passed = worst <= tol
    path = root / "drift_check.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T_minus_t", "eta", "residual"])
        for i, T in enumerate(Ts):
            for k, e in enumerate(etas):
                w.writerow([repr(float(T)), repr(float(e)), repr(float(R[i, k]))])
    summary = {"max_abs_residual": worst, "tolerance": tol, "loss_level": level, "pass": passed}
    print("T\\eta " + " ".join(f"{e:>9.3g}" for e in etas))
    for i, T in enumerate(Ts):
        print(f"{T:<6.3g} " + " ".join(f"{abs(v):9.2e}" for v in R[i]))
    print(f"max |residual| = {worst:.3e} (tolerance {tol:g}) {'PASS' if passed else 'FAIL'}")
    return (EXIT_OK if passed else EXIT_FAIL), [path, _json(root / "drift_check.json", summary)]


def cmd_validate(rc, args, root):
    model = rc.model
    spec = rc.checks.get("validate", {})
    wanted = spec.get("checks", ["positivity", "assumptions"])
    n = int(spec.get("n_samples", 1000))
    seed = model.seed if args.seed is None else args.seed
    reports = []
    if "positivity" in wanted:
        reports.append(check_positivity_conditions(model.vol, model.mjump, model.ljump, model.grid,
                                                   n_samples=n, rng=seed))
    if "assumptions" in wanted:
        reports.append(audit_assumptions(model, n_samples=n, seed=seed,
                                         decay_tolerance=spec.get("decay_tolerance")))
    if "empirical_positivity" in wanted or "monotonicity" in wanted:
        T = float(spec.get("T", model.horizon))
        if "monotonicity" in wanted and T not in model.bond_maturities:
            model = model.with_(bond_maturities=model.bond_maturities + (T,))
        ens = simulate(model, threads=args.threads)
        if "empirical_positivity" in wanted:
            reports.append(empirical_positivity(ens)[1])
        if "monotonicity" in wanted:
            etas = spec.get("etas")
            pairs = None if etas is None else [(a, b) for a in etas for b in etas if a < b]
            reports.append(check_monotonicity(ens, T, pairs))
    unknown = set(wanted) - {"positivity", "assumptions", "empirical_positivity", "monotonicity"}
    if unknown:
        raise ConfigError(f"unknown check(s) {sorted(unknown)}", "checks.validate.checks")
    for r in reports:
        print(f"{r.condition_id}: {'PASS' if r.passed else 'FAIL'} "
              f"({r.n_violations} violation(s) over {r.sample_count} samples)")
    ok = all(r.passed for r in reports)
    return (EXIT_OK if ok else EXIT_FAIL), [_json(root / "validate.json", [r.to_dict() for r in reports])]


def cmd_calibrate(rc, args, root):
    g = rc.model.grid
    consts = grid_constants(g, directory=cache_dir() or root)
    out = consts.to_dict()
    out["c1_theory_bound"] = float(np.sqrt(2 + 2 / g.beta))
    print(" ".join(f"{k}={v:.4g}" for k, v in out.items() if isinstance(v, float)))
    return EXIT_OK, [_json(root / "constants.json", out)]


COMMANDS = {
    "simulate": cmd_simulate,
    "price": cmd_price,
    "drift-check": cmd_drift_check,
    "validate": cmd_validate,
    "calibrate-constants": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spreadsurf", description="Defaultable term-structure surfaces")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--seed", type=int, help="override simulation.seed")
    p.add_argument("--paths", type=int, help="override simulation.n_paths")
    p.add_argument("--threads", type=int, default=1, help="worker threads for path batches")
    p.add_argument("--tolerance-profile", choices=["default", "strict"], default="default")
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        rc = apply_overrides(load_config(args.config), seed=args.seed, paths=args.paths)
        root = Path(args.out) / _run_id(rc, args.command)
        root.mkdir(parents=True, exist_ok=True)
        code, files = COMMANDS[args.command](rc, args, root)
    except (ConfigError, UsageError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, RangeError, ModelError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = RunManifest(args.config, rc.hash, args.command, str(root),
                           [str(Path(f).relative_to(root)) for f in files],
                           {"started_utc": started, "elapsed_s": round(time.perf_counter() - t0, 3)})
    manifest.write(root / "manifest.json")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
