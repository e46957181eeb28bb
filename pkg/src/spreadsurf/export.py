"""Ensemble export as {run_id}/{time_index}.csv plus JSON diagnostics, and readers."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .engine import SimulationEnsemble
from .errors import DataError
from .function_space import HbSurface, surface_from_csv, surface_to_csv


def _fmt(x) -> str:
    return repr(float(x))


def _columns(ens: SimulationEnsemble) -> list[str]:
    K = ens.grid.n_eta + 1
    cols = ["path", "loss", "log_discount", "min_value"]
    cols += [f"short_{k}" for k in range(K)]
    cols += [f"compensator_{k}" for k in range(K)]
    if ens.log_survival is not None:
        cols += [f"log_survival_{k}" for k in range(K)]
    cols += [f"log_bond_{m}_{k}" for m in range(len(ens.config.bond_maturities)) for k in range(K)]
    return cols


def write_ensemble(ens: SimulationEnsemble, out_dir, run_id: str, extra: dict | None = None) -> list[Path]:
    """Write one CSV per snapshot, kept surfaces, and diagnostics.json."""
    root = Path(out_dir) / run_id
    root.mkdir(parents=True, exist_ok=True)
    files = []
    cols = _columns(ens)
    for s in range(len(ens.output_times)):
        path = root / f"{s}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            parts = [ens.loss[:, s, None], ens.log_discount[:, s, None], ens.min_value[:, s, None],
                     ens.short_end[:, s], ens.compensator[:, s]]
            if ens.log_survival is not None:
                parts.append(ens.log_survival[:, s])
            parts.append(ens.log_bond[:, s].reshape(ens.n_paths, -1))
            block = np.concatenate(parts, axis=1)
            for p in range(ens.n_paths):
                w.writerow([str(p)] + [_fmt(v) for v in block[p]])
        files.append(path)
    for p in range(ens.surfaces.shape[0]):
        for s in range(len(ens.output_times)):
            if np.all(np.isfinite(ens.surfaces[p, s])):
                path = root / "surfaces" / f"{p}_{s}.csv"
                path.parent.mkdir(exist_ok=True)
                surface_to_csv(HbSurface(ens.grid, ens.surfaces[p, s]), path)
                files.append(path)
    ev = ens.loss_events
    diag = {
        "run_id": run_id,
        "n_paths": ens.n_paths,
        "output_times": [float(t) for t in ens.output_times],
        "bond_maturities": [float(t) for t in ens.config.bond_maturities],
        "eta": [float(e) for e in ens.grid.eta],
        "mode": ens.config.mode,
        "market_event_counts": [int(c) for c in ens.market_counts],
        "loss_events": {k: [int(v) if k == "path" else float(v) for v in ev[k]] for k in ev},
        "failures": ens.failures,
    }
    if extra:
        diag.update(extra)
    path = root / "diagnostics.json"
    path.write_text(json.dumps(diag, indent=1, sort_keys=True) + "\n")
    files.append(path)
    return files


def read_snapshot(path) -> dict:
    """Columns of one snapshot CSV as float arrays (path as int)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    except ValueError as e:
        raise DataError(f"{path}: {e}")
    out = {c: data[:, i] for i, c in enumerate(header)}
    if "path" in out:
        out["path"] = out["path"].astype(int)
    return out


def read_ensemble(run_dir) -> dict:
    """Arrays shaped like SimulationEnsemble fields, rebuilt from an export."""
    run_dir = Path(run_dir)
    diag = json.loads((run_dir / "diagnostics.json").read_text())
    S = len(diag["output_times"])
    K = len(diag["eta"])
    M = len(diag["bond_maturities"])
    snaps = [read_snapshot(run_dir / f"{s}.csv") for s in range(S)]
    n = diag["n_paths"]

    def stack(prefix):
        return np.stack([np.stack([sn[f"{prefix}_{k}"] for k in range(K)], axis=1) for sn in snaps], axis=1)

    out = {
        "diagnostics": diag,
        "output_times": np.asarray(diag["output_times"]),
        "loss": np.stack([sn["loss"] for sn in snaps], axis=1),
        "log_discount": np.stack([sn["log_discount"] for sn in snaps], axis=1),
        "min_value": np.stack([sn["min_value"] for sn in snaps], axis=1),
        "short_end": stack("short"),
        "compensator": stack("compensator"),
        "log_survival": stack("log_survival") if diag["mode"] == "mortality" else None,
        "log_bond": np.stack([np.stack([np.stack([sn[f"log_bond_{m}_{k}"] for k in range(K)], axis=1)
                                        for m in range(M)], axis=1) if M else np.zeros((n, 0, K))
                              for sn in snaps], axis=1),
        "loss_events": {k: np.asarray(v) for k, v in diag["loss_events"].items()},
        "surfaces": {},
    }
    surf_dir = run_dir / "surfaces"
    if surf_dir.exists():
        for f in sorted(surf_dir.glob("*.csv")):
            p, s = (int(x) for x in f.stem.split("_"))
            out["surfaces"][(p, s)] = surface_from_csv(f)
    return out
