"""Acceptance criteria 1-9 at their stated tolerances.

Each test prints one pass/fail line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from spreadsurf.cli import run
from spreadsurf.coefficients import LossState, drift_alpha, drift_residual_values
from spreadsurf.config import apply_overrides, load_config
from spreadsurf.engine import ModelConfig, simulate
from spreadsurf.function_space import (
    HbSurface,
    SurfaceGrid,
    exp_surface,
    grid_constants,
    hb_norm,
    norm_values,
    random_surface,
    random_surface_values,
    shift,
)
from spreadsurf.pricing import TranchSpec, martingale_test, stcdo_value, stcdo_value_by_bonds
from spreadsurf.validation import (
    MODEL_KINDS,
    check_monotonicity,
    check_positivity_conditions,
    empirical_positivity,
    probe_growth,
    probe_lipschitz,
    random_registry_model,
)

from conftest import CONFIG_DIR

MC_PATHS = 100_000
MATURITIES = (1.0, 2.0, 5.0)
ETAS = (0.3, 0.7, 1.0)
CONFIGS = sorted(CONFIG_DIR.glob("*.json"))


def _ensemble(name, **overrides):
    rc = apply_overrides(load_config(CONFIG_DIR / name), paths=MC_PATHS)
    model = rc.model.with_(**overrides) if overrides else rc.model
    t0 = time.perf_counter()
    return simulate(model), time.perf_counter() - t0


@pytest.fixture(scope="module")
def holee():
    return _ensemble("holee.json")


@pytest.fixture(scope="module")
def jump():
    return _ensemble("jump.json")


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_drift_residual(acceptance):
    t0 = time.perf_counter()
    worst, worst_order = 0.0, np.inf
    for i in range(20):
        m = random_registry_model(np.random.default_rng([7, i]), MODEL_KINDS[i % 3])
        loss = LossState(m.loss_level)
        errs = []
        for per_year in (26, 52, 104):
            g = SurfaceGrid(10.0, 10 * per_year, 50)
            h = m.surface(g)
            R = drift_residual_values(h, loss, m.vol, m.mjump, m.ljump, drift_alpha(loss, h, m.vol, m.mjump, m.ljump))
            rows = [g.xi_index(T) for T in range(1, 11)]
            cols = [g.eta_index(k / 10) for k in range(1, 11)]
            errs.append(float(np.nanmax(np.abs(R[np.ix_(rows, cols)]))))
        worst = max(worst, errs[1])
        worst_order = min(worst_order, np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2]))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and worst_order >= 1.8 and elapsed < 60
    acceptance(1, ok, f"max|residual|={worst:.2e} at dxi=1/52, min order={worst_order:.2f}, {elapsed:.1f}s")
    assert ok


# -- 2 and 3 ---------------------------------------------------------------------


def test_criterion_2_martingale(acceptance, holee, jump):
    lines, ok = [], True
    for name, (ens, secs) in (("holee", holee), ("jump", jump)):
        results = [martingale_test(ens, T, e) for T in MATURITIES for e in ETAS]
        n_pass = sum(m.passed for m in results)
        ok &= n_pass == len(results) and secs < 300
        worst = max(m.sigmas for m in results)
        lines.append(f"{name}: {n_pass}/{len(results)} within 3se+bias, worst |dev|/se={worst:.2f}, {secs:.0f}s")
    acceptance(2, ok, "; ".join(lines))
    assert ok


@pytest.mark.parametrize("name", ["holee.json", "jump.json"])
def test_criterion_3_negative_control(acceptance, name):
    ens, secs = _ensemble(name, drift="zero")
    seps = []
    for e in ETAS:
        m = martingale_test(ens, 5.0, e)
        seps.append((abs(m.deviation) - m.bias_tol) / m.estimate.stderr)
    ok = min(seps) >= 5.0
    acceptance(3, ok, f"{name} zero drift at T=5: separation " +
               ", ".join(f"eta={e:g}:{s:.1f}sd" for e, s in zip(ETAS, seps)))
    assert ok


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_survival_oracle(acceptance):
    r0, s0, s1 = 0.02, 0.03, 0.002
    g = SurfaceGrid(10.0, 120, 10)
    h0 = HbSurface.from_function(g, lambda x, e: r0 + (s0 + s1 * x) * (1 - e))
    cfg = ModelConfig(grid=g, initial_surface=h0, n_paths=10_000, horizon=5.0, seed=21,
                      output_times=MATURITIES, rate_bound=0.1)
    ens = simulate(cfg)
    ok, parts = True, []
    for T in MATURITIES:
        s = ens.snapshot_index(T)
        alive = (ens.loss[:, s] == 0.0).astype(float)
        p = alive.mean()
        se = alive.std(ddof=1) / np.sqrt(len(alive))
        oracle = np.exp(-(s0 * T + 0.5 * s1 * T * T))
        ok &= abs(p - oracle) <= 3 * se
        parts.append(f"T={T:g}: {p:.4f} vs {oracle:.4f} ({abs(p - oracle) / se:.2f}se)")
    acceptance(4, ok, "; ".join(parts))
    assert ok


# -- 5 ---------------------------------------------------------------------------


def test_criterion_5_positivity_chain(acceptance):
    rc = apply_overrides(load_config(CONFIG_DIR / "positivity.json"), paths=10_000)
    model = rc.model
    pos = check_positivity_conditions(model.vol, model.mjump, model.ljump, model.grid, rng=model.seed)
    ens = simulate(model)
    m, emp = empirical_positivity(ens)
    sub = [k / 10 for k in range(1, 11)]
    mono = check_monotonicity(ens, 2.0, [(a, b) for a in sub for b in sub if a < b])
    ok = pos.passed and emp.passed and mono.n_violations == 0 and len(ens.output_times) == 5
    acceptance(5, ok, f"checker {'pass' if pos.passed else 'fail'}, min value {m:.3e}, "
               f"{mono.n_violations} monotonicity violations over {mono.sample_count} comparisons")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def test_criterion_6_hb_kernel(acceptance):
    checks = {}
    g = SurfaceGrid(5.0, 60, 10)
    checks["constant"] = hb_norm(HbSurface.constant(g, 2.5)).total == 2.5
    # e^{-xi} with beta=1, beta'=1.5: sqrt(1 + 1/(2-1)) = sqrt(2)
    errs = []
    for n in (400, 800):
        ge = SurfaceGrid(40.0, n, 2, 1.0, 1.5)
        errs.append(abs(hb_norm(HbSurface.from_function(ge, lambda x, e: np.exp(-x) + 0 * e)).total - np.sqrt(2)))
    checks["exp"] = errs[1] < 1e-4 and errs[0] / errs[1] > 3.5
    gp = SurfaceGrid(30.0, 1200, 20, 0.5, 1.0)
    nb = hb_norm(HbSurface.from_function(gp, lambda x, e: e * np.exp(-x)))
    checks["product"] = abs(nb.eta_term - 1) < 1e-12 and abs(nb.mixed_term - 1 / 1.5) < 1e-3 * (1 / 1.5)
    a = 0.8
    ex = exp_surface(HbSurface.from_function(gp, lambda x, e: -a * x + 0 * e))
    checks["exp-composite"] = abs(hb_norm(ex).total / np.sqrt(1 + a * a / (2 * a - 0.5)) - 1) < 1e-3
    rng = np.random.default_rng(6)
    h = random_surface(g, rng)
    checks["semigroup"] = all(shift(shift(h, i * g.d_xi), j * g.d_xi) == shift(h, (i + j) * g.d_xi)
                              for i in range(0, 8) for j in range(0, 8))
    c1 = grid_constants(g).c1
    H = random_surface_values(g, rng, 1000)
    ratio = np.max(np.abs(H), axis=(1, 2)) / norm_values(H, g)
    checks["sup-bound"] = bool(np.all(ratio <= c1))
    ok = all(checks.values())
    acceptance(6, ok, ", ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items()) +
               f" (C1={c1:.3f}, max ratio {ratio.max():.3f})")
    assert ok


# -- 7 ---------------------------------------------------------------------------


def test_criterion_7_stcdo_parity(acceptance, jump):
    ens, _ = jump
    rc = load_config(CONFIG_DIR / "jump.json")
    tr = rc.tranche()
    prem, _, _ = stcdo_value(ens, tr)
    bond = stcdo_value_by_bonds(ens.initial_surface, tr)
    parity = abs(prem.value - bond.value) <= 3 * np.hypot(prem.stderr, bond.stderr)
    degen = TranchSpec(0.2, 0.2, tr.dates, tr.kappa)
    dp, dq, dv = stcdo_value(ens, degen)
    db = stcdo_value_by_bonds(ens.initial_surface, degen)
    zero = dp.value == dq.value == dv.value == db.value == 0.0
    ok = bool(parity and zero)
    acceptance(7, ok, f"premium path {prem.value:.6f}+-{prem.stderr:.1e} vs bonds {bond.value:.6f}; "
               f"degenerate tranche {'exactly 0' if zero else 'nonzero'}")
    assert ok


# -- 8 ---------------------------------------------------------------------------


def test_criterion_8_probes(acceptance):
    worst, finite, parts = 0.0, True, []
    for path in CONFIGS:
        m = load_config(path).model
        grow = probe_growth(m.grid, m.vol, m.mjump, m.ljump, n_samples=(1000, 2000))
        lips = probe_lipschitz(m.grid, m.vol, m.mjump, m.ljump, n_samples=(1000, 2000))
        probes = [grow] + list(lips.values())
        finite &= all(np.isfinite(v) for p in probes for v in p.estimates.values())
        drift = max(p.relative_change(1000, 2000) for p in probes)
        worst = max(worst, drift)
        parts.append(f"{path.stem}:{100 * drift:.2f}%")
    ok = bool(finite and worst < 0.05)
    acceptance(8, ok, f"max drift {100 * worst:.2f}% ({', '.join(parts)})")
    assert ok


# -- 9 ---------------------------------------------------------------------------


def _outputs(root):
    (d,) = list(root.iterdir())
    return {str(f.relative_to(d)): f.read_bytes() for f in sorted(d.rglob("*"))
            if f.is_file() and f.name != "manifest.json"}


def test_criterion_9_determinism(acceptance, tmp_path):
    bad = []
    for path in CONFIGS:
        outs = []
        for threads in (1, 2):
            root = tmp_path / f"{path.stem}-{threads}"
            run(["simulate", "--config", str(path), "--out", str(root), "--threads", str(threads)])
            outs.append(_outputs(root))
        if not outs[0] or outs[0] != outs[1]:
            bad.append(path.stem)
    ok = not bad
    acceptance(9, ok, f"{len(CONFIGS)} configs, threads 1 vs 2 byte-identical" if ok else f"differ: {bad}")
    assert ok
