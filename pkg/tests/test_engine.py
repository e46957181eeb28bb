import numpy as np
import pytest

from spreadsurf.coefficients import (
    Constant,
    ExpDecay,
    FactorVolatility,
    LossJumpSpec,
    LossState,
    MarketJumpSpec,
)
from spreadsurf.engine import ModelConfig, PathState, simulate, step_mild
from spreadsurf.errors import BlowUpError, ThinningBoundError, UsageError
from spreadsurf.function_space import HbSurface, SurfaceGrid, cumtrapz_xi, shift
from spreadsurf.mpp import JumpEvent, RngStream

from conftest import linear_short_surface


def _cfg(grid, h0=None, **kw):
    h0 = h0 if h0 is not None else HbSurface.constant(grid, 0.03)
    return ModelConfig(grid=grid, initial_surface=h0, **kw)


def test_config_validation(small_grid):
    with pytest.raises(UsageError):
        _cfg(small_grid, horizon=0.05)  # off lattice
    with pytest.raises(UsageError):
        _cfg(small_grid, mode="other")
    with pytest.raises(UsageError):
        _cfg(small_grid, horizon=1.0, output_times=(2.0,))
    with pytest.raises(UsageError):
        _cfg(small_grid, bond_maturities=(3.0,))
    other = SurfaceGrid(2.0, 12, 5)
    with pytest.raises(UsageError):
        ModelConfig(grid=small_grid, initial_surface=HbSurface.zeros(other))


def test_zero_coefficients_pure_transport(grid, rng):
    from spreadsurf.function_space import random_surface
    h = random_surface(grid, rng)
    cfg = _cfg(grid, h)
    st = step_mild(PathState(0.0, h), grid.d_xi, [], [], cfg)
    assert st.surface == shift(h, grid.d_xi)


def test_flat_zero_model_snapshots(small_grid):
    c = 0.03
    cfg = _cfg(small_grid, n_paths=1, horizon=2.0, output_times=(0.5, 1.0, 2.0), keep_surfaces=1)
    ens = simulate(cfg)
    assert np.all(ens.surfaces == c)
    np.testing.assert_allclose(np.exp(ens.log_discount[0]), np.exp(-c * np.array([0.5, 1, 2])), rtol=1e-14)


def test_forced_drift_matches_variation_of_constants():
    g = SurfaceGrid(4.0, 160, 2)
    h0 = HbSurface.zeros(g)
    cfg = _cfg(g, h0)
    alpha = HbSurface.from_function(g, lambda x, e: 0.01 * np.exp(-x) + 0 * e)
    st = PathState(0.0, h0)
    n = 40
    for _ in range(n):
        st = step_mild(st, g.d_xi, [], [], cfg, alpha=alpha)
    t = n * g.d_xi
    # int_0^t alpha(xi + t - s) ds = 0.01 e^{-xi} (e^{t} - 1) e^{-t} where xi + t stays on the grid
    xi = g.xi[: -n]
    exact = 0.01 * np.exp(-xi) * (1 - np.exp(-t))
    err = np.max(np.abs(st.surface.values[: -n, 0] - exact))
    assert err <= 0.01 * g.d_xi


def test_single_forced_loss_event(small_grid):
    g = small_grid
    h = linear_short_surface(g)
    cfg = _cfg(g, h, ljump=LossJumpSpec(Constant(c=0.01)))
    st = PathState(0.0, h)
    new = step_mild(st, g.d_xi, [JumpEvent(0.5 * g.d_xi, "loss", 0.2)], [], cfg,
                    alpha=HbSurface.zeros(g))
    assert new.loss.level == pytest.approx(0.2)
    assert new.surface == shift(h + 0.01, g.d_xi)
    with pytest.raises(UsageError):
        step_mild(st, g.d_xi, [JumpEvent(2 * g.d_xi, "loss", 0.1)], [], cfg)
    with pytest.raises(UsageError):
        step_mild(st, 2 * g.d_xi, [], [], cfg)


def test_step_mild_matches_simulate():
    g = SurfaceGrid(3.0, 36, 5)
    h0 = HbSurface.from_function(g, lambda x, e: 0.02 + 0.01 * np.exp(-x) * (1 - e))
    vol = FactorVolatility((ExpDecay(c=0.01, a=0.8), Constant(c=0.003)))
    cfg = _cfg(g, h0, vol=vol, horizon=1.0, n_paths=3, seed=11, keep_surfaces=3, loss_dynamics="none")
    ens = simulate(cfg)
    for p in range(3):
        dW = RngStream(11, p, "wiener").generator().standard_normal((cfg.n_steps, 2)) * np.sqrt(g.d_xi)
        st = PathState(0.0, h0)
        for k in range(cfg.n_steps):
            st = step_mild(st, g.d_xi, [], dW[k], cfg)
        np.testing.assert_allclose(st.surface.values, ens.surfaces[p, -1], rtol=1e-13, atol=1e-16)
        assert st.log_discount == pytest.approx(ens.log_discount[p, -1], rel=1e-13)


def test_determinism_across_batches_and_threads(small_grid):
    g = small_grid
    h0 = HbSurface.from_function(g, lambda x, e: 0.02 + 0.03 * (1 - e) + 0 * x)
    cfg = _cfg(g, h0, vol=FactorVolatility((ExpDecay(c=0.01, a=1.0),)),
               mjump=MarketJumpSpec((1.0,), (0.5,), Constant(c=0.002)),
               ljump=LossJumpSpec(Constant(c=0.01)), horizon=2.0, n_paths=300, seed=5,
               rate_bound=0.2, output_times=(1.0, 2.0), bond_maturities=(2.0,))
    a = simulate(cfg)
    b = simulate(cfg.with_(batch_size=37), threads=3)
    for f in ("loss", "log_discount", "min_value", "short_end", "compensator", "log_bond"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True), f
    for k in a.loss_events:
        assert np.array_equal(a.loss_events[k], b.loss_events[k])
    assert a.loss_events["time"].size > 0


def test_loss_paths_nondecreasing_and_bounded(small_grid):
    g = small_grid
    h0 = HbSurface.from_function(g, lambda x, e: 0.02 + 0.3 * (1 - e) + 0 * x)
    cfg = _cfg(g, h0, ljump=LossJumpSpec(Constant(c=0.001)), horizon=2.0, n_paths=200,
               rate_bound=1.0, output_times=(0.5, 1.0, 1.5, 2.0))
    ens = simulate(cfg)
    assert np.all(np.diff(ens.loss, axis=1) >= 0)
    assert np.all(ens.loss <= 1.0)
    ev = ens.loss_events
    assert np.all(ev["level_after"] >= ev["level_before"])
    assert np.all(ev["level_after"] <= 1.0)
    assert np.all(np.isfinite(ens.log_discount))


def test_thinning_bound_error(small_grid):
    h0 = linear_short_surface(small_grid, 0.0, 0.5)
    cfg = _cfg(small_grid, h0, rate_bound=0.1, horizon=2.0, n_paths=50)
    with pytest.raises(ThinningBoundError):
        simulate(cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_policy(small_grid):
    g = small_grid
    from spreadsurf.coefficients import ProportionalCapped
    vol = FactorVolatility((ProportionalCapped(c=1e6, cap=1e300, bound=1.0),))
    h0 = HbSurface.constant(g, 1.0)
    cfg = _cfg(g, h0, vol=vol, horizon=2.0, n_paths=4, loss_dynamics="none")
    with pytest.raises(BlowUpError):
        simulate(cfg)
    ens = simulate(cfg.with_(blowup="record"))
    assert len(ens.failures) == 4 and ens.failed.all()


def test_compensator_identity(small_grid):
    g = small_grid
    h0 = HbSurface.from_function(g, lambda x, e: 0.02 + (0.2 + 0.05 * np.exp(-x)) * (1 - e))
    cfg = _cfg(g, h0, ljump=LossJumpSpec(Constant(c=0.01)), horizon=2.0, n_paths=4000, seed=3,
               rate_bound=1.0, output_times=(2.0,))
    ens = simulate(cfg)
    for k in (2, 5):
        x = (ens.loss[:, -1] <= g.eta[k]) + ens.compensator[:, -1, k]
        se = x.std(ddof=1) / np.sqrt(len(x))
        assert abs(x.mean() - 1.0) <= 3 * se + 1e-12


def test_mortality_mode_survival(small_grid):
    g = small_grid
    h0 = HbSurface.from_function(g, lambda x, e: 0.01 + 0.002 * x + 0.01 * e)
    cfg = _cfg(g, h0, mode="mortality", horizon=1.0, n_paths=2, output_times=(1.0,))
    ens = simulate(cfg)
    expect = -cumtrapz_xi(h0.values, g.d_xi)[g.xi_index(1.0)]
    np.testing.assert_allclose(ens.log_survival[0, 0], expect, rtol=1e-13)
    assert ens.loss_events["time"].size == 0
