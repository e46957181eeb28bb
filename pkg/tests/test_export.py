import numpy as np
import pytest

from spreadsurf.coefficients import Constant, ExpDecay, FactorVolatility, LossJumpSpec, MarketJumpSpec
from spreadsurf.engine import ModelConfig, simulate
from spreadsurf.errors import DataError
from spreadsurf.export import read_ensemble, read_snapshot, write_ensemble
from spreadsurf.function_space import HbSurface


@pytest.fixture
def ensemble(small_grid):
    h0 = HbSurface.from_function(small_grid, lambda x, e: 0.02 + 0.04 * (1 - e) + 0 * x)
    cfg = ModelConfig(grid=small_grid, initial_surface=h0, vol=FactorVolatility((ExpDecay(c=0.01, a=1.0),)),
                      mjump=MarketJumpSpec((1.0,), (0.5,), Constant(c=0.002)),
                      ljump=LossJumpSpec(Constant(c=0.005)), n_paths=7, horizon=2.0,
                      output_times=(1.0, 2.0), bond_maturities=(1.0, 2.0), keep_surfaces=2,
                      rate_bound=0.3, seed=4)
    return simulate(cfg)


def test_round_trip_exact(tmp_path, ensemble):
    write_ensemble(ensemble, tmp_path, "run")
    back = read_ensemble(tmp_path / "run")
    for name in ("loss", "log_discount", "min_value", "short_end", "compensator", "log_bond"):
        np.testing.assert_array_equal(back[name], getattr(ensemble, name))
    assert back["output_times"].tolist() == list(ensemble.output_times)
    for (p, s), h in back["surfaces"].items():
        np.testing.assert_array_equal(h.values, ensemble.surfaces[p, s])
    assert len(back["surfaces"]) == 4
    np.testing.assert_array_equal(back["loss_events"]["time"], ensemble.loss_events["time"])


def test_write_is_deterministic(tmp_path, ensemble):
    write_ensemble(ensemble, tmp_path, "a")
    write_ensemble(ensemble, tmp_path, "b")
    for f in (tmp_path / "a").rglob("*.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_read_snapshot_without_path_column(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,b\n1,2\n3,4\n")
    out = read_snapshot(p)
    assert out["a"].tolist() == [1.0, 3.0] and "path" not in out


@pytest.mark.parametrize("text", ["", "a,b\n1,x\n", "a,b\n1\n"])
def test_read_snapshot_malformed(tmp_path, text):
    p = tmp_path / "s.csv"
    p.write_text(text)
    with pytest.raises(DataError):
        read_snapshot(p)
