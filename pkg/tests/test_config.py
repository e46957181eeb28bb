import json

import pytest

from spreadsurf.config import apply_overrides, config_hash, load_config, parse_config
from spreadsurf.errors import ConfigError

from conftest import CONFIG_DIR

BASE = {
    "grid": {"xi_max": 2, "n_xi": 24, "n_eta": 5},
    "initial_surface": {"family": "flat", "params": {"c": 0.02}},
    "volatility": [{"family": "constant", "params": {"c": 0.01}}],
    "simulation": {"horizon": 1, "n_paths": 10, "output_times": [1]},
}


def _raw(**patch):
    raw = json.loads(json.dumps(BASE))
    for key, val in patch.items():
        raw[key] = val
    return raw


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    rc = load_config(path)
    assert len(rc.hash) == 64 and rc.model.n_paths > 0


def test_hash_ignores_whitespace_and_key_order(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps(BASE))
    b.write_text(json.dumps(dict(reversed(list(BASE.items()))), indent=4, sort_keys=True))
    assert load_config(a).hash == load_config(b).hash == config_hash(BASE)


def test_hash_changes_with_content():
    assert config_hash(BASE) != config_hash(_raw(simulation={"horizon": 2, "n_paths": 10}))


def test_malformed_json_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "grid": {"xi_max": 2,,}\n}')
    with pytest.raises(ConfigError, match=r"line 2, column"):
        load_config(p)


def test_unknown_family_suggests(tmp_path):
    raw = _raw(volatility=[{"family": "exp_decy", "params": {"c": 0.01, "a": 1}}])
    with pytest.raises(ConfigError) as e:
        parse_config(raw)
    assert e.value.location == "volatility[0].family" and "exp_decay" in str(e.value)


def test_unknown_initial_family_suggests():
    with pytest.raises(ConfigError, match="flat") as e:
        parse_config(_raw(initial_surface={"family": "flta", "params": {"c": 1}}))
    assert e.value.location == "initial_surface.family"


@pytest.mark.parametrize("patch, loc", [
    ({"grid": {"xi_max": 2, "n_xi": "24", "n_eta": 5}}, "grid.n_xi"),
    ({"grid": {"xi_max": 2, "n_eta": 5}}, "grid"),
    ({"simulation": {"horizon": 1, "n_paths": 10, "bogus": 1}}, "simulation"),
    ({"simulation": {"output_times": [1, "x"]}}, "simulation.output_times"),
    ({"checks": {"stcdo": {"x1": 0.5, "x2": 0.2, "dates": [0, 1], "kappa": 0.1}}}, "checks.stcdo"),
    ({"extra_section": {}}, ""),
])
def test_errors_are_located(patch, loc):
    with pytest.raises(ConfigError) as e:
        parse_config(_raw(**patch))
    assert (e.value.location or "") == loc


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.json")


def test_overrides_enter_hash():
    rc = parse_config(_raw())
    rc2 = apply_overrides(rc, seed=7, paths=3)
    assert rc2.model.seed == 7 and rc2.model.n_paths == 3 and rc2.hash != rc.hash
    assert apply_overrides(rc).hash == rc.hash


def test_csv_initial_surface(tmp_path, small_grid):
    from spreadsurf.function_space import HbSurface, surface_to_csv
    h = HbSurface.constant(small_grid, 0.03)
    surface_to_csv(h, tmp_path / "h0.csv")
    raw = _raw(initial_surface={"family": "csv", "path": "h0.csv"})
    (tmp_path / "c.json").write_text(json.dumps(raw))
    rc = load_config(tmp_path / "c.json")
    assert rc.model.initial_surface.values.max() == pytest.approx(0.03)
