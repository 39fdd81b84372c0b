import math

import numpy as np
import pytest
import yaml

from wignerfrag.analysis import DensityGrid
from wignerfrag.classical import Configuration
from wignerfrag.config import RunConfig, config_from_dict, dump_config, get_preset, load_config, presets
from wignerfrag.errors import ConfigError
from wignerfrag.formats import read_density, read_json, read_positions, write_density, write_json, write_positions
from wignerfrag.torus import TorusCell, cell_from_rs


def test_preset_catalogue():
    ps = presets()
    classical_square = [n for n, c in ps.items() if n.endswith("-square") and c.mode == "classical"]
    assert len(classical_square) == 19  # K = 2..20
    for k in range(2, 21):
        assert ps[f"paper-n{k}-square-quantum"].mode == "quantum"
    for name, cfg in ps.items():
        if name.endswith("-desk"):
            assert cfg.n_electrons <= 6 and max(cfg.basis.nx, cfg.basis.ny) <= 12
            assert 4 * max(cfg.basis.nx, cfg.basis.ny) <= 96
    hexp = ps["paper-n16-hex"]
    assert (hexp.basis.nx, hexp.basis.ny, hexp.basis.xi) == (22, 19, 0.8)
    assert hexp.aspect == pytest.approx(math.sqrt(3) / 2)
    square = ps["paper-n7-square-quantum"]
    assert (square.rs, square.basis.nx, square.basis.ny, square.basis.xi) == (105.0, 20, 20, 0.8)


def test_every_preset_round_trips():
    for name, cfg in presets().items():
        back = config_from_dict(yaml.safe_load(dump_config(cfg)))
        assert back == cfg, name
        assert back.config_hash() == cfg.config_hash()


def test_hash_ignores_output_directory_only():
    a = get_preset("paper-n3-square")
    b = config_from_dict({**a.to_dict(), "out": "elsewhere"})
    c = config_from_dict({**a.to_dict(), "seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"aspect": 0.0}, "aspect"),
        ({"aspect": -1.0}, "aspect"),
        ({"rs": float("nan")}, "rs"),
        ({"mode": "fast"}, "mode"),
        ({"n_electrons": 0}, "n_electrons"),
        ({"basis": {"nx": 1}}, "basis"),
        ({"basis": {"bogus": 1}}, "basis.bogus"),
        ({"quadrature": {"mx": 10}}, "quadrature.mx"),
        ({"kernel": "ewald"}, "kernel"),
        ({"scf": {"damping": 2.0}}, "scf"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_validation_names_field(patch, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict({**RunConfig().to_dict(), **patch} if "basis" not in patch else {"basis": patch["basis"]})
    assert info.value.field == field


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("mode: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.yaml"
    good.write_text("mode: quantum\nn_electrons: 2\nbasis: {nx: 8, ny: 8}\n")
    cfg = load_config(good)
    assert cfg.mode == "quantum" and cfg.basis.nx == 8 and cfg.basis.xi == 0.8


def test_top_level_seed_drives_scf():
    cfg = config_from_dict({"seed": 7})
    assert cfg.scf_options().seed == 7


def test_positions_round_trip(tmp_path):
    cell = cell_from_rs(105.0, 3, aspect=0.9)
    conf = Configuration(np.random.default_rng(0).uniform(0, 100, (3, 2)), 0.0123456789012345678)
    path = write_positions(tmp_path / "p.csv", conf, cell, "abc123")
    back, bcell, stamp = read_positions(path)
    np.testing.assert_array_equal(back.positions, conf.positions)
    assert back.energy == conf.energy and bcell.lx == cell.lx and bcell.ly == cell.ly
    assert stamp["config"] == "abc123" and stamp["version"] == 1
    lines = path.read_text().splitlines()
    assert lines[1] == "# N lx ly energy" and lines[3] == "index,x,y"


def test_density_round_trip(tmp_path):
    cell = TorusCell(120.0, 80.0, 2)
    dens = DensityGrid(np.random.default_rng(1).random((12, 8)), cell)
    path = write_density(tmp_path / "d.dat", dens, 2, "h")
    back, n, stamp = read_density(path)
    np.testing.assert_array_equal(back.values, dens.values)
    assert n == 2 and back.cell.lx == 120.0 and stamp["config"] == "h"
    assert path.read_text().splitlines()[1] == "# mx my lx ly N"


def test_json_stamp_and_version_guard(tmp_path):
    path = write_json(tmp_path / "r.json", "scf", {"energy": np.float64(1.5), "v": np.arange(3), "bad": math.inf}, "h")
    doc = read_json(path, "scf")
    assert doc["config_hash"] == "h" and doc["energy"] == 1.5 and doc["v"] == [0, 1, 2] and doc["bad"] is None
    with pytest.raises(ValueError):
        read_json(path, "lattice")
    path.write_text(path.read_text().replace('"version": 1', '"version": 99'))
    with pytest.raises(ValueError):
        read_json(path, "scf")
