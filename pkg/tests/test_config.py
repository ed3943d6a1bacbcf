import dataclasses
import json

import pytest

from diffuserscope import design
from diffuserscope.config import ConfigError, ExperimentConfig, load_config
from diffuserscope.design import Layout


def test_defaults_are_desk_rmm():
    cfg = ExperimentConfig()
    assert cfg.system == design.desk_system()
    assert cfg.layout_kind is Layout.RMM
    assert cfg.workers is None


@pytest.mark.parametrize(
    "doc, where",
    [
        ({"sedd": 1}, "sedd"),
        ({"grid": {"n": 256, "oversampel": 3}}, "grid"),
        ({"solver": {"tv_weights": {"xy": 1.0, "zz": 2.0}}}, "solver.tv_weights"),
        ({"system": {"preset": "desk", "pixel": 2.0}}, "system"),
        ({"fov": {"layouts": ["MLA"], "blocks": 3}}, "fov"),
    ],
)
def test_unknown_keys_name_their_path(doc, where):
    with pytest.raises(ConfigError, match=where):
        ExperimentConfig.from_dict(doc)


@pytest.mark.parametrize(
    "doc",
    [
        {"seed": -1},
        {"seed": 1.5},
        {"threads": -2},
        {"layout_kind": "LENS"},
        {"study": "everything"},
        {"system": "lab"},
        {"grid": {"precision": "float16"}},
        {"reconstruct": {"method": "fista"}},
        {"forward": {"noise_level": -0.1}},
        {"resolution": {"layouts": ["MLA", "XYZ"]}},
        [1, 2],
    ],
)
def test_invalid_values_rejected(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_preset_with_overrides():
    cfg = ExperimentConfig.from_dict({"system": {"preset": "desk", "pixel_um": 2.0}})
    assert cfg.system.pixel_um == 2.0
    assert cfg.system.obj_na == design.desk_system().obj_na
    assert ExperimentConfig.from_dict({"system": "reference"}).system == design.reference_system()


def test_round_trip_through_dict():
    cfg = ExperimentConfig.from_dict({"seed": 7, "layout_kind": "MLA", "psfs": {"z_step_um": 2.5}})
    again = ExperimentConfig.from_dict(json.loads(cfg.canonical_json()))
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()


def test_hash_tracks_results_not_scheduling():
    base = ExperimentConfig()
    assert len(base.config_hash()) == 16
    assert dataclasses.replace(base, threads=4).config_hash() == base.config_hash()
    assert dataclasses.replace(base, output_dir="elsewhere").config_hash() == base.config_hash()
    assert dataclasses.replace(base, seed=1).config_hash() != base.config_hash()
    assert ExperimentConfig.from_dict({"grid": {"n": 1024}}).config_hash() != base.config_hash()


def test_psf_depth_list():
    cfg = ExperimentConfig.from_dict({"psfs": {"z_min_um": -10, "z_max_um": 10, "z_step_um": 5}})
    assert cfg.psfs.z_list().tolist() == [-10, -5, 0, 5, 10]
    bad = ExperimentConfig.from_dict({"psfs": {"z_step_um": 0}})
    with pytest.raises(ConfigError):
        bad.psfs.z_list()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)


@pytest.mark.parametrize("name", ["desk.json", "reference.json"])
def test_shipped_configs_load(name):
    from pathlib import Path

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert cfg.seed == 0
