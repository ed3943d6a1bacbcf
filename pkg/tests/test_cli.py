import json
from pathlib import Path

import numpy as np
import pytest

from diffuserscope import cli
from diffuserscope.config import ExperimentConfig
from diffuserscope.container import ArrayContainer, read_container, sha256_file, write_container
from diffuserscope.design import design_report

# Coarse sampling: fast enough for unit tests, not physically converged.
SMALL = {
    "system": "desk",
    "grid": {"n": 768, "oversample": 1, "sensor_shape": [128, 128]},
    "psfs": {"z_min_um": -10.0, "z_max_um": 10.0, "z_step_um": 10.0},
    "solver": {"max_iters": 5, "precision": "float32"},
    "reconstruct": {"method": "admm", "object_px": [33, 33]},
    "resolution": {
        "layouts": ["RMM"], "z_min_um": -10.0, "z_max_um": 10.0, "z_step_um": 10.0,
        "lateral_step_um": 0.5, "lateral_max_um": 4.0, "axial_z_um": [0.0], "axial_step_um": 2.0, "axial_max_um": 8.0,
    },
    "fov": {"layouts": ["MLA", "RMM"], "extent_um": 40.0, "rl_iters": 3, "similarity_step_um": 10.0},
    "depthrange": {
        "layouts": ["RMM"], "n_spheres": 5, "z_first_um": 20.0, "z_step_um": 10.0, "lateral_extent_um": 20.0,
        "z_half_range_um": 30.0, "forward_z_pitch_um": 1.0, "recon_z_step_um": 10.0,
    },
}


@pytest.fixture()
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """surface -> psfs -> forward -> reconstruct on the small grid."""
    root = tmp_path_factory.mktemp("pipe")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    out = root / "out"
    assert run("surface", "--config", cfg, "--out", out) == 0
    assert run("psfs", "--config", cfg, "--out", out, "--surface", out / "surface.bin") == 0
    psfs = read_container(out / "psfs.bin")
    vol = np.zeros((3, 33, 33), dtype=np.float32)
    vol[1, 16, 16] = 1.0
    write_container(root / "vol.bin", ArrayContainer(vol, psfs.meta["object_pitch_um"], [-10.0, 0.0, 10.0]))
    assert run("forward", "--config", cfg, "--out", out, "--volume", root / "vol.bin", "--psfs", out / "psfs.bin") == 0
    assert run("reconstruct", "--config", cfg, "--out", out, "--measurement", out / "measurement.bin",
               "--psfs", out / "psfs.bin") == 0
    return root, cfg, out


def test_design_report_round_trip(tmp_path, capsys):
    assert run("design", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "design.json").read_text())
    expected = json.loads(json.dumps(design_report(ExperimentConfig().system).to_dict()))
    assert doc["report"] == expected
    assert json.loads(capsys.readouterr().out) == expected
    assert doc["provenance"].startswith("design cfg=")


def test_unit_voxel_images_to_its_kernel(pipeline):
    root, cfg, out = pipeline
    psfs = read_container(out / "psfs.bin")
    meas = read_container(out / "measurement.bin")
    np.testing.assert_allclose(meas.data, psfs.data[1], rtol=1e-4, atol=1e-6 * psfs.data[1].max())


def test_provenance_records_inputs(pipeline):
    root, cfg, out = pipeline
    meas = read_container(out / "measurement.bin")
    assert f"psfs={sha256_file(out / 'psfs.bin')}" in meas.provenance
    assert f"volume={sha256_file(root / 'vol.bin')}" in meas.provenance
    psfs = read_container(out / "psfs.bin")
    assert f"surface={sha256_file(out / 'surface.bin')}" in psfs.provenance
    assert psfs.meta["layout"] == "RMM" and psfs.seed == 0


def test_reconstruction_outputs(pipeline):
    root, cfg, out = pipeline
    vol = read_container(out / "volume.bin")
    assert vol.data.shape == (3, 33, 33)
    assert vol.z_positions_um == [-10.0, 0.0, 10.0]
    assert np.all(vol.data >= 0)
    lines = (out / "telemetry.jsonl").read_text().splitlines()
    assert len(lines) == vol.meta["iterations"]
    rows = [json.loads(line) for line in lines]
    assert [r["iter"] for r in rows] == list(range(1, len(rows) + 1))
    assert all({"objective", "primal_residual", "dual_residual", "rho"} <= set(r) for r in rows)


def test_psfs_rerun_is_byte_identical(pipeline, tmp_path):
    root, cfg, out = pipeline
    assert run("psfs", "--config", cfg, "--out", tmp_path, "--threads", 1, "--surface", out / "surface.bin") == 0
    assert (tmp_path / "psfs.bin").read_bytes() == (out / "psfs.bin").read_bytes()


@pytest.mark.parametrize("name", ["resolution", "fov", "depthrange"])
def test_study_rerun_is_byte_identical(small_config, tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("study", name, "--config", small_config, "--out", a) == 0
    assert run("study", name, "--config", small_config, "--out", b, "--threads", 1) == 0
    files = sorted(p.relative_to(a) for p in (a / name).iterdir())
    assert files and files == sorted(p.relative_to(b) for p in (b / name).iterdir())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    results = json.loads((a / name / "results.json").read_text())
    assert "provenance" in results


def test_usage_errors_exit_2(tmp_path, small_config, capsys):
    assert run("bogus") == 2
    assert run("forward", "--config", small_config) == 2  # missing required flags
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"oversampel": 3}}')
    assert run("design", "--config", bad, "--out", tmp_path) == 2
    assert "oversampel" in capsys.readouterr().err
    assert run("design", "--seed", -1, "--out", tmp_path) == 2
    assert run("study", "--out", tmp_path) == 2  # no study named anywhere


def test_missing_and_corrupt_artifacts_exit_1(pipeline, tmp_path, capsys):
    root, cfg, out = pipeline
    assert run("forward", "--config", cfg, "--out", tmp_path, "--volume", tmp_path / "nope.bin",
               "--psfs", out / "psfs.bin") == 1
    assert "nope.bin" in capsys.readouterr().err

    blob = (out / "psfs.bin").read_bytes()
    header, _, body = blob.partition(b"\n")
    doc = json.loads(header)
    doc["pitch_um"] = -1.0
    corrupt = tmp_path / "corrupt.bin"
    corrupt.write_bytes(json.dumps(doc).encode() + b"\n" + body)
    assert run("forward", "--config", cfg, "--out", tmp_path, "--volume", root / "vol.bin", "--psfs", corrupt) == 1
    err = capsys.readouterr().err
    assert "corrupt.bin" in err and "pitch_um" in err

    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(blob[: len(blob) // 2])
    assert run("reconstruct", "--config", cfg, "--out", tmp_path, "--measurement", out / "measurement.bin",
               "--psfs", truncated) == 1
    assert "truncated.bin" in capsys.readouterr().err


def test_measurement_must_be_2d(pipeline, tmp_path, capsys):
    root, cfg, out = pipeline
    assert run("reconstruct", "--config", cfg, "--out", tmp_path, "--measurement", root / "vol.bin",
               "--psfs", out / "psfs.bin") == 1
    assert "shape" in capsys.readouterr().err


def test_module_entry_point_exists():
    assert Path(cli.__file__).name == "cli.py"
    assert cli.build_parser().prog == "diffuserscope"
