"""Acceptance criteria, one test per criterion.

Each test records a single ``CRITERION n: PASS|FAIL ...`` line, echoed in the
terminal summary, and then asserts the same checks. Criteria 4 to 6 run the
desk-scale studies from ``configs/desk.json`` and take several minutes each.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize, special
from scipy.optimize import nnls

from diffuserscope import design, recon, surface, wavesim
from diffuserscope.config import ExperimentConfig, load_config
from diffuserscope.forward import ConvOperator
from diffuserscope.recon import SolverConfig, TVWeights
from diffuserscope.studies import run_study
from diffuserscope.wavesim import FieldGrid

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.json"


def _fmt(checks):
    return "; ".join(f"{name}={'ok' if ok else 'NO'} ({info})" for name, ok, info in checks)


def _finish(criterion_log, n, checks):
    ok = all(c[1] for c in checks)
    criterion_log(n, ok, _fmt(checks))
    failed = [c for c in checks if not c[1]]
    assert not failed, _fmt(failed)


# -- 1. design golden values ----------------------------------------------------------


def test_criterion_1_design_golden_values(criterion_log):
    t0 = time.perf_counter()
    sys = design.reference_system()
    rep = design.design_report(sys)
    schedule = design.focal_length_schedule(sys, 100.0, 25)
    elapsed = time.perf_counter() - t0
    values = {
        "NA_eff": (rep.na_eff, 0.2),
        "R_lat": (rep.r_lateral_um, 1.56),
        "R_ax": (rep.r_axial_um, 1.94),
        "M": (rep.magnification, 6.5),
        "FOV_MLA": (rep.fov_mla_um, 554.0),
        "DOF": (rep.dof_microlens_um, 19.0),
        "f_min": (schedule[0], 54.6),
        "f_max": (schedule[-1], 63.1),
    }
    checks = [(k, abs(v - ref) <= 5e-3 * ref, f"{v:.4g} vs {ref:g}") for k, (v, ref) in values.items()]
    checks.append(("runtime", elapsed < 1.0, f"{1000 * elapsed:.1f} ms"))
    _finish(criterion_log, 1, checks)


# -- 2. operator adjoints and propagation ---------------------------------------------


def test_criterion_2_operator_suite(criterion_log, desk_surfaces):
    rng = np.random.default_rng(2)
    conv = 0.0
    for obj, ker, sensor in [((16, 16), (5, 5), None), ((31, 17), (6, 9), (25, 15)), ((8, 8), (16, 16), (12, 10))]:
        op = ConvOperator(rng.random((3,) + ker), obj, sensor)
        x, y = rng.random((3,) + obj), rng.random(op.sensor_shape)
        lhs, rhs = np.vdot(op.forward(x), y), np.vdot(x, op.adjoint(y))
        conv = max(conv, abs(lhs - rhs) / abs(lhs))

    grad = 0.0
    for shape in [(3, 5, 4), (1, 6, 6), (4, 9, 7)]:
        w = TVWeights(0.7, 1.9)
        x, g = rng.normal(size=shape), rng.normal(size=(3,) + shape)
        lhs, rhs = np.vdot(recon.gradient_op(x, w), g), np.vdot(x, recon.gradient_adjoint(g, w))
        grad = max(grad, abs(lhs - rhs) / abs(lhs))

    n, pitch, d_mm = 256, 0.6, 0.1
    u = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = wavesim.transfer_function(u.shape, pitch, 0.51, d_mm * 1000)
    f = FieldGrid(np.fft.ifft2(np.fft.fft2(u) * (h != 0)), pitch, 0.51)
    back = wavesim.angular_spectrum_propagate(wavesim.angular_spectrum_propagate(f, d_mm), -d_mm)
    diff = back.complex_amplitude - f.complex_amplitude
    rms = float(np.sqrt(np.mean(np.abs(diff) ** 2)) / np.sqrt(np.mean(np.abs(f.complex_amplitude) ** 2)))

    modulus = max(float(np.max(np.abs(np.abs(surface.phase_screen(s, 0.51)) - 1))) for s in desk_surfaces.values())
    checks = [
        ("conv_adjoint", conv <= 1e-6, f"{conv:.1e}"),
        ("grad_adjoint", grad <= 1e-9, f"{grad:.1e}"),
        ("propagation_round_trip", rms <= 1e-10, f"{rms:.1e}"),
        ("unit_modulus", modulus <= 1e-12, f"{modulus:.1e}"),
    ]
    _finish(criterion_log, 2, checks)


# -- 3. single-lenslet focus ----------------------------------------------------------


def _airy_fwhm(wavelength_um, focal_um, diameter_um):
    v_half = optimize.brentq(lambda v: (2 * special.j1(v) / v) ** 2 - 0.5, 0.5, 3.0)
    return 2 * v_half * wavelength_um * focal_um / (math.pi * diameter_um)


def _fwhm(profile, pitch):
    profile = profile / profile.max()
    i = int(np.argmax(profile))

    def cross(step):
        j = i
        while profile[j + step] > 0.5:
            j += step
        a, b = profile[j], profile[j + step]
        return j + step * (a - 0.5) / (a - b)

    return (cross(1) - cross(-1)) * pitch


def test_criterion_3_single_lenslet_focus(criterion_log):
    n, pitch, diameter, focal_mm = 512, 1.0, 300.0, 3.0
    lens = surface.LensletSpec((0.0, 0.0), focal_mm, diameter / 1000.0)
    surf = surface.compose_surface([lens], pitch, (n, n), 1.56, "MLA")
    x = (np.arange(n) - n // 2) * pitch
    aperture = (x[None, :] ** 2 + x[:, None] ** 2) <= (diameter / 2) ** 2
    f0 = FieldGrid(aperture * surface.phase_screen(surf, 0.51), pitch, 0.51)
    steps = list(range(-10, 11))  # depth samples of 1% of f
    images = [wavesim.angular_spectrum_propagate(f0, focal_mm * (1 + 0.01 * j)).intensity for j in steps]
    best = steps[int(np.argmax([im.max() for im in images]))]
    img = images[steps.index(0)]
    cy, cx = np.unravel_index(np.argmax(img), img.shape)
    fwhm = 0.5 * (_fwhm(img[cy, :], pitch) + _fwhm(img[:, cx], pitch))
    oracle = _airy_fwhm(0.51, focal_mm * 1000, diameter)
    err = abs(fwhm - oracle) / oracle
    checks = [
        ("focus_depth", abs(best) <= 1, f"peak at {best} samples from f"),
        ("fwhm", err <= 0.15, f"{fwhm:.3f} vs {oracle:.3f} um, {100 * err:.1f}%"),
    ]
    _finish(criterion_log, 3, checks)


# -- desk-scale studies ---------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_cfg():
    return load_config(DESK_CONFIG)


@pytest.fixture(scope="module")
def study_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _timed_study(cfg, name, out):
    t0 = time.perf_counter()
    results = run_study(cfg, name, out)
    return results, time.perf_counter() - t0


@pytest.fixture(scope="module")
def resolution_run(desk_cfg, study_dir):
    return _timed_study(desk_cfg, "resolution", study_dir / "resolution")


@pytest.fixture(scope="module")
def fov_run(desk_cfg, study_dir):
    return _timed_study(desk_cfg, "fov", study_dir / "fov")


@pytest.fixture(scope="module")
def depthrange_run(desk_cfg, study_dir):
    return _timed_study(desk_cfg, "depthrange", study_dir / "depthrange")


def _res(value):
    return math.inf if value is None else float(value)


@pytest.mark.slow
def test_criterion_4_two_point_resolution(criterion_log, resolution_run):
    results, elapsed = resolution_run
    r_lat = results["theory"]["r_lateral_um"]
    curves = {}
    for kind, c in results["curves"].items():
        curves[kind] = {float(z): _res(v) for z, v in zip(c["z_positions_um"], c["lateral_res_um"])}
    checks = []
    for kind in ("MLA", "RUM"):
        v = curves[kind][0.0]
        checks.append((f"a_{kind}_in_focus", v <= r_lat, f"{v:.2f} <= {r_lat:.2f} um"))
    for kind in ("MLA", "RUM"):
        v0 = curves[kind][0.0]
        ratios = {z: curves[kind][z] / v0 for z in (-20.0, 20.0)}
        ok = all(r >= 2.0 for r in ratios.values())
        checks.append((f"b_{kind}_defocus", ok, ", ".join(f"z={z:+.0f}: {r:.2f}x" for z, r in ratios.items())))
    rmm = curves["RMM"]
    v0 = rmm[0.0]
    band = {z: v / v0 for z, v in rmm.items() if -80.0 <= z <= 90.0}
    lo, hi = min(band.values()), max(band.values())
    checks.append(("c_RMM_band", lo >= 1.0 and hi <= 3.5, f"in-focus {v0:.2f} um, ratio {lo:.2f}..{hi:.2f}x"))
    checks.append(("runtime", elapsed <= 600, f"{elapsed / 60:.1f} min"))
    _finish(criterion_log, 4, checks)


@pytest.mark.slow
def test_criterion_5_field_of_view(criterion_log, fov_run):
    results, elapsed = fov_run
    m = results["metrics"]
    checks = [("MLA_ghosts", m["MLA"]["ghost_energy_fraction"] > 0.10, f"{m['MLA']['ghost_energy_fraction']:.3f}")]
    for kind in ("RUM", "RMM"):
        g = m[kind]["ghost_energy_fraction"]
        checks.append((f"{kind}_no_ghosts", g < 0.02, f"{g:.3f}"))
    checks.append(("psnr_RUM_ge_RMM", m["RUM"]["psnr_db"] >= m["RMM"]["psnr_db"],
                   f"{m['RUM']['psnr_db']:.1f} vs {m['RMM']['psnr_db']:.1f} dB"))
    for kind in ("RUM", "RMM"):
        s = m[kind]["min_similarity"]
        checks.append((f"{kind}_similarity", s >= 0.75, f"min {s:.3f}"))
    checks.append(("runtime", elapsed <= 600, f"{elapsed / 60:.1f} min"))
    _finish(criterion_log, 5, checks)


@pytest.mark.slow
def test_criterion_6_depth_range(criterion_log, depthrange_run):
    results, elapsed = depthrange_run
    lay = results["layouts"]
    n = {k: lay[k]["resolved_count"] for k in lay}
    best_uni = max(n["MLA"], n["RUM"])
    ratio = n["RMM"] / best_uni if best_uni else math.inf
    band = results["uni_focal_band_um"]
    checks = [
        ("RMM_gt_RUM", n["RMM"] > n["RUM"], f"{n['RMM']} vs {n['RUM']}"),
        ("RMM_gt_MLA", n["RMM"] > n["MLA"], f"{n['RMM']} vs {n['MLA']}"),
        ("ratio", ratio >= 2.0, f"{ratio:.2f}"),
    ]
    for kind in ("MLA", "RUM"):
        z = lay[kind]["resolved_z_um"]
        span = f"z {min(z):+.0f}..{max(z):+.0f} um" if z else "none"
        checks.append((f"{kind}_band", lay[kind]["within_uni_focal_band"], f"{span}, |z| <= {band:.0f}"))
    checks.append(("runtime", elapsed <= 900, f"{elapsed / 60:.1f} min"))
    _finish(criterion_log, 6, checks)


# -- 7. solver properties -------------------------------------------------------------


def _random_instance(seed, nz=3, obj=(12, 12), ker=(5, 5)):
    rng = np.random.default_rng(seed)
    k = rng.random((nz,) + ker) + 0.05
    x = np.zeros((nz,) + obj)
    for i, (a, b) in enumerate(rng.integers(0, obj[0], size=(6, 2))):
        x[i % nz, a, b] = rng.uniform(1, 3)
    op = ConvOperator(k, obj)
    y = rng.poisson(np.maximum(op.forward(x), 0) * 50) / 50.0
    return op, y


def _tiny_problem():
    rng = np.random.default_rng(7)
    op = ConvOperator(rng.random((3, 5, 5)), (16, 16), (16, 16))
    x = np.zeros((3, 16, 16))
    x[rng.integers(0, 3, 12), rng.integers(0, 16, 12), rng.integers(0, 16, 12)] = rng.uniform(0.5, 2.0, 12)
    y = np.maximum(op.forward(x) + 0.05 * rng.normal(size=(16, 16)), 0.0)
    y[:3, :3] = 0.0
    return op, y


def _dense(op):
    n = int(np.prod(op.input_shape))
    cols = []
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        cols.append(op.forward(e.reshape(op.input_shape)).ravel())
        e[i] = 0.0
    return np.stack(cols, axis=1)


def test_criterion_7_solvers(criterion_log):
    rl_ok = []
    for seed in range(3):
        op, y = _random_instance(seed)
        ll = []
        recon.richardson_lucy_operator(y, op, 8, callback=lambda k, x: ll.append(recon.poisson_log_likelihood(y, op.forward(x), 1e-300)))
        rl_ok.append(len(ll) == 8 and all(b >= a - 1e-10 * abs(a) for a, b in zip(ll, ll[1:])))

    op, y = _tiny_problem()
    a = _dense(op)
    x_ref, _ = nnls(a, y.ravel(), maxiter=50 * a.shape[1])
    fit_ref = a @ x_ref
    x, _, _ = recon.admm_tv_operator(y, op, SolverConfig(tau=0.0, max_iters=3000, tolerance=1e-13))
    rel = float(np.linalg.norm(op.forward(x).ravel() - fit_ref) / np.linalg.norm(fit_ref))

    mono = []
    for tau in (0.0, 1e-3, 1e-2):
        _, _, tele = recon.admm_tv_operator(y, op, SolverConfig(tau=tau, max_iters=400, tolerance=0.0))
        obj = np.array([t["objective"] for t in tele])[5:]
        mono.append(bool(np.all(np.diff(obj) <= 1e-12 * obj[:-1])))
    checks = [
        ("RL_likelihood", all(rl_ok), f"{sum(rl_ok)}/3 instances monotone over 8 iterations"),
        ("ADMM_tau0_vs_dense", rel <= 1e-4, f"{rel:.1e}"),
        ("ADMM_monotone_after_burn_in", all(mono), f"{sum(mono)}/3 tau values"),
    ]
    _finish(criterion_log, 7, checks)


# -- 8. determinism -------------------------------------------------------------------

REDUCED = {
    "system": "desk",
    "grid": {"n": 768, "oversample": 1, "sensor_shape": [128, 128]},
    "solver": {"max_iters": 5, "precision": "float32"},
    "resolution": {
        "layouts": ["MLA", "RMM"], "z_min_um": -10.0, "z_max_um": 10.0, "z_step_um": 10.0,
        "lateral_step_um": 0.5, "lateral_max_um": 4.0, "axial_z_um": [0.0], "axial_step_um": 2.0, "axial_max_um": 8.0,
    },
    "fov": {"layouts": ["MLA", "RMM"], "extent_um": 40.0, "rl_iters": 3, "similarity_step_um": 10.0},
    "depthrange": {
        "layouts": ["RUM", "RMM"], "n_spheres": 5, "z_first_um": 20.0, "z_step_um": 10.0, "lateral_extent_um": 20.0,
        "z_half_range_um": 30.0, "forward_z_pitch_um": 1.0, "recon_z_step_um": 10.0,
    },
}


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_8_determinism(criterion_log, tmp_path, desk_cfg, fov_run, study_dir):
    cfg = ExperimentConfig.from_dict(REDUCED)
    checks = []
    for name in ("resolution", "fov", "depthrange"):
        run_study(cfg, name, tmp_path / "a" / name)
        run_study(cfg, name, tmp_path / "b" / name)
        a, b = _tree(tmp_path / "a" / name), _tree(tmp_path / "b" / name)
        same = bool(a) and a == b
        checks.append((f"reduced_{name}", same, f"{len(a)} files"))
    # full desk field-of-view study repeated against the criterion 5 artifacts
    run_study(desk_cfg, "fov", tmp_path / "desk_fov")
    a, b = _tree(study_dir / "fov"), _tree(tmp_path / "desk_fov")
    checks.append(("desk_fov", bool(a) and a == b, f"{len(a)} files"))
    results = json.loads((tmp_path / "desk_fov" / "results.json").read_text())
    checks.append(("provenance", results["provenance"].startswith("study fov cfg="), results["provenance"].split()[2]))
    _finish(criterion_log, 8, checks)
