"""Study pipelines: two-point resolution, field of view and depth range.

Each runner is a pure function of the configuration: it writes a results JSON,
CSV tables and array containers into ``out_dir`` and returns the results dict.
Wall-clock timings go to the ``diffuserscope`` logger only, never to artifacts.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    cosine_similarity_profile,
    count_resolved_spheres,
    fov_phantom,
    ghost_energy,
    psnr,
    resolution_curve,
    spiral_phantom,
)
from .config import ExperimentConfig
from .container import ArrayContainer, write_container, write_json_atomic, write_text_atomic
from .design import Layout, design_report, dof_microlens, fov, magnification
from .forward import (
    ConvOperator,
    Measurement,
    PSFField,
    add_gaussian_noise,
    forward_project_blockwise,
    recenter_kernel,
)
from .recon import admm_tv, richardson_lucy_operator
from .surface import generate_surface
from .wavesim import PSFSimulator

__all__ = [
    "make_surface",
    "make_simulator",
    "provenance",
    "jsonable",
    "run_resolution_study",
    "run_fov_study",
    "run_depthrange_study",
    "run_study",
]

log = logging.getLogger("diffuserscope")


def make_surface(cfg: ExperimentConfig, layout):
    grid = cfg.grid.simulation_grid()
    sys = cfg.system
    return generate_surface(sys, layout, cfg.seed, grid.sample_pitch_um(sys), grid.mask_shape(sys))


def make_simulator(cfg: ExperimentConfig, layout, surface=None) -> PSFSimulator:
    surface = make_surface(cfg, layout) if surface is None else surface
    return PSFSimulator(
        cfg.system, surface, cfg.grid.simulation_grid(), dtype=np.dtype(cfg.grid.precision), workers=cfg.workers
    )


def provenance(cfg: ExperimentConfig, command: str, inputs: dict | None = None) -> str:
    """``command cfg=<hash> seed=<n> version=<v> [name=sha256 ...]``."""
    parts = [command, f"cfg={cfg.config_hash()}", f"seed={cfg.seed}", f"version={__version__}"]
    for name, digest in sorted((inputs or {}).items()):
        parts.append(f"{name}={digest}")
    return " ".join(parts)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays to JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if (isinstance(v, float) and not math.isfinite(v)) else (f"{v:.6g}" if isinstance(v, float) else v) for v in row])
    write_text_atomic(path, buf.getvalue())


class _Timer:
    def __init__(self, label):
        self.label = label

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        log.info("%s: %.1f s", self.label, time.perf_counter() - self.t0)


def _object_pitch(cfg) -> float:
    return cfg.system.pixel_um / magnification(cfg.system)


# -- two-point resolution -------------------------------------------------------------


def run_resolution_study(cfg: ExperimentConfig, out_dir) -> dict:
    """Lateral (and optional axial) two-point resolution against depth for each layout.

    Writes ``results.json``, ``lateral.csv`` and, when axial depths are
    configured, ``axial.csv``.
    """
    p = cfg.resolution
    out = Path(out_dir)
    n = int(round((p.z_max_um - p.z_min_um) / p.z_step_um))
    zs = p.z_min_um + p.z_step_um * np.arange(n + 1)
    curves, details = {}, {}
    for kind in p.layouts:
        with _Timer(f"resolution {kind}"):
            sim = make_simulator(cfg, kind)
            curve, det = resolution_curve(
                sim,
                zs,
                layout_kind=kind,
                lateral_step_um=p.lateral_step_um,
                lateral_max_um=p.lateral_max_um,
                axial_z_um=p.axial_z_um,
                axial_step_um=p.axial_step_um,
                axial_max_um=p.axial_max_um,
                rl_iters=p.rl_iters,
                coarse_factor=p.coarse_factor,
            )
        curves[kind] = curve
        details[kind] = {
            axis: [
                {"z_um": float(z), "separation_um": r.separation_um, "bound_um": r.bound_um,
                 "trials": [list(t) for t in r.trials], "violations": r.violations}
                for z, r in zip(zs if axis == "lateral" else sorted(p.axial_z_um), res)
            ]
            for axis, res in det.items()
        }
    report = design_report(cfg.system)
    results = {
        "study": "resolution",
        "provenance": provenance(cfg, "study resolution"),
        "theory": {"r_lateral_um": report.r_lateral_um, "r_axial_um": report.r_axial_um},
        "curves": {k: c.to_dict() for k, c in curves.items()},
        "trials": details,
    }
    results = jsonable(results)
    write_json_atomic(out / "results.json", results)
    _csv(out / "lateral.csv", ["z_um"] + list(curves), [[float(z)] + [float(c.lateral_res_um[i]) for c in curves.values()] for i, z in enumerate(zs)])
    if p.axial_z_um:
        rows = [[float(z)] + [float(c.axial_res_um[i]) for c in curves.values()] for i, z in enumerate(zs) if z in set(p.axial_z_um)]
        _csv(out / "axial.csv", ["z_um"] + list(curves), rows)
    return results


# -- field of view --------------------------------------------------------------------


def block_psf_field(sim: PSFSimulator, plane_shape, block_px: int, pitch_um: float) -> PSFField:
    """Kernels at every block centre of an in-focus plane, recentred for the block-wise model.

    Object pixel offset ``(dy, dx)`` from the plane centre is the source at
    ``(dx * pitch, dy * pitch)``; its kernel is shifted back by ``(-dy, -dx)``
    so the convolution restores the position.
    """
    # a partial edge block uses the centre of the part inside the plane
    cy, cx = (
        [(start + min(start + block_px, n) - 1) // 2 for start in range(0, n, block_px)] for n in plane_shape
    )
    c0y, c0x = plane_shape[0] // 2, plane_shape[1] // 2
    rows = []
    for iy in cy:
        row = []
        for ix in cx:
            dy, dx = int(iy - c0y), int(ix - c0x)
            k = sim((dx * pitch_um, dy * pitch_um, 0.0))
            row.append(recenter_kernel(k, (-dy, -dx)))
        rows.append(np.stack(row))
    return PSFField(np.stack(rows), block_px)


def run_fov_study(cfg: ExperimentConfig, out_dir) -> dict:
    """Full-field chart through a block-wise shift-varying model, reconstructed with one kernel.

    Per layout: ghost energy at one MLA period, PSNR against the chart and the
    cosine similarity of off-axis kernels along x.
    """
    p = cfg.fov
    sys = cfg.system
    out = Path(out_dir)
    pitch = _object_pitch(cfg)
    extent = p.extent_um if p.extent_um is not None else sys.obj_fov_mm * 1000.0
    sim_max = p.similarity_max_um if p.similarity_max_um is not None else extent / 2.0
    phantom = fov_phantom(extent, pitch, p.pattern)
    block_px = max(1, int(round(p.block_um / pitch)))
    period_px = int(round(fov(sys, Layout.MLA) / pitch))
    shifts = p.similarity_step_um * np.arange(int(math.floor(sim_max / p.similarity_step_um + 1e-9)) + 1)
    prov = provenance(cfg, "study fov")
    write_container(out / "phantom.bin", ArrayContainer(phantom.astype(np.float32), pitch, seed=cfg.seed, provenance=prov, meta={"pattern": p.pattern}))
    metrics, profiles = {}, {}
    for kind in p.layouts:
        with _Timer(f"fov {kind}"):
            sim = make_simulator(cfg, kind)
            onaxis = sim((0.0, 0.0, 0.0))
            field = block_psf_field(sim, phantom.shape, block_px, pitch)
            y = forward_project_blockwise(phantom, field, cfg.grid.simulation_grid().sensor_shape, workers=cfg.workers)
            meas = add_gaussian_noise(Measurement(np.maximum(y, 0.0), sys.pixel_um), p.noise_level, cfg.seed)
            op = ConvOperator(onaxis, phantom.shape, meas.image.shape, workers=cfg.workers)
            x, status = richardson_lucy_operator(meas.image, op, p.rl_iters)
            recon = x[0]
            off = [onaxis if s == 0 else sim((float(s), 0.0, 0.0)) for s in shifts]
            prof = cosine_similarity_profile(onaxis, off, shifts, upsample_factor=p.upsample_factor)
        write_container(out / f"{kind}_measurement.bin", ArrayContainer(meas.image.astype(np.float32), sys.pixel_um, seed=cfg.seed, provenance=prov, meta={"layout": kind}))
        write_container(out / f"{kind}_recon.bin", ArrayContainer(recon[None].astype(np.float32), pitch, z_positions_um=[0.0], seed=cfg.seed, provenance=prov, meta={"layout": kind, "status": status}))
        ghost = ghost_energy(recon, phantom, period_px, p.guard_px)
        metrics[kind] = {
            "ghost_energy_fraction": ghost.excess_fraction,
            "ghost_raw_fraction": ghost.raw_fraction,
            "psnr_db": psnr(recon, phantom),
            "min_similarity": float(np.min(prof.cosine_similarity)),
            "status": status,
        }
        profiles[kind] = prof
    results = jsonable({
        "study": "fov",
        "provenance": prov,
        "extent_um": extent,
        "object_pitch_um": pitch,
        "block_px": block_px,
        "ghost_period_px": period_px,
        "metrics": metrics,
        "similarity": {k: v.to_dict() for k, v in profiles.items()},
    })
    write_json_atomic(out / "results.json", results)
    _csv(out / "similarity.csv", ["shift_um"] + list(profiles), [[float(s)] + [float(v.cosine_similarity[i]) for v in profiles.values()] for i, s in enumerate(shifts)])
    _csv(out / "metrics.csv", ["layout", "ghost_energy_fraction", "ghost_raw_fraction", "psnr_db", "min_similarity"], [[k, m["ghost_energy_fraction"], m["ghost_raw_fraction"], m["psnr_db"], m["min_similarity"]] for k, m in metrics.items()])
    return results


# -- depth range ----------------------------------------------------------------------


def run_depthrange_study(cfg: ExperimentConfig, out_dir) -> dict:
    """Spiral of spheres imaged through every occupied fine plane, reconstructed on a coarse stack.

    Reports resolved-sphere counts per layout and, for uni-focal layouts,
    whether the resolved spheres stay within twice the single-lenslet depth of
    field of the native focal plane.
    """
    p = cfg.depthrange
    sys = cfg.system
    out = Path(out_dir)
    pitch = _object_pitch(cfg)
    shape = None if p.lateral_px is None else (p.lateral_px, p.lateral_px)
    ph = spiral_phantom(
        p.n_spheres, p.sphere_diameter_um, p.z_first_um, p.z_step_um, p.spacing_start_um, p.spacing_end_um,
        p.lateral_extent_um, pitch, p.forward_z_pitch_um, p.z_half_range_um, shape,
    )
    vol = ph.volume.intensities
    occupied = np.nonzero(vol.any(axis=(1, 2)))[0]
    z_fwd = ph.volume.z_positions_um[occupied]
    kz = int(round(p.z_half_range_um / p.recon_z_step_um))
    z_rec = p.recon_z_step_um * np.arange(-kz, kz + 1)
    lateral = vol.shape[1:]
    sensor = cfg.grid.simulation_grid().sensor_shape
    dof = dof_microlens(sys)
    prov = provenance(cfg, "study depthrange")
    write_container(out / "phantom.bin", ArrayContainer(vol.astype(np.float32), pitch, z_positions_um=ph.volume.z_positions_um.tolist(), seed=cfg.seed, provenance=prov, meta={"centers_um": ph.centers_um.tolist()}))
    layouts = {}
    for kind in p.layouts:
        with _Timer(f"depthrange {kind}"):
            sim = make_simulator(cfg, kind)
            fwd = sim.stack(z_fwd)
            op = ConvOperator(fwd.kernels, lateral, sensor, workers=cfg.workers)
            y = np.maximum(op.forward(vol[occupied]), 0.0)
            del op, fwd
            meas = add_gaussian_noise(Measurement(y, sys.pixel_um), p.noise_level, cfg.seed)
            rec_psfs = sim.stack(z_rec)
            result = admm_tv(meas, rec_psfs, cfg.solver, object_shape=lateral, workers=cfg.workers)
            count = count_resolved_spheres(result.volume, ph, p.threshold_rel, p.neighbor_radius_um)
        resolved_z = ph.centers_um[count.resolved, 2]
        entry = {
            "resolved_count": count.count,
            "resolved_z_um": resolved_z,
            "solver_status": result.status,
            "iterations": result.iterations,
            "final_objective": result.telemetry[-1]["objective"] if result.telemetry else None,
            "spheres": count.to_dict(),
        }
        if Layout(kind) is not Layout.RMM:
            entry["within_uni_focal_band"] = bool(np.all(np.abs(resolved_z) <= 2.0 * dof))
        layouts[kind] = entry
        write_container(out / f"{kind}_measurement.bin", ArrayContainer(meas.image.astype(np.float32), sys.pixel_um, seed=cfg.seed, provenance=prov, meta={"layout": kind}))
        write_container(out / f"{kind}_recon.bin", ArrayContainer(result.volume.intensities.astype(np.float32), pitch, z_positions_um=z_rec.tolist(), seed=cfg.seed, provenance=prov, meta={"layout": kind, "status": result.status}))
    results = jsonable({
        "study": "depthrange",
        "provenance": prov,
        "dof_um": dof,
        "uni_focal_band_um": 2.0 * dof,
        "n_spheres": len(ph.centers_um),
        "sphere_centers_um": ph.centers_um,
        "forward_planes": len(z_fwd),
        "recon_z_um": z_rec,
        "layouts": layouts,
    })
    write_json_atomic(out / "results.json", results)
    rows = []
    for i, c in enumerate(ph.centers_um):
        rows.append([i, float(c[0]), float(c[1]), float(c[2])] + [int(layouts[k]["spheres"]["resolved"][i]) for k in layouts])
    _csv(out / "spheres.csv", ["index", "x_um", "y_um", "z_um"] + [f"{k}_resolved" for k in layouts], rows)
    return results


_RUNNERS = {
    "resolution": run_resolution_study,
    "fov": run_fov_study,
    "depthrange": run_depthrange_study,
}


def run_study(cfg: ExperimentConfig, name: str, out_dir) -> dict:
    if name not in _RUNNERS:
        raise ValueError(f"unknown study {name!r}; expected one of {sorted(_RUNNERS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[name](cfg, out)
