"""Command-line front end.

Subcommands ``design``, ``surface``, ``psfs``, ``forward``, ``reconstruct`` and
``study`` share the ``--config``, ``--out``, ``--seed`` and ``--threads`` flags.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import STUDIES, ConfigError, ExperimentConfig, load_config
from .container import (
    ArrayContainer,
    ContainerError,
    read_container,
    sha256_file,
    write_container,
    write_json_atomic,
    write_text_atomic,
)
from .design import design_report, magnification
from .forward import Measurement, Volume, add_gaussian_noise, forward_project
from .recon import admm_tv, richardson_lucy
from .studies import jsonable, make_simulator, make_surface, provenance, run_study
from .surface import DiffuserSurface
from .wavesim import PSFStack

__all__ = ["main", "build_parser"]

log = logging.getLogger("diffuserscope")


class UsageError(Exception):
    """Bad command-line arguments or configuration (exit code 2)."""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--threads", type=int, help="FFT worker threads, 0 = auto")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="diffuserscope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="print the design report")
    sub.add_parser("surface", parents=[common], help="generate the mask height map")
    p = sub.add_parser("psfs", parents=[common], help="simulate a PSF stack")
    p.add_argument("--surface", type=Path, help="surface container; generated from the config when omitted")
    p = sub.add_parser("forward", parents=[common], help="image a volume")
    p.add_argument("--volume", type=Path, required=True)
    p.add_argument("--psfs", type=Path, required=True)
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a volume from a measurement")
    p.add_argument("--measurement", type=Path, required=True)
    p.add_argument("--psfs", type=Path, required=True)
    p = sub.add_parser("study", parents=[common], help="run a study pipeline")
    p.add_argument("name", nargs="?", choices=STUDIES, help="study to run (default: config 'study')")
    return parser


def _resolve_config(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 0:
            raise ConfigError("--threads must be non-negative")
        cfg = dataclasses.replace(cfg, threads=args.threads)
    out = Path(args.out) if args.out is not None else Path(cfg.output_dir)
    return cfg, out


def _input(path: Path) -> ArrayContainer:
    if not path.exists():
        raise ContainerError(path, "<file>", "does not exist")
    return read_container(path)


# -- commands -------------------------------------------------------------------------


def cmd_design(cfg: ExperimentConfig, out: Path, args) -> dict:
    report = design_report(cfg.system).to_dict()
    doc = {"system": cfg.system.to_dict(), "report": report, "provenance": provenance(cfg, "design")}
    write_json_atomic(out / "design.json", doc)
    print(json.dumps(report, sort_keys=True, indent=2))
    return doc


def cmd_surface(cfg: ExperimentConfig, out: Path, args) -> Path:
    surf = make_surface(cfg, cfg.layout_kind)
    c = ArrayContainer(
        surf.height_map.astype(np.float32),
        surf.grid_pitch_um,
        seed=cfg.seed,
        provenance=provenance(cfg, "surface"),
        meta={"surface": surf.sidecar()},
    )
    return write_container(out / "surface.bin", c)


def cmd_psfs(cfg: ExperimentConfig, out: Path, args) -> Path:
    inputs = {}
    surf = None
    if args.surface is not None:
        sc = _input(args.surface)
        if "surface" not in sc.meta:
            raise ContainerError(args.surface, "meta", "missing 'surface' sidecar")
        surf = DiffuserSurface.from_sidecar(sc.data.astype(np.float64), sc.meta["surface"])
        inputs["surface"] = sha256_file(args.surface)
    layout = surf.layout_kind if surf is not None else cfg.layout_kind
    sim = make_simulator(cfg, layout, surf)
    stack = sim.stack(cfg.psfs.z_list(), tuple(cfg.psfs.lateral_offset_um))
    c = ArrayContainer(
        stack.kernels.astype(np.float32),
        stack.sensor_pitch_um,
        z_positions_um=stack.z_positions_um.tolist(),
        seed=cfg.seed,
        provenance=provenance(cfg, "psfs", inputs),
        meta={"layout": layout.value, "object_pitch_um": stack.object_pitch_um, **stack.meta},
    )
    return write_container(out / "psfs.bin", c)


def _psf_stack(path: Path) -> PSFStack:
    c = _input(path)
    if c.data.ndim != 3 or c.z_positions_um is None:
        raise ContainerError(path, "shape", "a PSF stack needs (nz, ny, nx) data with z_positions_um")
    return PSFStack(
        c.data.astype(np.float64),
        np.asarray(c.z_positions_um),
        c.pitch_um,
        dict(c.meta),
        c.meta.get("object_pitch_um"),
    )


def cmd_forward(cfg: ExperimentConfig, out: Path, args) -> Path:
    psfs = _psf_stack(args.psfs)
    vc = _input(args.volume)
    if vc.z_positions_um is None:
        raise ContainerError(args.volume, "z_positions_um", "a volume needs one depth per slice")
    vol = Volume(vc.data.astype(np.float64), vc.pitch_um, vc.z_positions_um)
    meas = forward_project(vol, psfs, workers=cfg.workers)
    if cfg.forward.noise_level > 0:
        meas = add_gaussian_noise(meas, cfg.forward.noise_level, cfg.seed)
    inputs = {"volume": sha256_file(args.volume), "psfs": sha256_file(args.psfs)}
    c = ArrayContainer(
        meas.image.astype(np.float32),
        meas.sensor_pitch_um,
        seed=cfg.seed,
        provenance=provenance(cfg, "forward", inputs),
        meta={"noise_level": cfg.forward.noise_level},
    )
    return write_container(out / "measurement.bin", c)


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, args) -> Path:
    psfs = _psf_stack(args.psfs)
    mc = _input(args.measurement)
    if mc.data.ndim != 2:
        raise ContainerError(args.measurement, "shape", "a measurement must be 2D")
    meas = Measurement(mc.data.astype(np.float64), mc.pitch_um)
    shape = tuple(cfg.reconstruct.object_px) if cfg.reconstruct.object_px else meas.image.shape
    if cfg.reconstruct.method == "rl":
        result = richardson_lucy(meas, psfs, cfg.reconstruct.rl_iters, object_shape=shape, workers=cfg.workers)
    else:
        result = admm_tv(meas, psfs, cfg.solver, object_shape=shape, workers=cfg.workers)
    inputs = {"measurement": sha256_file(args.measurement), "psfs": sha256_file(args.psfs)}
    lines = "".join(json.dumps(jsonable(t), sort_keys=True) + "\n" for t in result.telemetry)
    write_text_atomic(out / "telemetry.jsonl", lines)
    pitch = psfs.object_pitch_um or cfg.system.pixel_um / magnification(cfg.system)
    c = ArrayContainer(
        result.volume.intensities.astype(np.float32),
        pitch,
        z_positions_um=result.volume.z_positions_um.tolist(),
        seed=cfg.seed,
        provenance=provenance(cfg, "reconstruct", inputs),
        meta={"method": cfg.reconstruct.method, "status": result.status, "iterations": result.iterations},
    )
    return write_container(out / "volume.bin", c)


def cmd_study(cfg: ExperimentConfig, out: Path, args) -> dict:
    name = args.name or cfg.study
    if name is None:
        raise UsageError("no study given on the command line or in the config")
    results = run_study(cfg, name, out / name)
    print(out / name / "results.json")
    return results


_COMMANDS = {
    "design": cmd_design,
    "surface": cmd_surface,
    "psfs": cmd_psfs,
    "forward": cmd_forward,
    "reconstruct": cmd_reconstruct,
    "study": cmd_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg, out = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out, args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ContainerError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
