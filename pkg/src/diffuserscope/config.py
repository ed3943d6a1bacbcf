"""Strict JSON experiment configuration.

Every nested section is a dataclass; unknown keys anywhere raise
:class:`ConfigError` naming the offending key path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import Layout, OpticalSystem, desk_system, reference_system
from .recon import SolverConfig, TVWeights
from .wavesim import SimulationGrid

__all__ = [
    "ConfigError",
    "GridConfig",
    "PSFConfig",
    "ForwardConfig",
    "ReconstructConfig",
    "ResolutionStudyConfig",
    "FOVStudyConfig",
    "DepthRangeStudyConfig",
    "ExperimentConfig",
    "load_config",
]

STUDIES = ("resolution", "fov", "depthrange")
_PRESETS = {"reference": reference_system, "desk": desk_system}


class ConfigError(ValueError):
    """Invalid configuration document."""


@dataclass
class GridConfig:
    """Wave-simulation sampling.

    ``n`` samples per side of the propagation window, ``oversample`` samples per
    sensor pixel (odd) and ``sensor_shape`` pixels read out.
    """

    n: int = 2304
    oversample: int = 3
    sensor_shape: list[int] = field(default_factory=lambda: [512, 512])
    precision: str = "complex64"

    def __post_init__(self):
        if self.precision not in ("complex64", "complex128"):
            raise ConfigError(f"grid.precision must be complex64 or complex128, got {self.precision!r}")

    def simulation_grid(self) -> SimulationGrid:
        return SimulationGrid(int(self.n), int(self.oversample), tuple(int(v) for v in self.sensor_shape))


@dataclass
class PSFConfig:
    """Depth list for the ``psfs`` command: ``z_min_um`` to ``z_max_um`` inclusive."""

    z_min_um: float = -100.0
    z_max_um: float = 100.0
    z_step_um: float = 5.0
    lateral_offset_um: list[float] = field(default_factory=lambda: [0.0, 0.0])

    def z_list(self) -> np.ndarray:
        if self.z_step_um <= 0 or self.z_max_um < self.z_min_um:
            raise ConfigError("psfs needs z_step_um > 0 and z_max_um >= z_min_um")
        n = int(round((self.z_max_um - self.z_min_um) / self.z_step_um))
        return self.z_min_um + self.z_step_um * np.arange(n + 1)


@dataclass
class ForwardConfig:
    """Gaussian noise added by the ``forward`` command, as a fraction of the peak signal."""

    noise_level: float = 0.0

    def __post_init__(self):
        if not self.noise_level >= 0:
            raise ConfigError(f"forward.noise_level must be non-negative, got {self.noise_level!r}")


@dataclass
class ReconstructConfig:
    """``object_px`` is the lateral reconstruction shape; ``None`` uses the sensor shape."""

    method: str = "admm"
    rl_iters: int = 50
    object_px: list[int] | None = None

    def __post_init__(self):
        if self.method not in ("admm", "rl"):
            raise ConfigError(f"reconstruct.method must be 'admm' or 'rl', got {self.method!r}")


@dataclass
class ResolutionStudyConfig:
    layouts: list[str] = field(default_factory=lambda: ["MLA", "RUM", "RMM"])
    z_min_um: float = -100.0
    z_max_um: float = 100.0
    z_step_um: float = 10.0
    lateral_step_um: float = 0.1
    lateral_max_um: float = 10.0
    axial_z_um: list[float] = field(default_factory=list)
    axial_step_um: float = 1.0
    axial_max_um: float = 12.0
    rl_iters: int = 8
    coarse_factor: int = 5


@dataclass
class FOVStudyConfig:
    """Full-field chart reconstructed with the on-axis kernel.

    ``extent_um`` and ``similarity_max_um`` default to the objective field of
    view and half of it.
    """

    layouts: list[str] = field(default_factory=lambda: ["MLA", "RUM", "RMM"])
    extent_um: float | None = None
    pattern: str = "chart"
    block_um: float = 20.0
    noise_level: float = 0.05
    rl_iters: int = 8
    similarity_step_um: float = 5.0
    similarity_max_um: float | None = None
    upsample_factor: int = 20
    guard_px: int = 2


@dataclass
class DepthRangeStudyConfig:
    layouts: list[str] = field(default_factory=lambda: ["MLA", "RUM", "RMM"])
    n_spheres: int = 39
    sphere_diameter_um: float = 2.0
    z_first_um: float = 95.0
    z_step_um: float = 5.0
    spacing_start_um: float = 3.0
    spacing_end_um: float = 7.0
    lateral_extent_um: float = 48.0
    lateral_px: int | None = None
    forward_z_pitch_um: float = 0.5
    recon_z_step_um: float = 5.0
    z_half_range_um: float = 100.0
    noise_level: float = 0.05
    threshold_rel: float = 0.1
    neighbor_radius_um: float = 10.0


_SECTIONS = {
    "grid": GridConfig,
    "psfs": PSFConfig,
    "forward": ForwardConfig,
    "reconstruct": ReconstructConfig,
    "resolution": ResolutionStudyConfig,
    "fov": FOVStudyConfig,
    "depthrange": DepthRangeStudyConfig,
}


def _strict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _system_from(value) -> OpticalSystem:
    if isinstance(value, str):
        if value not in _PRESETS:
            raise ConfigError(f"system preset must be one of {sorted(_PRESETS)}, got {value!r}")
        return _PRESETS[value]()
    if isinstance(value, dict) and "preset" in value:
        rest = {k: v for k, v in value.items() if k != "preset"}
        base = _system_from(value["preset"])
        known = {f.name for f in dataclasses.fields(OpticalSystem)}
        unknown = sorted(set(rest) - known)
        if unknown:
            raise ConfigError(f"unknown key(s) in system: {', '.join(unknown)}")
        try:
            return base.replace(**rest)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system: {exc}") from exc
    return _strict(OpticalSystem, value, "system")


@dataclass
class ExperimentConfig:
    """Everything a command needs, loaded from one JSON document.

    ``system`` accepts a preset name (``"desk"``, ``"reference"``), a preset with
    overrides (``{"preset": "desk", "pixel_um": 2.0}``) or a full field set.
    """

    system: OpticalSystem = field(default_factory=desk_system)
    layout_kind: Layout = Layout.RMM
    seed: int = 0
    threads: int = 0
    output_dir: str = "out"
    study: str | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    psfs: PSFConfig = field(default_factory=PSFConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    resolution: ResolutionStudyConfig = field(default_factory=ResolutionStudyConfig)
    fov: FOVStudyConfig = field(default_factory=FOVStudyConfig)
    depthrange: DepthRangeStudyConfig = field(default_factory=DepthRangeStudyConfig)

    def __post_init__(self):
        try:
            self.layout_kind = Layout(self.layout_kind)
        except ValueError as exc:
            raise ConfigError(f"layout_kind: {exc}") from exc
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if int(self.threads) != self.threads or self.threads < 0:
            raise ConfigError(f"threads must be a non-negative integer, got {self.threads!r}")
        if self.study is not None and self.study not in STUDIES:
            raise ConfigError(f"study must be one of {list(STUDIES)}, got {self.study!r}")
        for section in (self.resolution, self.fov, self.depthrange):
            for kind in section.layouts:
                try:
                    Layout(kind)
                except ValueError as exc:
                    raise ConfigError(f"layouts: {exc}") from exc

    @property
    def workers(self) -> int | None:
        """FFT worker count; ``None`` lets scipy decide when ``threads`` is 0."""
        return None if self.threads == 0 else int(self.threads)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        kw = dict(data)
        if "system" in kw:
            kw["system"] = _system_from(kw["system"])
        for name, section in _SECTIONS.items():
            if name in kw:
                kw[name] = _strict(section, kw[name], name)
        if "solver" in kw:
            solver = dict(kw["solver"]) if isinstance(kw["solver"], dict) else kw["solver"]
            if isinstance(solver, dict) and "tv_weights" in solver:
                solver["tv_weights"] = _strict(TVWeights, solver["tv_weights"], "solver.tv_weights")
            kw["solver"] = _strict(SolverConfig, solver, "solver")
        try:
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Layout):
                value = value.value
            elif dataclasses.is_dataclass(value):
                value = value.to_dict() if hasattr(value, "to_dict") else dataclasses.asdict(value)
            out[f.name] = value
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical JSON form.

        ``threads`` and ``output_dir`` are left out: they do not change results.
        """
        d = self.to_dict()
        d.pop("threads")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)
