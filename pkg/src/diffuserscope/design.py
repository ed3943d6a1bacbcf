"""Closed-form performance and phase-mask design rules for a Fourier light field
microscope with a pupil-plane lenslet mask.

Unit conventions
----------------
Wavelengths, pixels, resolutions, depths and fields of view are in micrometres.
Focal lengths, pitches and pupil diameters are in millimetres. Conversions happen
explicitly inside each function.

Depth sign convention: ``z > 0`` means the point has moved towards the objective.
Such a point produces a diverging wavefront at the mask, so it is brought to focus
on the sensor by a lenslet shorter than ``f_ave``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Layout",
    "OpticalSystem",
    "DesignReport",
    "effective_na",
    "lateral_resolution",
    "magnification",
    "circle_of_confusion",
    "axial_resolution",
    "offfocus_axial_resolution",
    "fov",
    "dof_microlens",
    "depth_range_upper_bound",
    "focal_length_schedule",
    "focus_depth",
    "defocus_power_coefficient",
    "design_report",
    "reference_system",
    "desk_system",
]

UM_PER_MM = 1000.0


class Layout(str, enum.Enum):
    """Pupil mask layouts."""

    MLA = "MLA"  # regular grid, one focal length
    RUM = "RUM"  # random centres, one focal length
    RMM = "RMM"  # random centres, dioptrically spread focal lengths

    @property
    def multifocal(self) -> bool:
        return self is Layout.RMM

    @property
    def random(self) -> bool:
        return self is not Layout.MLA


@dataclass(frozen=True)
class OpticalSystem:
    """Scalar optical parameters of the microscope.

    Attributes
    ----------
    wavelength_um : float
        Emission wavelength.
    medium_index : float
        Refractive index of the immersion/sample medium.
    obj_focal_mm, obj_na, obj_fov_mm, pupil_diameter_mm : float
        Objective focal length, numerical aperture, field of view and pupil diameter.
    tube_focal_mm, relay_focal_mm : float
        Tube lens and pupil relay lens focal lengths.
    pixel_um : float
        Sensor pixel pitch.
    n_lenslets_1d : int
        Number of lenslets across the relayed pupil diameter.
    pitch_mm : float
        Average lenslet pitch.
    f_ave_mm : float
        Average lenslet focal length, equal to the mask-to-sensor distance.
    f_min_mm, f_max_mm : float, optional
        Extremes of the lenslet focal lengths. ``None`` means uni-focal (``f_ave``).
    mask_index : float
        Refractive index of the mask material.
    """

    wavelength_um: float
    medium_index: float
    obj_focal_mm: float
    obj_na: float
    obj_fov_mm: float
    pupil_diameter_mm: float
    tube_focal_mm: float
    relay_focal_mm: float
    pixel_um: float
    n_lenslets_1d: int
    pitch_mm: float
    f_ave_mm: float
    f_min_mm: float | None = None
    f_max_mm: float | None = None
    mask_index: float = 1.56

    def __post_init__(self):
        if self.f_min_mm is None:
            object.__setattr__(self, "f_min_mm", self.f_ave_mm)
        if self.f_max_mm is None:
            object.__setattr__(self, "f_max_mm", self.f_ave_mm)
        lengths = {
            "wavelength_um": self.wavelength_um,
            "obj_focal_mm": self.obj_focal_mm,
            "obj_fov_mm": self.obj_fov_mm,
            "pupil_diameter_mm": self.pupil_diameter_mm,
            "tube_focal_mm": self.tube_focal_mm,
            "relay_focal_mm": self.relay_focal_mm,
            "pixel_um": self.pixel_um,
            "pitch_mm": self.pitch_mm,
            "f_ave_mm": self.f_ave_mm,
            "f_min_mm": self.f_min_mm,
            "f_max_mm": self.f_max_mm,
        }
        for name, value in lengths.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite length, got {value!r}")
        if not (self.medium_index >= 1.0):
            raise ValueError(f"medium_index must be >= 1, got {self.medium_index!r}")
        if not (self.mask_index > 1.0):
            raise ValueError(f"mask_index must be > 1, got {self.mask_index!r}")
        if not (0 < self.obj_na <= self.medium_index):
            raise ValueError(
                f"obj_na must satisfy 0 < NA <= medium_index, got {self.obj_na!r}"
            )
        if int(self.n_lenslets_1d) != self.n_lenslets_1d or self.n_lenslets_1d < 1:
            raise ValueError(f"n_lenslets_1d must be a positive integer, got {self.n_lenslets_1d!r}")
        relayed = self.relayed_pupil_mm
        if abs(self.n_lenslets_1d * self.pitch_mm - relayed) > 1e-9 * relayed:
            raise ValueError(
                "n_lenslets_1d * pitch_mm must equal the relayed pupil diameter "
                f"{relayed:.12g} mm, got {self.n_lenslets_1d * self.pitch_mm:.12g} mm"
            )
        if not (self.f_min_mm <= self.f_ave_mm <= self.f_max_mm):
            raise ValueError("focal lengths must satisfy f_min <= f_ave <= f_max")

    @property
    def relayed_pupil_mm(self) -> float:
        """Pupil diameter after the tube/relay pair."""
        return (self.relay_focal_mm / self.tube_focal_mm) * 2.0 * self.obj_na * self.obj_focal_mm

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OpticalSystem":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown OpticalSystem keys: {unknown}")
        return cls(**data)

    def replace(self, **changes) -> "OpticalSystem":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DesignReport:
    """Derived performance figures of an :class:`OpticalSystem`."""

    na_eff: float
    magnification: float
    r_lateral_um: float
    r_axial_um: float
    dof_microlens_um: float
    fov_mla_um: float
    fov_random_um: float
    depth_range_upper_bound_um: float
    depth_range_design_um: float
    nyquist_pixel_um: float

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{f.name} must be positive, got {value!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DesignReport":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown DesignReport keys: {unknown}")
        return cls(**data)


def effective_na(sys: OpticalSystem) -> float:
    """Numerical aperture seen by a single lenslet, ``NA / N``."""
    return sys.obj_na / sys.n_lenslets_1d


def lateral_resolution(sys: OpticalSystem) -> float:
    """Rayleigh lateral resolution of one lenslet view in object space (um)."""
    return 1.22 * sys.wavelength_um * sys.n_lenslets_1d / (2.0 * sys.obj_na)


def magnification(sys: OpticalSystem) -> float:
    """Lateral magnification from object space to the sensor."""
    return (sys.tube_focal_mm / sys.obj_focal_mm) * (sys.f_ave_mm / sys.relay_focal_mm)


def defocus_power_coefficient(sys: OpticalSystem) -> float:
    """Return ``c = f_TL / (f_RL f_obj)`` in 1/mm.

    An object point displaced by ``z`` (mm) produces a wavefront of vergence
    ``c**2 * z`` (1/mm) at the mask.
    """
    return sys.tube_focal_mm / (sys.relay_focal_mm * sys.obj_focal_mm)


def circle_of_confusion(sys: OpticalSystem, defocus_um: float | np.ndarray) -> float | np.ndarray:
    """Geometric blur radius on the sensor of a point defocused by ``defocus_um``.

    Returns the sensor-plane radius in micrometres for a lenslet of pitch ``p``
    and focal length ``f_ave``. Divide by :func:`magnification` for the
    object-space radius, which equals ``NA_eff * |dz|``.
    """
    c = defocus_power_coefficient(sys)
    return 0.5 * sys.pitch_mm * sys.f_ave_mm * c**2 * np.abs(defocus_um)


def axial_resolution(sys: OpticalSystem) -> float:
    """In-focus axial resolution from the parallax between lenslet views (um)."""
    n = sys.n_lenslets_1d
    if n < 2:
        raise ValueError("axial resolution is undefined for a single lenslet (no parallax)")
    return (n**2 / (n - 1)) * 1.22 * sys.wavelength_um / (2.0 * sys.obj_na**2)


def offfocus_axial_resolution(sys: OpticalSystem, defocus_um: float) -> float:
    """Axial resolution at a defocused plane (um).

    The lateral term of the in-focus rule is replaced by the object-space
    circle-of-confusion radius.
    """
    n = sys.n_lenslets_1d
    if n < 2:
        raise ValueError("axial resolution is undefined for a single lenslet (no parallax)")
    lateral = circle_of_confusion(sys, defocus_um) / magnification(sys)
    return (n / (n - 1)) * lateral / sys.obj_na


def fov(sys: OpticalSystem, layout: Layout | str) -> float:
    """Object-space field of view (um) for a mask layout."""
    layout = Layout(layout)
    if layout is Layout.MLA:
        return sys.pitch_mm * UM_PER_MM / magnification(sys)
    return sys.obj_fov_mm * UM_PER_MM


def dof_microlens(sys: OpticalSystem) -> float:
    """Depth of field of one lenslet view: wave term plus pixel term (um)."""
    na_eff = effective_na(sys)
    wave = sys.wavelength_um * sys.medium_index / na_eff**2
    geometric = sys.medium_index * sys.pixel_um / (magnification(sys) * na_eff)
    return wave + geometric


def depth_range_upper_bound(sys: OpticalSystem) -> float:
    """Upper bound on the multi-focal depth range, ``N**2 * DOF`` (um)."""
    return sys.n_lenslets_1d**2 * dof_microlens(sys)


def focal_length_schedule(sys: OpticalSystem, z_half_range_um: float, count: int) -> np.ndarray:
    """Dioptrically spaced lenslet focal lengths covering ``[-z, +z]``.

    Parameters
    ----------
    sys : OpticalSystem
    z_half_range_um : float
        Half of the axial range to cover.
    count : int
        Number of focal lengths, at least 2.

    Returns
    -------
    numpy.ndarray
        Focal lengths in mm, ordered from ``f_min`` (focuses ``+z``) to
        ``f_max`` (focuses ``-z``). Reciprocals form an arithmetic sequence.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not z_half_range_um > 0:
        raise ValueError(f"z_half_range_um must be positive, got {z_half_range_um}")
    c2 = defocus_power_coefficient(sys) ** 2
    dz_mm = z_half_range_um / UM_PER_MM
    inv_ave = 1.0 / sys.f_ave_mm
    inv_min = inv_ave + c2 * dz_mm
    inv_max = inv_ave - c2 * dz_mm
    if inv_max <= 0:
        raise ValueError(
            f"depth range +/-{z_half_range_um} um requires a non-positive focal length; "
            "reduce the range or f_ave"
        )
    inv = np.linspace(inv_min, inv_max, count)
    return 1.0 / inv


def focus_depth(sys: OpticalSystem, focal_mm: float | np.ndarray) -> float | np.ndarray:
    """Object depth (um) brought to focus on the sensor by a lenslet of ``focal_mm``."""
    c2 = defocus_power_coefficient(sys) ** 2
    return (1.0 / np.asarray(focal_mm, dtype=float) - 1.0 / sys.f_ave_mm) / c2 * UM_PER_MM


def design_report(sys: OpticalSystem) -> DesignReport:
    """Collect all closed-form performance figures."""
    m = magnification(sys)
    r_lat = lateral_resolution(sys)
    upper = depth_range_upper_bound(sys)
    return DesignReport(
        na_eff=effective_na(sys),
        magnification=m,
        r_lateral_um=r_lat,
        r_axial_um=axial_resolution(sys),
        dof_microlens_um=dof_microlens(sys),
        fov_mla_um=fov(sys, Layout.MLA),
        fov_random_um=fov(sys, Layout.RMM),
        depth_range_upper_bound_um=upper,
        depth_range_design_um=0.5 * upper,
        nyquist_pixel_um=m * r_lat / 2.0,
    )


def _with_schedule(sys: OpticalSystem, z_half_range_um: float) -> OpticalSystem:
    f = focal_length_schedule(sys, z_half_range_um, 2)
    return sys.replace(f_min_mm=float(f[0]), f_max_mm=float(f[-1]))


def reference_system(z_half_range_um: float = 100.0) -> OpticalSystem:
    """Full-size reference microscope: 1.0 NA, 9 mm objective, 5 lenslets across."""
    base = OpticalSystem(
        wavelength_um=0.51,
        medium_index=1.33,
        obj_focal_mm=9.0,
        obj_na=1.0,
        obj_fov_mm=1.1,
        pupil_diameter_mm=18.0,
        tube_focal_mm=180.0,
        relay_focal_mm=180.0,
        pixel_um=2.0,
        n_lenslets_1d=5,
        pitch_mm=3.6,
        f_ave_mm=58.5,
        mask_index=1.56,
    )
    return _with_schedule(base, z_half_range_um)


def desk_system(z_half_range_um: float = 100.0) -> OpticalSystem:
    """Reduced microscope that fits a 512 x 512 sensor of 4 um pixels.

    The relay demagnifies the pupil to 2 mm so the whole mask is simulated on a
    few-thousand-sample grid. Object-space figures (NA_eff, M, resolutions) match
    :func:`reference_system`.
    """
    base = OpticalSystem(
        wavelength_um=0.51,
        medium_index=1.33,
        obj_focal_mm=9.0,
        obj_na=1.0,
        obj_fov_mm=0.12,
        pupil_diameter_mm=18.0,
        tube_focal_mm=180.0,
        relay_focal_mm=20.0,
        pixel_um=4.0,
        n_lenslets_1d=5,
        pitch_mm=0.4,
        f_ave_mm=6.5,
        mask_index=1.56,
    )
    return _with_schedule(base, z_half_range_um)
