"""Scalar wave-optics PSF simulation: point source -> objective -> ideal relay ->
pupil mask -> free-space propagation -> sensor.

The objective and the tube/relay pair are modelled as ideal optics that map a
point source at ``(x0, y0, z)`` to a field on the mask plane:

* a circular pupil of radius ``N p / 2``;
* a linear phase ``k c (x0 x' + y0 y')`` that shifts the sensor image by
  ``M (x0, y0)``;
* an exact spherical wavefront of vergence ``c**2 z`` (``z > 0`` diverges).

Here ``c = f_TL / (f_RL f_obj)``. Free-space propagation from the mask to the
sensor uses the band-limited angular spectrum method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .design import OpticalSystem, defocus_power_coefficient, magnification
from .surface import DiffuserSurface, phase_screen

__all__ = [
    "SamplingError",
    "FieldGrid",
    "PSFStack",
    "SimulationGrid",
    "angular_spectrum_propagate",
    "band_limit",
    "pupil_field",
    "PSFSimulator",
    "simulate_psf",
    "simulate_psf_stack",
    "bin_sum",
    "expected_shift_px",
]

MAX_ALIAS_FRACTION = 1e-2


class SamplingError(ValueError):
    """The simulation grid cannot represent the requested field without aliasing."""


@dataclass
class FieldGrid:
    """Complex scalar field on a square-sampled grid centred on the optical axis."""

    complex_amplitude: np.ndarray
    sample_pitch_um: float
    wavelength_um: float

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.complex_amplitude) ** 2) * self.sample_pitch_um**2)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.complex_amplitude) ** 2


@dataclass
class PSFStack:
    """Depth-ordered intensity kernels on the sensor grid.

    Attributes
    ----------
    kernels : numpy.ndarray
        Shape ``(nz, ny, nx)``, non-negative.
    z_positions_um : numpy.ndarray
        Strictly increasing depths.
    sensor_pitch_um : float
    """

    kernels: np.ndarray
    z_positions_um: np.ndarray
    sensor_pitch_um: float
    meta: dict = field(default_factory=dict)
    object_pitch_um: float | None = None

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels)
        if self.kernels.ndim == 2:
            self.kernels = self.kernels[None]
        self.z_positions_um = np.atleast_1d(np.asarray(self.z_positions_um, dtype=float))
        if self.kernels.ndim != 3:
            raise ValueError("kernels must be a (nz, ny, nx) array")
        if len(self.z_positions_um) != self.kernels.shape[0]:
            raise ValueError("one depth per kernel is required")
        if np.any(np.diff(self.z_positions_um) <= 0):
            raise ValueError("z_positions_um must be strictly increasing")
        if np.any(self.kernels < 0):
            raise ValueError("kernels must be non-negative")

    def __len__(self) -> int:
        return self.kernels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernels.shape[1:]

    def subset(self, indices) -> "PSFStack":
        idx = np.asarray(indices)
        return PSFStack(
            self.kernels[idx], self.z_positions_um[idx], self.sensor_pitch_um, dict(self.meta), self.object_pitch_um
        )


def band_limit(n: int, pitch_um: float, wavelength_um: float, distance_um: float) -> float:
    """Highest spatial frequency (1/um) whose transfer-function chirp is sampled.

    The angular-spectrum transfer function over ``distance`` is free of
    aliasing for ``|f| <= 1 / (lambda sqrt((2 d / L)**2 + 1))`` on a window of
    width ``L``.
    """
    length = n * pitch_um
    return 1.0 / (wavelength_um * math.sqrt((2.0 * abs(distance_um) / length) ** 2 + 1.0))


def _frequencies(shape, pitch_um):
    fy = sfft.fftfreq(shape[0], d=pitch_um)
    fx = sfft.fftfreq(shape[1], d=pitch_um)
    return fy[:, None], fx[None, :]


def transfer_function(shape, pitch_um, wavelength_um, distance_um, dtype=np.complex128) -> np.ndarray:
    """Band-limited angular-spectrum transfer function (unshifted FFT layout)."""
    fy, fx = _frequencies(shape, pitch_um)
    f2 = fx**2 + fy**2
    arg = 1.0 / wavelength_um**2 - f2
    prop = arg > 0
    flim = band_limit(max(shape), pitch_um, wavelength_um, distance_um)
    keep = prop & (np.abs(fx) <= flim) & (np.abs(fy) <= flim)
    phase = 2.0 * np.pi * distance_um * np.sqrt(np.where(prop, arg, 0.0))
    h = np.where(keep, np.exp(1j * phase), 0.0)
    return h.astype(dtype, copy=False)


def _check_bandwidth(spectrum, shape, pitch_um, wavelength_um, distance_um, max_alias_fraction):
    flim = band_limit(max(shape), pitch_um, wavelength_um, distance_um)
    nyq = 0.5 / pitch_um
    if flim >= nyq:
        return
    fy, fx = _frequencies(shape, pitch_um)
    outside = (np.abs(fx) > flim) | (np.abs(fy) > flim)
    p = np.abs(spectrum) ** 2
    frac = float(np.sum(p * outside) / max(np.sum(p), np.finfo(float).tiny))
    if frac > max_alias_fraction:
        raise SamplingError(
            f"propagating {distance_um:.4g} um on a {shape[1]}x{shape[0]} grid of pitch "
            f"{pitch_um:.4g} um keeps frequencies below {flim:.4g}/um but "
            f"{frac:.3g} of the field power lies above; enlarge the grid"
        )


def angular_spectrum_propagate(
    field: FieldGrid,
    distance_mm: float,
    *,
    max_alias_fraction: float = MAX_ALIAS_FRACTION,
    workers: int | None = None,
) -> FieldGrid:
    """Free-space scalar propagation by the angular spectrum method.

    Evanescent components are removed. Frequencies above the transfer-function
    sampling limit are also removed; if they carry more than
    ``max_alias_fraction`` of the power a :class:`SamplingError` is raised.
    """
    u = field.complex_amplitude
    d_um = distance_mm * 1000.0
    if d_um == 0:
        return FieldGrid(u.copy(), field.sample_pitch_um, field.wavelength_um)
    spectrum = sfft.fft2(u, workers=workers)
    _check_bandwidth(spectrum, u.shape, field.sample_pitch_um, field.wavelength_um, d_um, max_alias_fraction)
    h = transfer_function(u.shape, field.sample_pitch_um, field.wavelength_um, d_um, dtype=spectrum.dtype)
    out = sfft.ifft2(spectrum * h, workers=workers)
    return FieldGrid(out, field.sample_pitch_um, field.wavelength_um)


def bin_sum(image: np.ndarray, factor: int) -> np.ndarray:
    """Sum non-overlapping ``factor x factor`` blocks."""
    ny, nx = image.shape
    if ny % factor or nx % factor:
        raise ValueError("image shape must be divisible by the binning factor")
    return image.reshape(ny // factor, factor, nx // factor, factor).sum(axis=(1, 3))


@dataclass(frozen=True)
class SimulationGrid:
    """Sampling of the wave simulation.

    Attributes
    ----------
    n : int
        Samples per side of the square propagation window.
    oversample : int
        Odd number of simulation samples per sensor pixel.
    sensor_shape : tuple of int
        Sensor pixels ``(ny, nx)`` cut from the window centre.
    """

    n: int
    oversample: int
    sensor_shape: tuple[int, int]

    def __post_init__(self):
        if self.oversample < 1 or self.oversample % 2 == 0:
            raise ValueError("oversample must be a positive odd integer")
        sy, sx = self.sensor_shape
        if max(sy, sx) * self.oversample > self.n:
            raise ValueError("sensor does not fit inside the simulation window")
        object.__setattr__(self, "sensor_shape", (int(sy), int(sx)))

    def sample_pitch_um(self, sys: OpticalSystem) -> float:
        return sys.pixel_um / self.oversample

    def crop_slices(self) -> tuple[slice, slice]:
        """Window region binned onto the sensor.

        Sensor pixel ``j`` is centred at ``(j - S//2) * pixel``, matching the
        window sample convention ``(i - n//2) * pitch``.
        """
        q, c = self.oversample, self.n // 2
        out = []
        for s in self.sensor_shape:
            start = c - (s // 2) * q - q // 2
            out.append(slice(start, start + s * q))
        return tuple(out)

    def mask_shape(self, sys: OpticalSystem) -> tuple[int, int]:
        """Smallest odd square covering the pupil, for mask generation."""
        dx = self.sample_pitch_um(sys)
        m = int(math.ceil(sys.n_lenslets_1d * sys.pitch_mm * 1000.0 / dx)) + 3
        m += 1 - m % 2
        return (min(m, self.n), min(m, self.n))


def _axis_um(n, pitch):
    return (np.arange(n) - n // 2) * pitch


def pupil_field(
    sys: OpticalSystem,
    source_xyz_um,
    n: int,
    pitch_um: float,
    *,
    apodization: str = "uniform",
    dtype=np.complex128,
) -> FieldGrid:
    """Field on the mask plane produced by a point source.

    Parameters
    ----------
    sys : OpticalSystem
    source_xyz_um : sequence of float
        Source position in object space; ``z > 0`` is towards the objective.
    n, pitch_um : int, float
        Window samples per side and sample pitch on the mask plane.
    apodization : {"uniform", "sine"}
        ``"sine"`` applies the aplanatic ``cos(theta)**-1/2`` amplitude.
    """
    x0, y0, z0 = (float(v) for v in source_xyz_um)
    k = 2.0 * np.pi / sys.wavelength_um
    c = defocus_power_coefficient(sys) / 1000.0  # 1/um
    vergence = c * c * z0  # 1/um, positive diverges
    rho_max = sys.n_lenslets_1d * sys.pitch_mm * 500.0
    ax = _axis_um(n, pitch_um)
    x = ax[None, :]
    y = ax[:, None]
    rho2 = x * x + y * y
    inside = rho2 <= rho_max * rho_max
    # k (sqrt(rho^2 + R^2) - R) with R = 1/vergence, stable for vergence -> 0
    defocus = k * vergence * rho2 / (1.0 + np.sqrt(1.0 + vergence * vergence * rho2))
    tilt = k * c * (x0 * x + y0 * y)
    if apodization == "uniform":
        amp = inside.astype(float)
    elif apodization == "sine":
        s2 = rho2 * (sys.obj_na / (sys.medium_index * rho_max)) ** 2
        amp = np.where(inside, (1.0 - np.minimum(s2, 1.0 - 1e-12)) ** -0.25, 0.0)
    else:
        raise ValueError(f"unknown apodization {apodization!r}")
    u = amp * np.exp(1j * (defocus + tilt))
    return FieldGrid(u.astype(dtype, copy=False), pitch_um, sys.wavelength_um)


def _fit_centered(a: np.ndarray, m: int, fill) -> np.ndarray:
    """Centre-crop or pad ``a`` to ``m x m`` keeping sample ``(s//2, s//2)`` on axis."""
    out = np.full((m, m), fill, dtype=a.dtype)
    src, dst = [], []
    for size in a.shape:
        lo = size // 2 - m // 2
        s0, d0 = max(lo, 0), max(-lo, 0)
        length = min(size - s0, m - d0)
        src.append(slice(s0, s0 + length))
        dst.append(slice(d0, d0 + length))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _max_phase_step(u: np.ndarray, weight_floor: float = 1e-6) -> float:
    """Largest phase increment between adjacent samples where the field is non-negligible."""
    a = np.abs(u)
    live = a > weight_floor * a.max()
    worst = 0.0
    for axis in (0, 1):
        prod = u * np.conj(np.roll(u, -1, axis=axis))
        ok = live & np.roll(live, -1, axis=axis)
        if axis == 0:
            ok[-1, :] = False
        else:
            ok[:, -1] = False
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(np.angle(prod[ok])))))
    return worst


class PSFSimulator:
    """Cached PSF simulator for one system, mask and sampling.

    The mask transmission and the propagation transfer function are built once;
    each call then costs one forward and one inverse FFT of the window.
    """

    def __init__(
        self,
        sys: OpticalSystem,
        surface: DiffuserSurface,
        grid: SimulationGrid,
        *,
        apodization: str = "uniform",
        z_limit_um: float = 250.0,
        dtype=np.complex128,
        workers: int | None = None,
    ):
        self.sys = sys
        self.surface = surface
        self.grid = grid
        self.apodization = apodization
        self.z_limit_um = float(z_limit_um)
        self.dtype = np.dtype(dtype)
        self.workers = workers
        self.pitch_um = grid.sample_pitch_um(sys)
        if abs(surface.grid_pitch_um - self.pitch_um) > 1e-9 * self.pitch_um:
            raise ValueError(
                f"surface pitch {surface.grid_pitch_um} um differs from the simulation pitch {self.pitch_um} um"
            )
        n = grid.n
        d_um = sys.f_ave_mm * 1000.0
        if band_limit(n, self.pitch_um, sys.wavelength_um, d_um) < 0.5 / self.pitch_um:
            raise SamplingError(
                f"window of {n} samples at {self.pitch_um:.4g} um is too small to propagate {d_um:.4g} um"
            )
        self._m = grid.mask_shape(sys)[0]
        self._offset = n // 2 - self._m // 2
        screen = phase_screen(surface, sys.wavelength_um)
        self._transmission = _fit_centered(screen, self._m, 1.0).astype(self.dtype)
        self._h = transfer_function((n, n), self.pitch_um, sys.wavelength_um, d_um, dtype=self.dtype)
        self._crop = grid.crop_slices()
        ref = pupil_field(sys, (0.0, 0.0, 0.0), self._m, self.pitch_um, apodization=apodization)
        self._pupil_power = ref.power
        self.check_sampling = True

    def validate_source(self, source_xyz_um) -> None:
        x0, y0, z0 = (float(v) for v in source_xyz_um)
        half_fov = self.sys.obj_fov_mm * 500.0
        # square field, matching the square test charts that fill it
        if max(abs(x0), abs(y0)) > half_fov * (1 + 1e-9):
            raise ValueError(f"source ({x0}, {y0}) um lies outside the {2 * half_fov} um square objective field of view")
        if abs(z0) > self.z_limit_um:
            raise ValueError(f"source depth {z0} um exceeds the simulation limit +/-{self.z_limit_um} um")

    def mask_field(self, source_xyz_um) -> FieldGrid:
        """Field just after the mask, on the full propagation window."""
        self.validate_source(source_xyz_um)
        u = pupil_field(
            self.sys, source_xyz_um, self._m, self.pitch_um, apodization=self.apodization, dtype=self.dtype
        ).complex_amplitude
        u *= self._transmission
        if self.check_sampling:
            step = _max_phase_step(u)
            if step >= np.pi:
                raise SamplingError(
                    f"phase changes by {step:.3f} rad between samples (limit pi); reduce the sample pitch"
                )
        full = np.zeros((self.grid.n, self.grid.n), dtype=self.dtype)
        o, m = self._offset, self._m
        full[o : o + m, o : o + m] = u
        return FieldGrid(full, self.pitch_um, self.sys.wavelength_um)

    def sensor_field(self, source_xyz_um) -> FieldGrid:
        u = self.mask_field(source_xyz_um)
        spec = sfft.fft2(u.complex_amplitude, workers=self.workers, overwrite_x=True)
        spec *= self._h
        out = sfft.ifft2(spec, workers=self.workers, overwrite_x=True)
        return FieldGrid(out, self.pitch_um, self.sys.wavelength_um)

    def __call__(self, source_xyz_um) -> np.ndarray:
        """Sensor kernel: pixel-integrated intensity as a fraction of the pupil power."""
        u = self.sensor_field(source_xyz_um).complex_amplitude
        sy, sx = self._crop
        inten = np.abs(u[sy, sx]).astype(np.float64) ** 2 * self.pitch_um**2
        return bin_sum(inten, self.grid.oversample) / self._pupil_power

    def stack(self, z_list_um, lateral_offset_um=(0.0, 0.0)) -> PSFStack:
        z = np.asarray(z_list_um, dtype=float)
        if np.any(np.diff(z) <= 0):
            raise ValueError("z_list_um must be strictly increasing")
        ox, oy = lateral_offset_um
        kernels = np.stack([self((ox, oy, zi)) for zi in z])
        return PSFStack(
            kernels,
            z,
            self.sys.pixel_um,
            {"lateral_offset_um": [float(ox), float(oy)]},
            self.sys.pixel_um / magnification(self.sys),
        )


def simulate_psf(sys, surface, source_xyz_um, grid: SimulationGrid, **kw) -> np.ndarray:
    """One sensor kernel for a point source (see :class:`PSFSimulator`)."""
    return PSFSimulator(sys, surface, grid, **kw)(source_xyz_um)


def simulate_psf_stack(sys, surface, z_list_um, grid: SimulationGrid, lateral_offset_um=(0.0, 0.0), **kw) -> PSFStack:
    """Kernels for a list of ascending depths at a fixed lateral offset."""
    return PSFSimulator(sys, surface, grid, **kw).stack(z_list_um, lateral_offset_um)


def expected_shift_px(sys: OpticalSystem, lateral_um: float) -> float:
    """Sensor-pixel displacement of the in-focus image for a lateral object shift."""
    return magnification(sys) * lateral_um / sys.pixel_um

