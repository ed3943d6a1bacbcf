"""Image formation: multi-depth 2D convolution, block-wise shift-varying
convolution and additive Gaussian noise.

All convolutions are linear (zero padded). The full convolution of an
``(ny, nx)`` slice with a ``(Ky, Kx)`` kernel is cropped to the sensor so that a
unit voxel at the slice centre reproduces the kernel centred on the sensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .rng import substream
from .wavesim import PSFStack

__all__ = [
    "Volume",
    "Measurement",
    "ConvOperator",
    "forward_project",
    "adjoint_project",
    "PSFField",
    "block_centers_px",
    "forward_project_blockwise",
    "recenter_kernel",
    "add_gaussian_noise",
]


@dataclass
class Volume:
    """Non-negative intensities ordered ``[z][y][x]``."""

    intensities: np.ndarray
    lateral_pitch_um: float
    z_positions_um: np.ndarray

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities)
        if self.intensities.ndim == 2:
            self.intensities = self.intensities[None]
        self.z_positions_um = np.atleast_1d(np.asarray(self.z_positions_um, dtype=float))
        if self.intensities.ndim != 3:
            raise ValueError("intensities must be (nz, ny, nx)")
        if len(self.z_positions_um) != self.intensities.shape[0]:
            raise ValueError("one depth per slice is required")
        if np.any(np.diff(self.z_positions_um) <= 0):
            raise ValueError("z_positions_um must be strictly increasing")
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise ValueError("intensities must be finite and non-negative")

    @property
    def shape(self):
        return self.intensities.shape


@dataclass
class Measurement:
    """Non-negative sensor image."""

    image: np.ndarray
    sensor_pitch_um: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 2:
            raise ValueError("image must be 2D")
        if not np.all(np.isfinite(self.image)) or np.any(self.image < 0):
            raise ValueError("image must be finite and non-negative")


class ConvOperator:
    """Linear operator ``H x = sum_z crop(h_z * x_z)`` and its exact adjoint.

    Parameters
    ----------
    kernels : numpy.ndarray
        ``(nz, Ky, Kx)`` kernels.
    object_shape : tuple of int
        ``(ny, nx)`` lateral shape of each slice.
    sensor_shape : tuple of int, optional
        Output shape. Defaults to the kernel shape.
    dtype : numpy dtype
        Real working precision.
    workers : int, optional
        Threads passed to :mod:`scipy.fft`.
    """

    def __init__(self, kernels, object_shape, sensor_shape=None, dtype=np.float64, workers=None):
        kernels = np.asarray(kernels)
        if kernels.ndim == 2:
            kernels = kernels[None]
        self.dtype = np.dtype(dtype)
        self.nz, ky, kx = kernels.shape
        self.kernel_shape = (ky, kx)
        self.object_shape = tuple(int(v) for v in object_shape)
        self.sensor_shape = tuple(int(v) for v in (sensor_shape or (ky, kx)))
        self.workers = workers
        full = [n + k - 1 for n, k in zip(self.object_shape, self.kernel_shape)]
        self.offset = tuple(
            n // 2 + k // 2 - s // 2 for n, k, s in zip(self.object_shape, self.kernel_shape, self.sensor_shape)
        )
        for o, s, f in zip(self.offset, self.sensor_shape, full):
            if o < 0 or o + s > f:
                raise ValueError(
                    f"sensor shape {self.sensor_shape} does not fit inside the full convolution {tuple(full)}"
                )
        self.pad_shape = tuple(sfft.next_fast_len(f, real=True) for f in full)
        self._kf = sfft.rfft2(kernels.astype(self.dtype), s=self.pad_shape, workers=workers)

    @property
    def input_shape(self):
        return (self.nz,) + self.object_shape

    @property
    def kernel_spectra(self) -> np.ndarray:
        return self._kf

    def _crop(self, full):
        (oy, ox), (sy, sx) = self.offset, self.sensor_shape
        return full[..., oy : oy + sy, ox : ox + sx]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape != self.input_shape:
            raise ValueError(f"volume shape {x.shape} does not match operator input {self.input_shape}")
        xf = sfft.rfft2(x, s=self.pad_shape, workers=self.workers)
        yf = np.einsum("zij,zij->ij", xf, self._kf)
        full = sfft.irfft2(yf, s=self.pad_shape, workers=self.workers)
        return np.ascontiguousarray(self._crop(full))

    def forward_each(self, x: np.ndarray) -> np.ndarray:
        """Per-depth contributions ``crop(h_z * x_z)`` without summing."""
        x = np.asarray(x, dtype=self.dtype)
        xf = sfft.rfft2(x, s=self.pad_shape, workers=self.workers)
        full = sfft.irfft2(xf * self._kf, s=self.pad_shape, workers=self.workers)
        return np.ascontiguousarray(self._crop(full))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=self.dtype)
        if y.shape != self.sensor_shape:
            raise ValueError(f"measurement shape {y.shape} does not match operator output {self.sensor_shape}")
        g = np.zeros(self.pad_shape, dtype=self.dtype)
        (oy, ox), (sy, sx) = self.offset, self.sensor_shape
        g[oy : oy + sy, ox : ox + sx] = y
        gf = sfft.rfft2(g, workers=self.workers)
        corr = sfft.irfft2(gf[None] * np.conj(self._kf), s=self.pad_shape, workers=self.workers)
        ny, nx = self.object_shape
        return np.ascontiguousarray(corr[:, :ny, :nx])

    def adjoint_ones(self) -> np.ndarray:
        """``H^T 1``: per-voxel sensitivity, equal to kernel sums away from the borders."""
        return self.adjoint(np.ones(self.sensor_shape, dtype=self.dtype))


def _check_compat(vol: Volume, psfs: PSFStack):
    if vol.shape[0] != len(psfs):
        raise ValueError(f"volume has {vol.shape[0]} slices but the PSF stack has {len(psfs)} depths")
    if not np.allclose(vol.z_positions_um, psfs.z_positions_um, rtol=0, atol=1e-6):
        raise ValueError("volume depths do not match the PSF stack depths")
    if psfs.object_pitch_um is not None and not np.isclose(
        vol.lateral_pitch_um, psfs.object_pitch_um, rtol=1e-6, atol=0
    ):
        raise ValueError(
            f"volume pitch {vol.lateral_pitch_um} um differs from the PSF object-space pitch {psfs.object_pitch_um} um"
        )


def forward_project(vol: Volume, psfs: PSFStack, sensor_shape=None, workers=None) -> Measurement:
    """Sensor image ``y = sum_z h_z * x_z`` of a volume."""
    _check_compat(vol, psfs)
    op = ConvOperator(psfs.kernels, vol.shape[1:], sensor_shape, workers=workers)
    y = op.forward(vol.intensities)
    return Measurement(np.maximum(y, 0.0), psfs.sensor_pitch_um)


def adjoint_project(meas: Measurement, psfs: PSFStack, object_shape, workers=None) -> Volume:
    """Adjoint of :func:`forward_project` (per-depth correlation with ``h_z``).

    Round-off negatives are clipped so the result is a valid :class:`Volume`;
    :meth:`ConvOperator.adjoint` returns the raw values.
    """
    op = ConvOperator(psfs.kernels, object_shape, meas.image.shape, workers=workers)
    x = op.adjoint(meas.image)
    pitch = psfs.object_pitch_um if psfs.object_pitch_um is not None else psfs.sensor_pitch_um
    return Volume(np.maximum(x, 0.0), pitch, psfs.z_positions_um)


@dataclass
class PSFField:
    """Per-block kernels for a shift-varying single-plane model.

    Attributes
    ----------
    kernels : numpy.ndarray
        ``(by, bx, Ky, Kx)``; ``kernels[i, j]`` applies to object pixels
        ``[i*block_px:(i+1)*block_px, j*block_px:(j+1)*block_px]``. Each kernel is
        centred: a point at its block centre maps to the same sensor offset as a
        point at the plane centre would under a shift-invariant model.
    block_px : int
    """

    kernels: np.ndarray
    block_px: int

    @property
    def grid_shape(self):
        return self.kernels.shape[:2]


def block_centers_px(plane_shape, block_px):
    """Integer pixel indices of each block centre along y and x."""
    return tuple(np.arange(0, n, block_px) + block_px // 2 for n in plane_shape)


def recenter_kernel(kernel: np.ndarray, shift_px) -> np.ndarray:
    """Translate ``kernel`` by integer ``(dy, dx)`` pixels with zero fill."""
    dy, dx = (int(v) for v in shift_px)
    out = np.zeros_like(kernel)
    ny, nx = kernel.shape
    src_y = slice(max(-dy, 0), ny - max(dy, 0))
    dst_y = slice(max(dy, 0), ny - max(-dy, 0))
    src_x = slice(max(-dx, 0), nx - max(dx, 0))
    dst_x = slice(max(dx, 0), nx - max(-dx, 0))
    out[dst_y, dst_x] = kernel[src_y, src_x]
    return out


def forward_project_blockwise(plane: np.ndarray, psf_field: PSFField, sensor_shape=None, workers=None) -> np.ndarray:
    """Shift-varying image of one plane: sum over blocks of (block content * block kernel)."""
    plane = np.asarray(plane, dtype=float)
    b = int(psf_field.block_px)
    by, bx = psf_field.grid_shape
    ny, nx = plane.shape
    if by * b < ny or bx * b < nx:
        raise ValueError(
            f"PSF field of {by}x{bx} blocks of {b} px leaves part of the {ny}x{nx} plane uncovered"
        )
    masked = np.zeros((by * bx, ny, nx))
    for i in range(by):
        for j in range(bx):
            masked[i * bx + j, i * b : (i + 1) * b, j * b : (j + 1) * b] = plane[i * b : (i + 1) * b, j * b : (j + 1) * b]
    kernels = psf_field.kernels.reshape((by * bx,) + psf_field.kernels.shape[2:])
    op = ConvOperator(kernels, plane.shape, sensor_shape, workers=workers)
    return op.forward(masked)


def add_gaussian_noise(meas: Measurement, level_fraction: float, seed: int) -> Measurement:
    """Add iid Gaussian noise with ``sigma = level_fraction * max(y)``, clamped at zero."""
    if level_fraction < 0:
        raise ValueError("level_fraction must be non-negative")
    y = meas.image
    if level_fraction == 0:
        return Measurement(y.copy(), meas.sensor_pitch_um, dict(meas.meta))
    sigma = level_fraction * float(np.max(y))
    noise = substream(seed, "noise").normal(0.0, sigma, size=y.shape)
    meta = dict(meas.meta, noise_level=level_fraction, noise_seed=int(seed))
    return Measurement(np.maximum(y + noise, 0.0), meas.sensor_pitch_um, meta)

