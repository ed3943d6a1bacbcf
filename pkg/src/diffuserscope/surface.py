"""Height maps of regular and random (uni- or multi-focal) pupil lenslet masks.

Every lenslet is a plano-convex spherical cap. The mask surface is the point-wise
maximum of all caps, so each sample belongs to exactly one lenslet and the fill
factor is 1.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .design import Layout, OpticalSystem, focal_length_schedule
from .rng import substream

__all__ = [
    "MIN_DISTANCE_FRACTION",
    "PlacementError",
    "LensletSpec",
    "DiffuserSurface",
    "place_centers_random",
    "place_centers_grid",
    "sag_profile",
    "lenslet_heights",
    "compose_surface",
    "governing_lenslet",
    "phase_screen",
    "generate_surface",
    "grid_coordinates_mm",
]

MIN_DISTANCE_FRACTION = 0.7
MAX_RESTARTS = 10_000
_TRIES_PER_POINT = 2_000


class PlacementError(RuntimeError):
    """Random lenslet placement could not satisfy the spacing constraint."""


@dataclass(frozen=True)
class LensletSpec:
    center_xy_mm: tuple[float, float]
    focal_mm: float
    pitch_mm: float

    def __post_init__(self):
        if not self.focal_mm > 0:
            raise ValueError(f"focal_mm must be positive, got {self.focal_mm}")
        if not self.pitch_mm > 0:
            raise ValueError(f"pitch_mm must be positive, got {self.pitch_mm}")
        object.__setattr__(self, "center_xy_mm", (float(self.center_xy_mm[0]), float(self.center_xy_mm[1])))

    def to_dict(self) -> dict:
        return {"center_xy_mm": list(self.center_xy_mm), "focal_mm": self.focal_mm, "pitch_mm": self.pitch_mm}

    @classmethod
    def from_dict(cls, d: dict) -> "LensletSpec":
        return cls(tuple(d["center_xy_mm"]), float(d["focal_mm"]), float(d["pitch_mm"]))


@dataclass(frozen=True, eq=False)
class DiffuserSurface:
    """Composite mask height map.

    Attributes
    ----------
    height_map : numpy.ndarray
        Sag heights in um, shape ``(ny, nx)``, minimum 0. Sample ``[j, i]`` sits at
        ``((i - nx//2) * pitch, (j - ny//2) * pitch)``.
    grid_pitch_um : float
    refractive_index : float
        Mask material index.
    lenslets : tuple of LensletSpec
    layout_kind : Layout
    rng_seed : int or None
    """

    height_map: np.ndarray
    grid_pitch_um: float
    refractive_index: float
    lenslets: tuple
    layout_kind: Layout
    rng_seed: int | None = None

    def __post_init__(self):
        h = self.height_map
        if h.ndim != 2 or not np.all(np.isfinite(h)) or h.min() < 0:
            raise ValueError("height_map must be a finite, non-negative 2D array")
        object.__setattr__(self, "layout_kind", Layout(self.layout_kind))
        object.__setattr__(self, "lenslets", tuple(self.lenslets))

    @property
    def shape(self) -> tuple[int, int]:
        return self.height_map.shape

    def sidecar(self) -> dict:
        return {
            "layout_kind": self.layout_kind.value,
            "refractive_index": self.refractive_index,
            "grid_pitch_um": self.grid_pitch_um,
            "rng_seed": self.rng_seed,
            "lenslets": [l.to_dict() for l in self.lenslets],
        }

    @classmethod
    def from_sidecar(cls, height_map: np.ndarray, sidecar: dict) -> "DiffuserSurface":
        return cls(
            height_map=np.asarray(height_map, dtype=float),
            grid_pitch_um=float(sidecar["grid_pitch_um"]),
            refractive_index=float(sidecar["refractive_index"]),
            lenslets=tuple(LensletSpec.from_dict(d) for d in sidecar["lenslets"]),
            layout_kind=Layout(sidecar["layout_kind"]),
            rng_seed=sidecar["rng_seed"],
        )


def place_centers_grid(aperture_mm: float, n_1d: int) -> np.ndarray:
    """Regular ``n_1d x n_1d`` grid of centres with pitch ``aperture / n_1d``, centred on axis."""
    if n_1d < 1:
        raise ValueError(f"n_1d must be >= 1, got {n_1d}")
    pitch = aperture_mm / n_1d
    c = (np.arange(n_1d) - (n_1d - 1) / 2.0) * pitch
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def place_centers_random(
    aperture_mm: float,
    n_lenslets: int,
    pitch_mm: float,
    seed: int,
    min_fraction: float = MIN_DISTANCE_FRACTION,
    max_restarts: int = MAX_RESTARTS,
) -> np.ndarray:
    """Uniform random centres in a square aperture with a minimum spacing.

    Centres are drawn one at a time and rejected if closer than
    ``min_fraction * pitch_mm`` to an accepted centre. When a centre cannot be
    placed after a bounded number of draws the whole layout restarts.

    Returns
    -------
    numpy.ndarray
        Array of shape ``(n_lenslets, 2)`` holding ``(x, y)`` in mm.

    Raises
    ------
    PlacementError
        If the packing is impossible or ``max_restarts`` is exhausted.
    """
    if n_lenslets < 1:
        raise ValueError(f"n_lenslets must be >= 1, got {n_lenslets}")
    dmin = min_fraction * pitch_mm
    # hexagonal packing bound; the square may hold centres on its boundary
    if n_lenslets > 1 and n_lenslets * (math.sqrt(3) / 2) * dmin**2 > (aperture_mm + dmin) ** 2:
        raise PlacementError(
            f"placement infeasible: {n_lenslets} centres at spacing {dmin:.4g} mm "
            f"cannot fit a {aperture_mm:.4g} mm aperture"
        )
    rng = substream(seed, "placement")
    half = aperture_mm / 2.0
    d2 = dmin * dmin
    for _ in range(max_restarts):
        pts = np.empty((n_lenslets, 2))
        count = 0
        while count < n_lenslets:
            for _ in range(_TRIES_PER_POINT):
                cand = rng.uniform(-half, half, size=2)
                if count == 0 or np.min(np.sum((pts[:count] - cand) ** 2, axis=1)) >= d2:
                    pts[count] = cand
                    count += 1
                    break
            else:
                break
        if count == n_lenslets:
            return pts
    raise PlacementError(
        f"placement infeasible: no valid layout of {n_lenslets} centres after {max_restarts} restarts"
    )


def sag_profile(lenslet: LensletSpec, xy_mm, refractive_index: float) -> np.ndarray:
    """Spherical sag (um) of a plano-convex lenslet at points ``xy_mm``.

    Radius of curvature is ``f * (n - 1)``; beyond that radius the sag is
    clamped to the hemisphere edge value.
    """
    xy = np.asarray(xy_mm, dtype=float)
    radius = lenslet.focal_mm * (refractive_index - 1.0)
    r2 = (xy[..., 0] - lenslet.center_xy_mm[0]) ** 2 + (xy[..., 1] - lenslet.center_xy_mm[1]) ** 2
    r2 = np.minimum(r2, radius * radius)
    # R - sqrt(R^2 - r^2), written to avoid cancellation at small r
    return 1000.0 * r2 / (radius + np.sqrt(radius * radius - r2))


def grid_coordinates_mm(shape: tuple[int, int], grid_pitch_um: float) -> tuple[np.ndarray, np.ndarray]:
    """1D x and y coordinates (mm) of a centred sample grid."""
    ny, nx = shape
    step = grid_pitch_um / 1000.0
    return (np.arange(nx) - nx // 2) * step, (np.arange(ny) - ny // 2) * step


def lenslet_heights(lenslet: LensletSpec, xy_mm, refractive_index: float) -> np.ndarray:
    """Height (um) of one lenslet cap on the common back plane.

    All caps cross height zero at half a pitch from their centre, so equal
    lenslets partition the plane into nearest-centre cells.
    """
    edge = np.array([lenslet.center_xy_mm[0] + lenslet.pitch_mm / 2.0, lenslet.center_xy_mm[1]])
    vertex = sag_profile(lenslet, edge, refractive_index)
    return vertex - sag_profile(lenslet, xy_mm, refractive_index)


def _heights_on_grid(lenslet, x, y, n):
    radius = lenslet.focal_mm * (n - 1.0)
    dx2 = (x - lenslet.center_xy_mm[0]) ** 2
    dy2 = (y - lenslet.center_xy_mm[1]) ** 2
    r2 = np.minimum(dy2[:, None] + dx2[None, :], radius * radius)
    sag = 1000.0 * r2 / (radius + np.sqrt(radius * radius - r2))
    edge2 = min((lenslet.pitch_mm / 2.0) ** 2, radius * radius)
    vertex = 1000.0 * edge2 / (radius + math.sqrt(radius * radius - edge2))
    return vertex - sag


def compose_surface(
    lenslets,
    grid_pitch_um: float,
    shape: tuple[int, int],
    refractive_index: float = 1.56,
    layout_kind: Layout | str = Layout.RMM,
    seed: int | None = None,
) -> DiffuserSurface:
    """Point-wise maximum of all lenslet caps on a centred grid, shifted to min 0."""
    lenslets = tuple(lenslets)
    if not lenslets:
        raise ValueError("at least one lenslet is required")
    x, y = grid_coordinates_mm(shape, grid_pitch_um)
    height = _heights_on_grid(lenslets[0], x, y, refractive_index)
    for lenslet in lenslets[1:]:
        np.maximum(height, _heights_on_grid(lenslet, x, y, refractive_index), out=height)
    height -= height.min()
    return DiffuserSurface(
        height_map=height,
        grid_pitch_um=float(grid_pitch_um),
        refractive_index=float(refractive_index),
        lenslets=lenslets,
        layout_kind=Layout(layout_kind),
        rng_seed=seed,
    )


def governing_lenslet(surface: DiffuserSurface, xy_mm) -> np.ndarray:
    """Index of the lenslet whose cap is highest at each point."""
    xy = np.asarray(xy_mm, dtype=float)
    stack = np.stack([lenslet_heights(l, xy, surface.refractive_index) for l in surface.lenslets])
    return np.argmax(stack, axis=0)


def phase_screen(surface: DiffuserSurface, wavelength_um: float) -> np.ndarray:
    """Complex transmission ``exp(i 2 pi (n - 1) h / lambda)`` of the mask."""
    phase = (2.0 * np.pi / wavelength_um) * (surface.refractive_index - 1.0) * surface.height_map
    return np.exp(1j * phase)


def generate_surface(
    sys: OpticalSystem,
    layout: Layout | str,
    seed: int,
    grid_pitch_um: float,
    shape: tuple[int, int],
    z_half_range_um: float = 100.0,
) -> DiffuserSurface:
    """Build an MLA, RUM or RMM mask for ``sys``.

    RMM focal lengths are the dioptric schedule over ``+/- z_half_range_um``,
    assigned to positions by a seeded random permutation.
    """
    layout = Layout(layout)
    n1 = sys.n_lenslets_1d
    aperture = n1 * sys.pitch_mm
    if layout is Layout.MLA:
        centers = place_centers_grid(aperture, n1)
    else:
        centers = place_centers_random(aperture, n1 * n1, sys.pitch_mm, seed)
    if layout is Layout.RMM:
        if n1 * n1 < 2:
            raise ValueError("a multi-focal layout needs at least two lenslets")
        focals = focal_length_schedule(sys, z_half_range_um, n1 * n1)
        focals = focals[substream(seed, "permutation").permutation(len(focals))]
    else:
        focals = np.full(len(centers), sys.f_ave_mm)
    lenslets = [LensletSpec((float(c[0]), float(c[1])), float(f), sys.pitch_mm) for c, f in zip(centers, focals)]
    return compose_surface(lenslets, grid_pitch_um, shape, sys.mask_index, layout, seed)

