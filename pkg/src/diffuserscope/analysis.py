"""Metrics and phantoms for the resolution, field-of-view and depth-range studies.

Peaks are compared with a Rayleigh-style rule throughout: two maxima are
resolved when the linearly interpolated profile between them drops at least
20% below the weaker maximum.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize
from skimage.registration import phase_cross_correlation

from .design import Layout, lateral_resolution, magnification
from .forward import ConvOperator, Volume
from .recon import richardson_lucy_operator

__all__ = [
    "MIN_DIP",
    "ResolutionCurve",
    "SimilarityProfile",
    "TwoPointResult",
    "SpiralPhantom",
    "SphereCount",
    "line_profile",
    "dip_between",
    "local_maxima",
    "shift_image",
    "two_point_resolution",
    "resolution_curve",
    "cosine_similarity",
    "cosine_similarity_profile",
    "psnr",
    "spiral_centers",
    "spiral_phantom",
    "count_resolved_spheres",
    "fov_phantom",
    "GhostEnergy",
    "ghost_energy",
    "ghost_energy_fraction",
]

MIN_DIP = 0.2


def _finite_or_none(values):
    return [float(v) if np.isfinite(v) else None for v in values]


@dataclass
class ResolutionCurve:
    """Two-point resolution against depth for one layout.

    ``inf`` marks separations unresolved up to the search bound and ``nan``
    marks depths where the axis was not measured.
    """

    z_positions_um: np.ndarray
    lateral_res_um: np.ndarray
    axial_res_um: np.ndarray
    layout_kind: Layout
    lateral_bound_um: float = math.nan
    axial_bound_um: float = math.nan

    def __post_init__(self):
        self.z_positions_um = np.asarray(self.z_positions_um, dtype=float)
        self.lateral_res_um = np.asarray(self.lateral_res_um, dtype=float)
        self.axial_res_um = np.asarray(self.axial_res_um, dtype=float)
        self.layout_kind = Layout(self.layout_kind)
        n = len(self.z_positions_um)
        if len(self.lateral_res_um) != n or len(self.axial_res_um) != n:
            raise ValueError("one lateral and one axial value per depth is required")
        for name, arr in (("lateral", self.lateral_res_um), ("axial", self.axial_res_um)):
            measured = arr[~np.isnan(arr)]
            if np.any(measured <= 0):
                raise ValueError(f"{name} resolutions must be positive")

    def to_dict(self) -> dict:
        return {
            "layout_kind": self.layout_kind.value,
            "z_positions_um": self.z_positions_um.tolist(),
            "lateral_res_um": _finite_or_none(self.lateral_res_um),
            "axial_res_um": _finite_or_none(self.axial_res_um),
            "lateral_unresolved": np.isinf(self.lateral_res_um).tolist(),
            "axial_unresolved": np.isinf(self.axial_res_um).tolist(),
            "lateral_bound_um": None if math.isnan(self.lateral_bound_um) else self.lateral_bound_um,
            "axial_bound_um": None if math.isnan(self.axial_bound_um) else self.axial_bound_um,
        }


@dataclass
class SimilarityProfile:
    shift_positions_um: np.ndarray
    cosine_similarity: np.ndarray
    registered: np.ndarray
    registration_shift_px: np.ndarray

    def to_dict(self) -> dict:
        return {
            "shift_positions_um": np.asarray(self.shift_positions_um, dtype=float).tolist(),
            "cosine_similarity": np.asarray(self.cosine_similarity, dtype=float).tolist(),
            "registered": np.asarray(self.registered, dtype=bool).tolist(),
            "registration_shift_px": np.asarray(self.registration_shift_px, dtype=float).tolist(),
        }


@dataclass
class TwoPointResult:
    """Outcome of a separation scan.

    Attributes
    ----------
    separation_um : float
        Smallest tested separation above which every tested separation
        resolved; ``inf`` when the largest tested separation is unresolved.
    bound_um : float
        Largest separation tested.
    trials : list of tuple
        ``(separation_um, resolved, dip)`` for every trial, ascending.
    violations : list of float
        Separations that resolved although a larger one did not.
    """

    separation_um: float
    bound_um: float
    trials: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def resolved(self) -> bool:
        return math.isfinite(self.separation_um)


# -- peak geometry --------------------------------------------------------------------


def line_profile(arr: np.ndarray, a, b, samples: int | None = None) -> np.ndarray:
    """Values of ``arr`` along the segment from index ``a`` to index ``b`` (linear interpolation)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if samples is None:
        samples = max(2, int(math.ceil(8 * np.linalg.norm(b - a))) + 1)
    t = np.linspace(0.0, 1.0, samples)
    coords = a[:, None] + (b - a)[:, None] * t[None, :]
    return ndimage.map_coordinates(np.asarray(arr, dtype=float), coords, order=1, mode="nearest")


def dip_between(arr: np.ndarray, a, b) -> float:
    """Relative drop of the profile between two maxima, below the weaker one."""
    prof = line_profile(arr, a, b)
    peak = min(prof[0], prof[-1])
    if peak <= 0:
        return 0.0
    return float(max(0.0, 1.0 - prof.min() / peak))


def local_maxima(arr: np.ndarray, threshold_rel: float = 0.1) -> np.ndarray:
    """Integer indices of local maxima at or above ``threshold_rel * max``.

    Plateaus count once, represented by the plateau voxel nearest its centroid.
    """
    arr = np.asarray(arr, dtype=float)
    top = float(arr.max()) if arr.size else 0.0
    if top <= 0:
        return np.zeros((0, arr.ndim), dtype=int)
    footprint = np.ones((3,) * arr.ndim, dtype=bool)
    mx = ndimage.maximum_filter(arr, footprint=footprint, mode="constant", cval=-np.inf)
    mask = (arr >= mx) & (arr >= threshold_rel * top) & (arr > 0)
    labels, n = ndimage.label(mask, structure=footprint)
    if n == 0:
        return np.zeros((0, arr.ndim), dtype=int)
    out = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        pts = np.argwhere(labels[sl] == idx) + [s.start for s in sl]
        centroid = pts.mean(axis=0)
        out.append(pts[np.argmin(np.sum((pts - centroid) ** 2, axis=1))])
    return np.array(out, dtype=int)


def _match_one_to_one(truth_phys: np.ndarray, peaks_phys: np.ndarray, radius: float):
    """Greedy nearest assignment of peaks to truths within ``radius``; -1 when unmatched."""
    match = np.full(len(truth_phys), -1, dtype=int)
    if len(peaks_phys) == 0:
        return match
    d = np.linalg.norm(truth_phys[:, None, :] - peaks_phys[None, :, :], axis=-1)
    pairs = np.argwhere(d <= radius)
    used = set()
    for i, j in sorted(pairs.tolist(), key=lambda ij: (d[ij[0], ij[1]], ij[0], ij[1])):
        if match[i] < 0 and j not in used:
            match[i] = j
            used.add(j)
    return match


def _pair_dip(recon, truth_idx, scale, radius, threshold_rel):
    peaks = local_maxima(recon, threshold_rel)
    match = _match_one_to_one(truth_idx * scale, peaks * scale, radius)
    if np.any(match < 0):
        return False, 0.0
    dip = dip_between(recon, peaks[match[0]], peaks[match[1]])
    return dip >= MIN_DIP, dip


# -- two-point resolution -------------------------------------------------------------


def shift_image(img: np.ndarray, shift_px) -> np.ndarray:
    """Sub-pixel translation by a Fourier phase ramp, zero padded so nothing wraps."""
    img = np.asarray(img, dtype=float)
    shift = np.broadcast_to(np.asarray(shift_px, dtype=float), (img.ndim,))
    pad = [(int(math.ceil(abs(s))) + 2,) * 2 for s in shift]
    big = np.pad(img, pad)
    spec = np.fft.rfftn(big)
    spec = ndimage.fourier_shift(spec, shift, n=big.shape[-1])
    out = np.fft.irfftn(spec, s=big.shape, axes=tuple(range(big.ndim)))
    crop = tuple(slice(p[0], p[0] + n) for p, n in zip(pad, img.shape))
    return np.maximum(out[crop], 0.0)


def _scan_separations(evaluate, step_um, max_um, coarse_factor):
    """Coarse-then-fine scan; ``evaluate(d) -> (resolved, dip)``."""
    kmax = int(math.floor(max_um / step_um + 1e-9))
    if kmax < 1:
        raise ValueError("max separation must be at least one search step")
    coarse_factor = max(1, min(int(coarse_factor), kmax))
    results = {}

    def run(k):
        if k not in results:
            results[k] = evaluate(k * step_um)

    coarse = list(range(coarse_factor, kmax + 1, coarse_factor))
    if coarse[-1] != kmax:
        coarse.append(kmax)
    for k in coarse:
        run(k)
    boundary = None
    for k in reversed(coarse):
        if not results[k][0]:
            break
        boundary = k
    if boundary is not None:
        prev = max([c for c in coarse if c < boundary], default=0)
        for k in range(prev + 1, boundary):
            run(k)
    tested = sorted(results)
    best = None
    for k in reversed(tested):
        if not results[k][0]:
            break
        best = k
    trials = [(round(k * step_um, 9), bool(results[k][0]), float(results[k][1])) for k in tested]
    cutoff = best if best is not None else kmax + 1
    violations = [round(k * step_um, 9) for k in tested if k < cutoff and results[k][0]]
    sep = round(best * step_um, 9) if best is not None else math.inf
    return TwoPointResult(sep, round(kmax * step_um, 9), trials, violations)


def two_point_resolution(
    simulator,
    z_um: float,
    axis: str = "lateral",
    search_step_um: float | None = None,
    max_separation_um: float | None = None,
    *,
    rl_iters: int = 8,
    coarse_factor: int = 5,
    threshold_rel: float = 0.1,
    dtype=np.float32,
    kernel_cache: dict | None = None,
) -> TwoPointResult:
    """Smallest separation at which an RL reconstruction of two points shows a 20% dip.

    Parameters
    ----------
    simulator : callable
        ``simulator((x, y, z)) -> kernel``, with a ``sys`` attribute; normally a
        :class:`~diffuserscope.wavesim.PSFSimulator`.
    z_um : float
        Depth of the pair centre.
    axis : {"lateral", "axial"}
        Lateral pairs lie at depth ``z`` along x; axial pairs lie on the optical
        axis at ``z -/+ d/2``.
    search_step_um : float, optional
        Separation increment. Defaults to 0.1 um laterally and 1 um axially.
    max_separation_um : float, optional
        Search bound. Defaults to 8 lateral resolution limits laterally and 12 um axially.
    coarse_factor : int
        The scan first tests multiples of ``coarse_factor * step`` and then
        every step below the coarse boundary.
    kernel_cache : dict, optional
        Depth-keyed kernel cache shared between calls.
    """
    sys = simulator.sys
    pitch = sys.pixel_um / magnification(sys)
    cache = {} if kernel_cache is None else kernel_cache

    def kernel(z):
        key = round(float(z), 6)
        if key not in cache:
            cache[key] = np.asarray(simulator((0.0, 0.0, key)), dtype=float)
        return cache[key]

    if axis == "lateral":
        step = 0.1 if search_step_um is None else float(search_step_um)
        bound = 8.0 * lateral_resolution(sys) if max_separation_um is None else float(max_separation_um)
        half = int(math.ceil(bound / (2 * pitch))) + 6
        n = 2 * half + 1
        k0 = kernel(z_um)
        op = ConvOperator(k0, (n, n), k0.shape, dtype=dtype)
        scale = np.array([pitch, pitch])

        def evaluate(d):
            s = d / (2 * pitch)
            y = shift_image(k0, (0.0, s)) + shift_image(k0, (0.0, -s))
            x, _ = richardson_lucy_operator(y, op, rl_iters)
            truth = np.array([[half, half - s], [half, half + s]])
            return _pair_dip(x[0], truth, scale, max(0.5 * d, 1.5 * pitch), threshold_rel)

    elif axis == "axial":
        step = 1.0 if search_step_um is None else float(search_step_um)
        bound = 12.0 if max_separation_um is None else float(max_separation_um)
        dz = step
        kz = int(math.ceil(bound / (2 * dz))) + 2
        grid = z_um + dz * np.arange(-kz, kz + 1)
        kernels = np.stack([kernel(z) for z in grid])
        half = 7
        op = ConvOperator(kernels, (2 * half + 1, 2 * half + 1), kernels.shape[1:], dtype=dtype)
        scale = np.array([dz, pitch, pitch])

        def evaluate(d):
            y = kernel(z_um - d / 2) + kernel(z_um + d / 2)
            x, _ = richardson_lucy_operator(y, op, rl_iters)
            truth = np.array([[kz - d / (2 * dz), half, half], [kz + d / (2 * dz), half, half]])
            return _pair_dip(x, truth, scale, max(0.5 * d, 1.5 * dz), threshold_rel)

    else:
        raise ValueError(f"axis must be 'lateral' or 'axial', got {axis!r}")
    if step <= 0:
        raise ValueError("search_step_um must be positive")
    return _scan_separations(evaluate, step, bound, coarse_factor)


def resolution_curve(
    simulator,
    z_list_um,
    *,
    layout_kind,
    lateral_step_um: float = 0.1,
    lateral_max_um: float | None = None,
    axial_z_um=(),
    axial_step_um: float = 1.0,
    axial_max_um: float = 12.0,
    rl_iters: int = 8,
    coarse_factor: int = 5,
) -> tuple[ResolutionCurve, dict]:
    """Lateral (and optionally axial) two-point resolution at each depth.

    Returns the curve and a dict of the per-depth :class:`TwoPointResult`.
    """
    z_list = np.asarray(z_list_um, dtype=float)
    axial_set = {round(float(z), 6) for z in axial_z_um}
    lat = np.empty(len(z_list))
    ax = np.full(len(z_list), np.nan)
    details = {"lateral": [], "axial": []}
    cache = {}
    lat_bound = ax_bound = math.nan
    for i, z in enumerate(z_list):
        r = two_point_resolution(
            simulator, z, "lateral", lateral_step_um, lateral_max_um,
            rl_iters=rl_iters, coarse_factor=coarse_factor, kernel_cache=cache,
        )
        lat[i], lat_bound = r.separation_um, r.bound_um
        details["lateral"].append(r)
        if round(float(z), 6) in axial_set:
            r = two_point_resolution(
                simulator, z, "axial", axial_step_um, axial_max_um,
                rl_iters=rl_iters, coarse_factor=coarse_factor, kernel_cache=cache,
            )
            ax[i], ax_bound = r.separation_um, r.bound_um
            details["axial"].append(r)
    curve = ResolutionCurve(z_list, lat, ax, layout_kind, lat_bound, ax_bound)
    return curve, details


# -- shift invariance -----------------------------------------------------------------


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Normalised inner product; 0 when either argument is all zero."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), 0.0, 1.0))


def _register(reference, moving, upsample_factor):
    """Shift ``moving`` onto ``reference``; returns (registered, shift, ok)."""
    if not np.any(moving) or not np.any(reference):
        return moving, np.zeros(moving.ndim), False
    shift, _, _ = phase_cross_correlation(reference, moving, upsample_factor=upsample_factor)
    shift = np.asarray(shift, dtype=float)
    if not np.all(np.isfinite(shift)):
        return moving, np.zeros(moving.ndim), False
    if not np.any(shift):
        return moving, shift, True
    spec = ndimage.fourier_shift(np.fft.fftn(moving), shift)
    return np.real(np.fft.ifftn(spec)), shift, True


def cosine_similarity_profile(psf_onaxis, psf_offaxis_list, shifts_um, upsample_factor: int = 20) -> SimilarityProfile:
    """Cosine similarity of each off-axis PSF to the on-axis PSF after sub-pixel registration.

    Both kernels are zero padded by half their size before registration so the
    Fourier shift does not wrap content around the borders. A failed
    registration (empty kernel or no correlation peak) scores 0 and is flagged.
    """
    ref = np.asarray(psf_onaxis, dtype=float)
    pad = [(n // 2, n // 2) for n in ref.shape]
    ref_p = np.pad(ref, pad)
    sims, ok, shifts = [], [], []
    for psf in psf_offaxis_list:
        psf = np.asarray(psf, dtype=float)
        if psf.shape != ref.shape:
            raise ValueError(f"kernel shape {psf.shape} differs from the on-axis shape {ref.shape}")
        reg, shift, good = _register(ref_p, np.pad(psf, pad), upsample_factor)
        sims.append(cosine_similarity(ref_p, reg) if good else 0.0)
        ok.append(good)
        shifts.append(shift)
    return SimilarityProfile(
        np.asarray(shifts_um, dtype=float), np.array(sims), np.array(ok), np.array(shifts).reshape(len(sims), -1)
    )


def psnr(recon: np.ndarray, ground_truth: np.ndarray) -> float:
    """``10 log10(max(gt)^2 / MSE)`` in dB; ``math.inf`` for identical arrays."""
    recon = np.asarray(recon, dtype=float)
    gt = np.asarray(ground_truth, dtype=float)
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {gt.shape}")
    mse = float(np.mean((recon - gt) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(float(gt.max()) ** 2 / mse)


# -- spiral phantom -------------------------------------------------------------------


@dataclass
class SpiralPhantom:
    volume: Volume
    centers_um: np.ndarray
    radius_um: float


def _spiral_points(c, theta0, steps):
    pts = [np.array([c * theta0 * math.cos(theta0), c * theta0 * math.sin(theta0)])]
    theta = theta0
    for s in steps:
        p0 = pts[-1]

        def chord(t):
            return math.hypot(c * t * math.cos(t) - p0[0], c * t * math.sin(t) - p0[1]) - s

        hi = theta + 1e-3
        while chord(hi) < 0:
            hi += 0.25
        theta = optimize.brentq(chord, theta, hi, xtol=1e-12)
        pts.append(np.array([c * theta * math.cos(theta), c * theta * math.sin(theta)]))
    return np.array(pts), theta


def spiral_centers(
    n_spheres: int = 39,
    z_first_um: float = 95.0,
    z_step_um: float = 5.0,
    spacing_start_um: float = 3.0,
    spacing_end_um: float = 7.0,
    max_radius_um: float = 23.0,
) -> np.ndarray:
    """Sphere centres ``(x, y, z)`` along an Archimedean spiral.

    Successive centres are ``spacing`` apart laterally, with the spacing growing
    linearly from the inner to the outer end, and step down in depth from
    ``z_first_um``. The spiral pitch is solved so the outermost centre sits at
    ``max_radius_um``.
    """
    if n_spheres < 1:
        raise ValueError("n_spheres must be >= 1")
    z = z_first_um - z_step_um * np.arange(n_spheres)
    if n_spheres == 1:
        return np.array([[0.0, 0.0, z[0]]])
    steps = np.linspace(spacing_start_um, spacing_end_um, n_spheres - 1)
    theta0 = math.pi

    def outer(c):
        pts, _ = _spiral_points(c, theta0, steps)
        return float(np.hypot(*pts[-1])) - max_radius_um

    c = optimize.brentq(outer, 1e-3, max_radius_um / theta0, xtol=1e-10)
    pts, _ = _spiral_points(c, theta0, steps)
    return np.column_stack([pts, z])


def spiral_phantom(
    n_spheres: int = 39,
    sphere_diameter_um: float = 2.0,
    z_first_um: float = 95.0,
    z_step_um: float = 5.0,
    spacing_start_um: float = 3.0,
    spacing_end_um: float = 7.0,
    lateral_extent_um: float = 66.0,
    lateral_pitch_um: float = 2.0 / 6.5,
    z_pitch_um: float = 0.5,
    z_half_range_um: float = 100.0,
    lateral_shape: tuple[int, int] | None = None,
) -> SpiralPhantom:
    """Unit-intensity spheres along a descending spiral, voxelised by a centre-inside test.

    ``lateral_extent_um`` bounds the sphere surfaces, so centres stay within
    ``extent / 2 - radius`` of the axis. Voxel ``(k, j, i)`` sits at
    ``((i - nx//2) * pitch, (j - ny//2) * pitch, z_k)``.
    """
    if min(sphere_diameter_um, lateral_pitch_um, z_pitch_um, lateral_extent_um) <= 0:
        raise ValueError("sizes and pitches must be positive")
    r = sphere_diameter_um / 2.0
    centers = spiral_centers(
        n_spheres, z_first_um, z_step_um, spacing_start_um, spacing_end_um, lateral_extent_um / 2.0 - r
    )
    if lateral_shape is None:
        n = 2 * int(math.ceil(lateral_extent_um / (2 * lateral_pitch_um))) + 1
        lateral_shape = (n, n)
    ny, nx = lateral_shape
    kz = int(round(z_half_range_um / z_pitch_um))
    zs = z_pitch_um * np.arange(-kz, kz + 1)
    xs = (np.arange(nx) - nx // 2) * lateral_pitch_um
    ys = (np.arange(ny) - ny // 2) * lateral_pitch_um
    vol = np.zeros((len(zs), ny, nx))
    for cx, cy, cz in centers:
        zi = np.nonzero(np.abs(zs - cz) <= r + 1e-9)[0]
        yi = np.nonzero(np.abs(ys - cy) <= r + 1e-9)[0]
        xi = np.nonzero(np.abs(xs - cx) <= r + 1e-9)[0]
        if not (len(zi) and len(yi) and len(xi)):
            continue
        d2 = (
            (zs[zi, None, None] - cz) ** 2
            + (ys[None, yi, None] - cy) ** 2
            + (xs[None, None, xi] - cx) ** 2
        )
        block = vol[zi[0] : zi[-1] + 1, yi[0] : yi[-1] + 1, xi[0] : xi[-1] + 1]
        block[d2 <= r * r + 1e-9] = 1.0
    return SpiralPhantom(Volume(vol, lateral_pitch_um, zs), centers, r)


@dataclass
class SphereCount:
    count: int
    resolved: np.ndarray
    matched_peak_um: np.ndarray

    def to_dict(self) -> dict:
        return {
            "count": int(self.count),
            "resolved": self.resolved.astype(bool).tolist(),
            "matched_peak_um": [None if np.any(np.isnan(p)) else p.tolist() for p in self.matched_peak_um],
        }


def count_resolved_spheres(
    recon: Volume,
    phantom: SpiralPhantom,
    threshold_rel: float = 0.1,
    neighbor_radius_um: float = 10.0,
) -> SphereCount:
    """Count spheres recovered as distinct maxima.

    A sphere is resolved when a local maximum of ``recon`` lies within one
    sphere radius of its centre (one-to-one nearest matching) and the profile
    to every other detected maximum within ``neighbor_radius_um`` dips by at
    least 20%.
    """
    arr = np.asarray(recon.intensities, dtype=float)
    nz, ny, nx = arr.shape
    zs = recon.z_positions_um
    pitch = recon.lateral_pitch_um
    peaks = local_maxima(arr, threshold_rel)

    def to_phys(idx):
        idx = np.atleast_2d(idx).astype(float)
        z = np.interp(idx[:, 0], np.arange(nz), zs)
        return np.column_stack([(idx[:, 2] - nx // 2) * pitch, (idx[:, 1] - ny // 2) * pitch, z])

    n = len(phantom.centers_um)
    resolved = np.zeros(n, dtype=bool)
    matched = np.full((n, 3), np.nan)
    if len(peaks) == 0:
        return SphereCount(0, resolved, matched)
    peaks_phys = to_phys(peaks)
    match = _match_one_to_one(np.asarray(phantom.centers_um, dtype=float), peaks_phys, phantom.radius_um + 1e-9)
    for i, j in enumerate(match):
        if j < 0:
            continue
        matched[i] = peaks_phys[j]
        near = np.nonzero(np.linalg.norm(peaks_phys - peaks_phys[j], axis=1) <= neighbor_radius_um)[0]
        resolved[i] = all(dip_between(arr, peaks[j], peaks[m]) >= MIN_DIP for m in near if m != j)
    return SphereCount(int(resolved.sum()), resolved, matched)


# -- field-of-view chart --------------------------------------------------------------


def fov_phantom(extent_um: float, pitch_um: float, pattern: str = "chart") -> np.ndarray:
    """Square test slice spanning ``extent_um``.

    ``"chart"`` holds bar triplets of three widths in both orientations, a
    ring, a filled square and a dot lattice, made symmetric under a 180 degree
    rotation about the centre pixel. ``"uniform"`` is constant.
    """
    if extent_um <= 0 or pitch_um <= 0:
        raise ValueError("extent and pitch must be positive")
    n = 2 * int(round(extent_um / (2 * pitch_um))) + 1
    if pattern == "uniform":
        return np.ones((n, n))
    if pattern != "chart":
        raise ValueError(f"unknown pattern {pattern!r}")
    c = (np.arange(n) - n // 2) / (n - 1)  # normalised coordinate in [-0.5, 0.5]
    yy, xx = np.meshgrid(c, c, indexing="ij")
    img = np.zeros((n, n))

    def rect(x0, x1, y0, y1, value=1.0):
        img[(xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)] = value

    for (gx, gy), width in zip([(-0.42, -0.42), (-0.12, -0.42), (0.18, -0.42)], [0.012, 0.02, 0.032]):
        for b in range(3):
            x0 = gx + 2 * b * width
            rect(x0, x0 + width, gy, gy + 0.2)
            y0 = gy + 0.26 + 2 * b * width
            rect(gx, gx + 0.2, y0, y0 + width, 0.7)
    r = np.hypot(xx + 0.3, yy - 0.3)
    img[(r >= 0.07) & (r < 0.09)] = 0.8
    rect(0.2, 0.32, 0.22, 0.34, 0.5)
    for px in np.linspace(-0.1, 0.1, 5):
        for py in np.linspace(-0.1, 0.1, 5):
            img[np.argmin(np.abs(c - py)), np.argmin(np.abs(c - px))] = 1.0
    return np.maximum(img, img[::-1, ::-1])


def _offset_mask(support: np.ndarray, period_px: int) -> np.ndarray:
    """Union of ``support`` translated by ``+/- period_px`` along y and x (no wrap)."""
    out = np.zeros_like(support)
    p = int(period_px)
    ny, nx = support.shape
    if 0 < p < ny:
        out[p:, :] |= support[: ny - p, :]
        out[: ny - p, :] |= support[p:, :]
    if 0 < p < nx:
        out[:, p:] |= support[:, : nx - p]
        out[:, : nx - p] |= support[:, p:]
    return out


@dataclass
class GhostEnergy:
    """Replica energy at one-period offsets, relative to the signal energy.

    ``raw_fraction`` is all reconstructed energy in the replica region;
    ``excess_fraction`` subtracts the background density measured in a control
    region at half-period offsets, so a uniform noise floor scores zero.
    """

    raw_fraction: float
    excess_fraction: float
    ghost_density: float
    control_density: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def ghost_energy(recon: np.ndarray, phantom: np.ndarray, period_px: int, guard_px: int = 2) -> GhostEnergy:
    """Energy at ``+/- period_px`` replicas of the object support.

    The replica region is the support translated by one period along y and x,
    minus the support dilated by ``guard_px``. The control region is built the
    same way at half a period and excludes the replica region. The signal is
    the reconstructed energy inside the dilated support.
    """
    recon = np.asarray(recon, dtype=float)
    if recon.shape != np.shape(phantom):
        raise ValueError(f"shape mismatch {recon.shape} vs {np.shape(phantom)}")
    support = np.asarray(phantom) > 0.05 * np.max(phantom)
    near = ndimage.binary_dilation(support, iterations=guard_px) if guard_px > 0 else support
    ghost = _offset_mask(support, period_px) & ~near
    control = _offset_mask(support, int(period_px) // 2) & ~near & ~ghost
    signal = float(recon[near].sum())
    g_sum = float(recon[ghost].sum())
    g_den = g_sum / ghost.sum() if ghost.any() else 0.0
    c_den = float(recon[control].mean()) if control.any() else 0.0
    if signal <= 0:
        raw = math.inf if g_sum > 0 else 0.0
        return GhostEnergy(raw, raw, g_den, c_den)
    excess = (g_den - c_den) * ghost.sum() / signal
    return GhostEnergy(g_sum / signal, float(excess), g_den, c_den)


def ghost_energy_fraction(recon: np.ndarray, phantom: np.ndarray, period_px: int, guard_px: int = 2) -> float:
    """Background-corrected replica energy fraction (see :func:`ghost_energy`)."""
    return ghost_energy(recon, phantom, period_px, guard_px).excess_fraction
