"""Volume reconstruction from a single 2D measurement.

Two solvers share the :class:`~diffuserscope.forward.ConvOperator` model:

* :func:`richardson_lucy`, multiplicative EM updates normalised by ``H^T 1``;
* :func:`admm_tv`, ADMM for
  ``min 1/2 ||y - H x||^2 + tau ||diag(gamma) grad x||_1  s.t. x >= 0``.

ADMM runs on the zero-padded circular domain of the linear convolution. The
measurement crop is part of the data split, the object support is enforced by
the non-negativity split, and lateral gradient terms that touch the padding
carry zero weight. The penalised TV therefore equals the replicate-boundary TV
of the object grid. Along ``z`` the gradient uses a replicate boundary that is
diagonalised by a type-II DCT.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .forward import ConvOperator, Measurement, Volume
from .wavesim import PSFStack

__all__ = [
    "TVWeights",
    "SolverConfig",
    "ReconResult",
    "gradient_op",
    "gradient_adjoint",
    "tv_norm",
    "soft_threshold",
    "poisson_log_likelihood",
    "richardson_lucy",
    "richardson_lucy_operator",
    "admm_tv",
    "admm_tv_operator",
    "least_squares_objective",
]


@dataclass(frozen=True)
class TVWeights:
    """Weights ``(gamma_xy, gamma_xy, gamma_z)`` of the gradient components."""

    gamma_xy: float = 1.0
    gamma_z: float = 1.0

    def __post_init__(self):
        if self.gamma_xy < 0 or self.gamma_z < 0:
            raise ValueError("TV weights must be non-negative")

    @property
    def vector(self) -> tuple[float, float, float]:
        return (self.gamma_z, self.gamma_xy, self.gamma_xy)


@dataclass(frozen=True)
class SolverConfig:
    """ADMM settings.

    Attributes
    ----------
    tau : float
        Sparsity weight, applied to a measurement scaled to unit maximum.
    max_iters : int
    tolerance : float
        Stop when the relative objective change falls below this value.
    admm_rho : float
        Penalty parameter for the problem with the convolution operator scaled
        to unit spectral norm. The default converges fastest on weakly
        regularized problems; for ``tau`` of order 0.1 and above, 0.1 or more
        avoids small late oscillations of the objective.
    tv_weights : TVWeights
    nonneg_flag : bool
        Always true; kept for completeness of the configuration record.
    residual_balancing : bool
        Adapt ``rho`` to keep primal and dual residuals within a factor of 10.
    burn_in : int
        Iterations before the stopping rule is checked.
    precision : {"float64", "float32"}
    """

    tau: float = 1e-5
    max_iters: int = 200
    tolerance: float = 1e-6
    admm_rho: float = 0.03
    tv_weights: TVWeights = field(default_factory=TVWeights)
    nonneg_flag: bool = True
    residual_balancing: bool = False
    burn_in: int = 5
    precision: str = "float64"

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.admm_rho > 0:
            raise ValueError("admm_rho must be positive")
        if not self.nonneg_flag:
            raise ValueError("only the non-negative problem is supported")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")
        if isinstance(self.tv_weights, dict):
            object.__setattr__(self, "tv_weights", TVWeights(**self.tv_weights))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ReconResult:
    volume: Volume
    status: str
    iterations: int
    telemetry: list = field(default_factory=list)


# -- gradient -------------------------------------------------------------------------


def _fdiff(x, axis):
    d = np.zeros_like(x)
    n = x.shape[axis]
    if n > 1:
        hi = [slice(None)] * x.ndim
        lo = [slice(None)] * x.ndim
        hi[axis] = slice(1, n)
        lo[axis] = slice(0, n - 1)
        d[tuple(lo)] = x[tuple(hi)] - x[tuple(lo)]
    return d


def _fdiff_adjoint(g, axis):
    n = g.shape[axis]
    out = np.zeros_like(g)
    if n > 1:
        gl = np.moveaxis(g, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[0] = -gl[0]
        o[1:-1] = gl[:-2] - gl[1:-1]
        o[-1] = gl[-2]
    return out


def gradient_op(vol, weights: TVWeights = TVWeights()) -> np.ndarray:
    """Weighted forward differences ``(gz, gy, gx)`` with a replicate boundary.

    Returns an array of shape ``(3,) + vol.shape``. The last difference along
    each axis is zero, and an axis with a single sample has zero gradient.
    """
    x = vol.intensities if isinstance(vol, Volume) else np.asarray(vol)
    w = weights.vector
    return np.stack([w[a] * _fdiff(x, a) for a in range(3)])


def gradient_adjoint(grad: np.ndarray, weights: TVWeights = TVWeights()) -> np.ndarray:
    """Exact adjoint of :func:`gradient_op` (a weighted negative divergence)."""
    w = weights.vector
    return sum(w[a] * _fdiff_adjoint(grad[a], a) for a in range(3))


def tv_norm(x: np.ndarray, weights: TVWeights = TVWeights()) -> float:
    return float(np.sum(np.abs(gradient_op(x, weights))))


def soft_threshold(v, t):
    """Proximal map of ``t |.|``: ``sign(v) max(|v| - t, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# -- Richardson-Lucy ------------------------------------------------------------------


def poisson_log_likelihood(y: np.ndarray, model: np.ndarray, eps: float = 0.0) -> float:
    """``sum(y log(Hx) - Hx)`` with ``0 log 0 = 0``."""
    m = np.maximum(model, eps) if eps > 0 else model
    pos = y > 0
    return float(np.sum(y[pos] * np.log(m[pos])) - np.sum(model))


def richardson_lucy_operator(y: np.ndarray, op: ConvOperator, iters: int, *, callback=None):
    """Richardson-Lucy on raw arrays.

    Returns ``(x, status)`` with ``status`` ``"ok"`` or ``"zero_measurement"``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    y = np.asarray(y, dtype=op.dtype)
    if np.any(y < 0):
        raise ValueError("measurement must be non-negative")
    ymax = float(y.max()) if y.size else 0.0
    if ymax <= 0:
        warnings.warn("all-zero measurement; returning a zero volume", RuntimeWarning, stacklevel=2)
        return np.zeros(op.input_shape, dtype=op.dtype), "zero_measurement"
    eps = 1e-12 * ymax
    norm = op.adjoint_ones()
    live = norm > 1e-12 * norm.max()
    inv_norm = np.where(live, 1.0 / np.where(live, norm, 1.0), 0.0)
    total = float(np.sum(op.forward(np.ones(op.input_shape, dtype=op.dtype))))
    x = np.where(live, float(y.sum()) / total, 0.0).astype(op.dtype)
    for k in range(iters):
        model = op.forward(x)
        ratio = y / np.maximum(model, eps)
        x = x * op.adjoint(ratio) * inv_norm
        np.maximum(x, 0.0, out=x)
        if callback is not None:
            callback(k, x)
    return x, "ok"


def richardson_lucy(meas: Measurement, psfs: PSFStack, iters: int, object_shape=None, workers=None) -> ReconResult:
    """Multi-depth Richardson-Lucy deconvolution from a uniform start.

    Parameters
    ----------
    meas : Measurement
    psfs : PSFStack
    iters : int
        Number of multiplicative updates, at least 1.
    object_shape : tuple of int, optional
        Lateral shape of the reconstruction; defaults to the sensor shape.
    """
    object_shape = object_shape or meas.image.shape
    op = ConvOperator(psfs.kernels, object_shape, meas.image.shape, workers=workers)
    x, status = richardson_lucy_operator(meas.image, op, iters)
    pitch = psfs.object_pitch_um if psfs.object_pitch_um is not None else psfs.sensor_pitch_um
    return ReconResult(Volume(x, pitch, psfs.z_positions_um), status, iters if status == "ok" else 0)


# -- ADMM -----------------------------------------------------------------------------


def least_squares_objective(y, op: ConvOperator, x, tau=0.0, weights=TVWeights()) -> float:
    r = op.forward(x) - y
    val = 0.5 * float(np.sum(r.astype(np.float64) ** 2))
    if tau:
        val += tau * tv_norm(x.astype(np.float64), weights)
    return val


def _lateral_laplacian_eigs(shape, dtype):
    py, px = shape
    ly = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(py) / py)
    lx = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(px // 2 + 1) / px)
    return (ly[:, None] + lx[None, :]).astype(dtype)


def _axial_laplacian_eigs(nz, dtype):
    return (2.0 - 2.0 * np.cos(np.pi * np.arange(nz) / nz)).astype(dtype)


def _psi_into(x, out):
    """Replicate-z, circular-lateral forward differences of ``x`` written into ``out``."""
    gz, gy, gx = out
    np.subtract(x[1:], x[:-1], out=gz[:-1])
    gz[-1] = 0.0
    np.subtract(x[:, 1:], x[:, :-1], out=gy[:, :-1])
    np.subtract(x[:, :1], x[:, -1:], out=gy[:, -1:])
    np.subtract(x[:, :, 1:], x[:, :, :-1], out=gx[:, :, :-1])
    np.subtract(x[:, :, :1], x[:, :, -1:], out=gx[:, :, -1:])
    return out


def _psi_t_into(g, out):
    """Adjoint of :func:`_psi_into`."""
    gz, gy, gx = g
    out[...] = 0.0
    if out.shape[0] > 1:
        out[0] = -gz[0]
        np.subtract(gz[:-2], gz[1:-1], out=out[1:-1])
        out[-1] = gz[-2]
    out[:, 1:] += gy[:, :-1]
    out[:, :1] += gy[:, -1:]
    out -= gy
    out[:, :, 1:] += gx[:, :, :-1]
    out[:, :, :1] += gx[:, :, -1:]
    out -= gx
    return out


class _ADMMState:
    """Pre-factorised x-update ``(H^T H + Psi^T Psi + I)^-1`` on the padded domain."""

    def __init__(self, op: ConvOperator, weights: TVWeights, rdtype):
        self.op = op
        self.rdtype = np.dtype(rdtype)
        self.cdtype = np.result_type(self.rdtype, np.complex64)
        self.nz = op.nz
        self.pad = op.pad_shape
        self.ny, self.nx = op.object_shape
        self.weights = weights
        h = op.kernel_spectra
        # unit spectral norm balances the data split against the gradient and identity splits
        self.sigma = float(np.sqrt(np.max(np.sum(np.abs(h) ** 2, axis=0))))
        if not self.sigma > 0:
            raise ValueError("all kernels are zero")
        self.h = (h / self.sigma).astype(self.cdtype)
        self.h_conj = np.conj(self.h)
        # orthonormal DCT-II along z as a small matrix; faster than a transform call for short stacks
        self.dct = sfft.dct(np.eye(self.nz), type=2, axis=0, norm="ortho").astype(self.rdtype)
        lat = _lateral_laplacian_eigs(self.pad, self.rdtype)
        ax = _axial_laplacian_eigs(self.nz, self.rdtype)
        self.a_inv = (1.0 / (1.0 + lat[None] + ax[:, None, None])).astype(self.rdtype)
        self.g = self._solve_a(self.h_conj.copy())
        self.s = np.einsum("zij,zij->ij", self.h, self.g).real.astype(self.rdtype)
        self.sm = (1.0 / (1.0 + self.s)).astype(self.rdtype)
        support = np.zeros((self.nz,) + self.pad, dtype=bool)
        support[:, : self.ny, : self.nx] = True
        self.support = support
        # lateral differences count only inside the object grid
        wy = np.zeros(self.pad, dtype=self.rdtype)
        wy[: self.ny - 1, : self.nx] = 1.0
        wx = np.zeros(self.pad, dtype=self.rdtype)
        wx[: self.ny, : self.nx - 1] = 1.0
        wz = np.zeros((self.nz,) + self.pad, dtype=self.rdtype)
        wz[:, : self.ny, : self.nx] = 1.0
        self.tv_weight = np.stack(
            [weights.gamma_z * wz, np.broadcast_to(weights.gamma_xy * wy, wz.shape), np.broadcast_to(weights.gamma_xy * wx, wz.shape)]
        )
        oy, ox = op.offset
        sy, sx = op.sensor_shape
        self.crop = (slice(oy, oy + sy), slice(ox, ox + sx))
        self.observed = np.zeros(self.pad, dtype=self.rdtype)
        self.observed[self.crop] = 1.0

    def _ztransform(self, m, r):
        flat = r.reshape(self.nz, -1)
        if np.iscomplexobj(flat):
            flat = flat.view(self.rdtype)
        out = (m @ flat).view(r.dtype) if np.iscomplexobj(r) else m @ flat
        return out.reshape(r.shape)

    def _solve_a(self, r):
        # r: (nz, py, px//2+1) lateral spectrum; DCT-II along z diagonalises the axial Laplacian
        t = self._ztransform(self.dct, r)
        t *= self.a_inv
        return self._ztransform(self.dct.T, t)

    def solve(self, rf):
        t = self._solve_a(rf)
        ht = np.einsum("zij,zij->ij", self.h, t)
        ht *= self.sm
        t -= self.g * ht[None]
        return t

    def rfft(self, a):
        return sfft.rfft2(a, workers=self.op.workers)

    def irfft(self, a):
        return sfft.irfft2(a, s=self.pad, workers=self.op.workers)

    def H(self, xf):
        return self.irfft(np.einsum("zij,zij->ij", self.h, xf))

    def Ht(self, v):
        return self.irfft(self.h_conj * self.rfft(v)[None])

    @staticmethod
    def psi(x):
        return _psi_into(x, np.empty((3,) + x.shape, dtype=x.dtype))

    @staticmethod
    def psi_t(g):
        return _psi_t_into(g, np.empty(g.shape[1:], dtype=g.dtype))

    def objective(self, y, w, tau_t):
        """Data misfit plus weighted TV of the support-restricted iterate ``w``."""
        hx = self.H(self.rfft(w))
        r = hx[self.crop] - y
        val = 0.5 * float(np.sum(np.square(r, dtype=np.float64)))
        if tau_t:
            val += tau_t * tv_norm(w[:, : self.ny, : self.nx].astype(np.float64), self.weights)
        return val


def _sumsq(a) -> float:
    flat = a.reshape(-1)
    return float(np.dot(flat, flat))


def admm_tv_operator(y: np.ndarray, op: ConvOperator, config: SolverConfig, *, callback=None):
    """ADMM on raw arrays.

    ``y`` is used as given (no rescaling). Returns ``(x, status, telemetry)``.
    ``x`` is the feasible (non-negative, supported) iterate with the lowest
    objective. ``status`` is ``"converged"``, ``"max_iters"`` or
    ``"zero_measurement"``.
    """
    rdtype = np.float32 if config.precision == "float32" else np.float64
    st = _ADMMState(op, config.tv_weights, rdtype)
    y = np.asarray(y, dtype=rdtype)
    nz, pad = st.nz, st.pad
    cty = np.zeros(pad, dtype=rdtype)
    cty[st.crop] = y
    rho = float(config.admm_rho)
    tau = float(config.tau)
    # the solver works in x_tilde = sigma * x so that the scaled operator has unit norm
    tau_t = tau / st.sigma

    v = np.zeros(pad, dtype=rdtype)
    u = np.zeros((3, nz) + pad, dtype=rdtype)
    w = np.zeros((nz,) + pad, dtype=rdtype)
    lv, lu, lw = np.zeros_like(v), np.zeros_like(u), np.zeros_like(w)
    gbuf = np.empty_like(u)
    tbuf = np.empty_like(u)
    rhs = np.empty_like(w)
    thresh = None

    telemetry = []
    best_val, best_w = math.inf, w.copy()
    prev = None
    status = "max_iters"
    for k in range(config.max_iters):
        np.subtract(u, lu, out=gbuf)
        _psi_t_into(gbuf, rhs)
        rhs += w
        rhs -= lw
        rf = st.rfft(rhs)
        rf += st.h_conj * st.rfft(v - lv)[None]
        xf = st.solve(rf)
        x = st.irfft(xf)
        hx = st.H(xf)
        _psi_into(x, gbuf)

        # data split
        v_new = (cty + rho * (hx + lv)) / (st.observed + rho)
        dv = _sumsq(v_new - v)
        v = v_new
        rv = hx - v
        lv += rv

        # gradient split: tbuf holds psi(x) + lu, then the new u
        np.add(gbuf, lu, out=tbuf)
        if tau:
            if thresh is None or thresh[0] != rho:
                thresh = (rho, (tau_t / rho) * st.tv_weight)
            mag = np.abs(tbuf)
            mag -= thresh[1]
            np.maximum(mag, 0.0, out=mag)
            np.copysign(mag, tbuf, out=tbuf)
            del mag
        np.subtract(tbuf, u, out=u)
        du = _sumsq(u)
        u, tbuf = tbuf, u
        gbuf -= u
        lu += gbuf
        ru = _sumsq(gbuf)

        # non-negativity and support split
        w_new = x + lw
        np.maximum(w_new, 0.0, out=w_new)
        w_new *= st.support
        dw = _sumsq(w_new - w)
        w = w_new
        rw = x - w
        lw += rw

        primal = math.sqrt(_sumsq(rv) + ru + _sumsq(rw))
        dual = rho * math.sqrt(dv + du + dw)
        val = st.objective(y, w, tau_t)
        telemetry.append({"iter": k + 1, "objective": val, "primal_residual": primal, "dual_residual": dual, "rho": rho})
        if callback is not None:
            callback(k, w)
        if val < best_val:
            best_val, best_w = val, w.copy()
        if prev is not None and k + 1 > config.burn_in:
            if abs(prev - val) <= config.tolerance * max(abs(val), np.finfo(float).tiny):
                status = "converged"
                break
        prev = val
        if config.residual_balancing:
            scale = 1.0
            if primal > 10.0 * dual:
                scale = 2.0
            elif dual > 10.0 * primal:
                scale = 0.5
            if scale != 1.0:
                rho *= scale
                lv /= scale
                lu /= scale
                lw /= scale
    x_out = (best_w[:, : st.ny, : st.nx] / st.sigma).astype(op.dtype)
    return x_out, status, telemetry


def admm_tv(
    meas: Measurement,
    psfs: PSFStack,
    config: SolverConfig = SolverConfig(),
    object_shape=None,
    workers=None,
    callback=None,
) -> ReconResult:
    """Non-negative weighted-TV reconstruction by ADMM.

    The measurement is scaled to unit maximum before solving so ``tau`` does not
    depend on the photon scale; the returned volume is scaled back. A
    non-converged run returns its best iterate with status ``"max_iters"``.
    """
    object_shape = object_shape or meas.image.shape
    pitch = psfs.object_pitch_um if psfs.object_pitch_um is not None else psfs.sensor_pitch_um
    rdtype = np.float32 if config.precision == "float32" else np.float64
    op = ConvOperator(psfs.kernels, object_shape, meas.image.shape, dtype=rdtype, workers=workers)
    scale = float(np.max(meas.image))
    if scale <= 0:
        warnings.warn("all-zero measurement; returning a zero volume", RuntimeWarning, stacklevel=2)
        return ReconResult(Volume(np.zeros(op.input_shape), pitch, psfs.z_positions_um), "zero_measurement", 0)
    x, status, telemetry = admm_tv_operator(meas.image / scale, op, config, callback=callback)
    x = np.maximum(x.astype(np.float64) * scale, 0.0)
    return ReconResult(Volume(x, pitch, psfs.z_positions_um), status, len(telemetry), telemetry)
