"""Reproducing-kernel algebra for velocity fields.

A kernel spec describes the smoothing operator K that turns a momentum
field p into a velocity v = K * p and induces the squared norm
<p, K * p> on the underlying Hilbert space of fields. Four families are
supported and compose recursively:

* ``GaussianKernel(sigma)``     -- separable convolution with the
  unnormalized Gaussian g(r) = exp(-r^2 / (2 sigma^2)), peak value 1,
  truncated at 4 sigma, zero extension outside the domain;
* ``SumKernel(terms)``          -- sum of kernels (multi-scale mixtures);
* ``SymmetrizedKernel(c, inner)`` -- (Id + c * Pi) after `inner`, where Pi
  is the mirror reflection about the vertical grid mid-line; c = 0 is no
  symmetry, c = 1 projects onto exactly mirror-symmetric fields;
* ``PartitionKernel(parts)``    -- sum_i chi_i K_i chi_i for a partition of
  unity chi_i, i.e. spatially-varying regularization.

The peak-1 Gaussian normalization matches the scalar kernel used for
pulson dynamics, so a unit impulse responds with amplitude exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage, signal

from .errors import DegeneratePartitionError, GridMismatchError, NotPSDError
from .grid import Grid2D, Image, Mask, VectorField

# Above this truncation radius (in pixels) the separable convolution runs
# through FFTs; both paths implement the same zero-padded operator.
_DIRECT_RADIUS_MAX = 32


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError("gaussian sigma must be positive")


@dataclass(frozen=True)
class SumKernel:
    terms: tuple

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))
        if not self.terms:
            raise ValueError("sum kernel needs at least one term")


@dataclass(frozen=True)
class SymmetrizedKernel:
    c: float
    inner: "KernelSpec"

    def __post_init__(self):
        if not (0.0 <= self.c <= 1.0):
            raise ValueError("symmetry weight c must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PartitionKernel:
    parts: tuple  # of (weights: Image, inner: KernelSpec)

    def __init__(self, parts):
        parts = tuple((w, k) for w, k in parts)
        if not parts:
            raise ValueError("partition kernel needs at least one part")
        grid = parts[0][0].grid
        total = np.zeros(grid.shape)
        for weights, _ in parts:
            if weights.grid != grid:
                raise GridMismatchError("partition weights live on different grids")
            w = weights.data
            if np.min(w) < -1e-9 or np.max(w) > 1.0 + 1e-9:
                raise ValueError("partition weights must lie in [0, 1]")
            total += w
        if np.max(np.abs(total - 1.0)) > 1e-6:
            raise ValueError("partition weights must sum to 1 at every pixel")
        object.__setattr__(self, "parts", parts)

    @property
    def grid(self):
        return self.parts[0][0].grid


KernelSpec = Union[GaussianKernel, SumKernel, SymmetrizedKernel, PartitionKernel]


# --- reflection -------------------------------------------------------------

def reflect(field: VectorField) -> VectorField:
    """Mirror a field about the vertical grid mid-line.

    out.ux(i, j) = -in.ux(width-1-i, j), out.uy(i, j) = +in.uy(width-1-i, j).
    The index map is exact, so reflect(reflect(v)) == v bitwise.
    """
    return VectorField(field.grid, -field.ux[:, ::-1], field.uy[:, ::-1])


def _reflect_arrays(ux, uy):
    return -ux[:, ::-1], uy[:, ::-1]


# --- Gaussian convolution ----------------------------------------------------

def _gaussian_taps(sigma, spacing):
    radius = int(np.ceil(4.0 * sigma / spacing))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64) * spacing
    return np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))


def gaussian_convolve(data, sigma, spacing):
    """Separable peak-1 Gaussian convolution with zero extension.

    Matches the dense direct sum over all pixel pairs of the truncated,
    grid-sampled kernel; large radii use an FFT evaluation of the same
    operator.
    """
    taps = _gaussian_taps(sigma, spacing)
    radius = (len(taps) - 1) // 2
    if radius <= _DIRECT_RADIUS_MAX:
        tmp = ndimage.correlate1d(data, taps, axis=1, mode="constant", cval=0.0)
        return ndimage.correlate1d(tmp, taps, axis=0, mode="constant", cval=0.0)
    tmp = signal.fftconvolve(data, taps[None, :], mode="same")
    return signal.fftconvolve(tmp, taps[:, None], mode="same")


# --- kernel application -------------------------------------------------------

def apply_kernel(spec: KernelSpec, p: VectorField) -> VectorField:
    """Evaluate v = K * p for a recursive kernel spec."""
    ux, uy = _apply_arrays(spec, p.ux, p.uy, p.grid)
    return VectorField(p.grid, ux, uy)


def apply_kernel_transpose(spec: KernelSpec, p: VectorField) -> VectorField:
    """Evaluate the adjoint K^T * p under the discrete L2 pairing.

    Gaussian, Sum and Partition kernels are self-adjoint by construction;
    for SymmetrizedKernel the adjoint is inner^T (Id + c Pi), which equals
    the kernel itself whenever `inner` commutes with the reflection (true
    for translation-invariant inners such as Gaussians and their sums).
    """
    ux, uy = _apply_arrays_t(spec, p.ux, p.uy, p.grid)
    return VectorField(p.grid, ux, uy)


def _apply_arrays(spec, ux, uy, grid):
    if isinstance(spec, GaussianKernel):
        sp = grid.spacing
        return (gaussian_convolve(ux, spec.sigma, sp),
                gaussian_convolve(uy, spec.sigma, sp))
    if isinstance(spec, SumKernel):
        ax = np.zeros(grid.shape)
        ay = np.zeros(grid.shape)
        for term in spec.terms:
            tx, ty = _apply_arrays(term, ux, uy, grid)
            ax += tx
            ay += ty
        return ax, ay
    if isinstance(spec, SymmetrizedKernel):
        vx, vy = _apply_arrays(spec.inner, ux, uy, grid)
        rx, ry = _reflect_arrays(vx, vy)
        return vx + spec.c * rx, vy + spec.c * ry
    if isinstance(spec, PartitionKernel):
        if spec.grid != grid:
            raise GridMismatchError("partition weights grid differs from field grid")
        ax = np.zeros(grid.shape)
        ay = np.zeros(grid.shape)
        for weights, inner in spec.parts:
            chi = weights.data
            tx, ty = _apply_arrays(inner, chi * ux, chi * uy, grid)
            ax += chi * tx
            ay += chi * ty
        return ax, ay
    raise TypeError(f"not a kernel spec: {spec!r}")


def _apply_arrays_t(spec, ux, uy, grid):
    if isinstance(spec, (GaussianKernel, PartitionKernel)):
        return _apply_arrays(spec, ux, uy, grid)
    if isinstance(spec, SumKernel):
        ax = np.zeros(grid.shape)
        ay = np.zeros(grid.shape)
        for term in spec.terms:
            tx, ty = _apply_arrays_t(term, ux, uy, grid)
            ax += tx
            ay += ty
        return ax, ay
    if isinstance(spec, SymmetrizedKernel):
        rx, ry = _reflect_arrays(ux, uy)
        return _apply_arrays_t(spec.inner, ux + spec.c * rx, uy + spec.c * ry, grid)
    raise TypeError(f"not a kernel spec: {spec!r}")


def l2_inner(a: VectorField, b: VectorField) -> float:
    """Discrete L2 pairing sum(a . b) * spacing^2, fixed summation order."""
    h2 = a.grid.spacing ** 2
    return float((np.sum(a.ux * b.ux) + np.sum(a.uy * b.uy)) * h2)


def vnorm_sq(spec: KernelSpec, p: VectorField) -> float:
    """Squared kernel norm <p, K * p> under the discrete L2 pairing.

    Raises NotPSDError when the value is below -1e-9 * ||p||_{L2}^2, which
    signals a kernel configuration that is not positive semidefinite.
    """
    v = apply_kernel(spec, p)
    val = l2_inner(p, v)
    pl2 = l2_inner(p, p)
    if val < -1e-9 * pl2:
        raise NotPSDError(f"<p, K p> = {val:.3g} < 0: kernel is not PSD")
    return val


# --- partition-of-unity weights ----------------------------------------------

def make_partition_weights(masks, blur_sigma) -> list:
    """Blur binary masks and renormalize them into a partition of unity.

    Each mask is smoothed with a Gaussian of physical width `blur_sigma`
    (0 keeps the indicators), then the stack is divided by its pointwise sum
    so that sum_i chi_i = 1 exactly, and clamped to [0, 1]. Raises
    DegeneratePartitionError when the blurred total is below 1e-6 anywhere.
    """
    if not masks:
        raise ValueError("need at least one mask")
    grid = masks[0].grid
    blurred = []
    for m in masks:
        if m.grid != grid:
            raise GridMismatchError("masks live on different grids")
        if blur_sigma > 0:
            b = ndimage.gaussian_filter(m.data, sigma=blur_sigma / grid.spacing,
                                        mode="nearest")
        else:
            b = m.data.copy()
        blurred.append(b)
    total = np.sum(blurred, axis=0)
    if float(np.min(total)) < 1e-6:
        raise DegeneratePartitionError("blurred masks nearly vanish at some pixel")
    return [Image(grid, np.clip(b / total, 0.0, 1.0)) for b in blurred]
