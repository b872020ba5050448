"""Grids, images, vector fields, deformations: the discrete substrate.

Conventions used everywhere in the package:

* arrays are float64 with shape (height, width), indexed [row, col];
* the column index i maps to physical x = i * spacing, the row index j to
  physical y = j * spacing, so pixel centers span the domain
  [0, (width-1) * spacing] x [0, (height-1) * spacing];
* vector fields extend by zero outside the domain (vanishing boundary),
  image intensities clamp to the nearest edge value;
* deformations are stored as displacement fields, phi(x) = x + disp(x),
  so the identity is exactly representable.

All operations are pure; reductions use numpy's fixed summation order, so
results do not depend on threading.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _ops
from .errors import GridMismatchError, NonConvergentError


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular pixel grid with physical spacing."""

    width: int
    height: int
    spacing: float = 1.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        if not (self.spacing > 0):
            raise ValueError("spacing must be positive")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def extent(self):
        """Physical size (x_extent, y_extent) spanned by pixel centers."""
        return ((self.width - 1) * self.spacing, (self.height - 1) * self.spacing)

    def coords(self):
        """Physical coordinate meshgrids (X, Y), each (height, width)."""
        return _phys_coords(self.width, self.height, self.spacing)

    def index_coords(self):
        """Index coordinate meshgrids (columns, rows) as float64."""
        return _index_coords(self.width, self.height)


@lru_cache(maxsize=32)
def _index_coords(width, height):
    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    ii.setflags(write=False)
    jj.setflags(write=False)
    return ii, jj


@lru_cache(maxsize=32)
def _phys_coords(width, height, spacing):
    ii, jj = _index_coords(width, height)
    X = ii * spacing
    Y = jj * spacing
    X.setflags(write=False)
    Y.setflags(write=False)
    return X, Y


def _as_field_array(grid, data, name):
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != grid.shape:
        raise GridMismatchError(f"{name} has shape {arr.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


class Image:
    """Scalar intensity samples on a grid."""

    def __init__(self, grid: Grid2D, data):
        self.grid = grid
        self.data = _as_field_array(grid, data, "image data")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    def copy(self):
        return Image(self.grid, self.data.copy())


class VectorField:
    """Two-component field on a grid (velocity, momentum or displacement)."""

    def __init__(self, grid: Grid2D, ux, uy):
        self.grid = grid
        self.ux = _as_field_array(grid, ux, "ux")
        self.uy = _as_field_array(grid, uy, "uy")

    @classmethod
    def zeros(cls, grid):
        z = np.zeros(grid.shape)
        return cls(grid, z, z.copy())

    def max_abs(self):
        """Largest |component| over the grid."""
        return max(float(np.max(np.abs(self.ux))), float(np.max(np.abs(self.uy))))

    def scaled(self, a):
        return VectorField(self.grid, a * self.ux, a * self.uy)

    def copy(self):
        return VectorField(self.grid, self.ux.copy(), self.uy.copy())


class Mask:
    """Binary per-pixel mask; samples are exactly 0 or 1."""

    def __init__(self, grid: Grid2D, data):
        arr = _as_field_array(grid, data, "mask data")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError("mask values must be exactly 0 or 1")
        self.grid = grid
        self.data = arr

    @classmethod
    def ones(cls, grid):
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def complement(self):
        return Mask(self.grid, 1.0 - self.data)

    def count(self):
        return int(np.sum(self.data))


class Deformation:
    """Map phi(x) = x + disp(x) stored by its displacement field."""

    def __init__(self, disp: VectorField):
        self.grid = disp.grid
        self.disp = disp

    @classmethod
    def identity(cls, grid):
        return cls(VectorField.zeros(grid))

    def is_identity(self):
        return not (np.any(self.disp.ux) or np.any(self.disp.uy))

    def points(self):
        """Physical target coordinates phi(x) at every pixel center."""
        X, Y = self.grid.coords()
        return X + self.disp.ux, Y + self.disp.uy

    def is_valid(self):
        """True when the Jacobian determinant is positive everywhere."""
        return float(np.min(jacobian_determinant(self).data)) > 0.0


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


# --- sampling ---------------------------------------------------------------

def bilinear_sample(obj, x, y):
    """Sample an Image or VectorField at physical coordinates.

    Images clamp to the nearest edge value outside the domain; vector
    fields extend by zero (values ramp to zero within one pixel outside the
    hull of pixel centers and are exactly zero beyond). Accepts scalars or
    arrays; returns value(s) for an Image, an (sx, sy) pair for a field.
    """
    sp = obj.grid.spacing
    px = np.asarray(x, dtype=np.float64) / sp
    py = np.asarray(y, dtype=np.float64) / sp
    scalar = px.ndim == 0
    if scalar:
        px = px[None]
        py = py[None]
    if isinstance(obj, VectorField):
        sx, sy = _ops.gather_zero((obj.ux, obj.uy), px, py)
        if scalar:
            return float(sx[0]), float(sy[0])
        return sx, sy
    vals = _ops.gather_clamped(obj.data, px, py)
    return float(vals[0]) if scalar else vals


def spatial_gradient(img: Image) -> VectorField:
    """Per-pixel intensity gradient (central differences, one-sided at edges)."""
    dy, dx = np.gradient(img.data, img.grid.spacing)
    return VectorField(img.grid, dx, dy)


def warp_image(img: Image, phi_inv: Deformation) -> Image:
    """Pull an image back through a deformation: out(x) = img(phi_inv(x))."""
    _require_same_grid(img, phi_inv)
    tx, ty = phi_inv.points()
    sp = img.grid.spacing
    data = _ops.gather_clamped(img.data, tx / sp, ty / sp)
    return Image(img.grid, data)


def compose(phi: Deformation, psi: Deformation) -> Deformation:
    """Composition phi(psi(x)), sampling phi's displacement with zero extension."""
    _require_same_grid(phi, psi)
    tx, ty = psi.points()
    sp = phi.grid.spacing
    ax, ay = _ops.gather_zero((phi.disp.ux, phi.disp.uy), tx / sp, ty / sp)
    return Deformation(VectorField(phi.grid, psi.disp.ux + ax, psi.disp.uy + ay))


def invert(phi: Deformation, max_iter: int = 60, tol: float | None = None) -> Deformation:
    """Numerical inverse by fixed-point iteration.

    Iterates disp_inv <- -disp(x + disp_inv(x)) until the largest pixel
    update drops below `tol` (default spacing / 100) or `max_iter` is hit;
    returns the iterate with the smallest update. Raises NonConvergentError
    when the final update is still above 10 * tol.
    """
    grid = phi.grid
    sp = grid.spacing
    if tol is None:
        tol = 0.01 * sp
    bx, by = grid.index_coords()
    dx = np.zeros(grid.shape)
    dy = np.zeros(grid.shape)
    fx, fy = phi.disp.ux, phi.disp.uy
    best = (np.inf, dx, dy)
    update = np.inf
    for _ in range(max_iter):
        sx, sy = _ops.gather_zero((fx, fy), bx + dx / sp, by + dy / sp)
        nx, ny = -sx, -sy
        update = max(float(np.max(np.abs(nx - dx))), float(np.max(np.abs(ny - dy))))
        dx, dy = nx, ny
        if update < best[0]:
            best = (update, dx, dy)
        if update < tol:
            break
    if best[0] > 10.0 * tol:
        raise NonConvergentError(
            f"inversion stalled: last update {best[0]:.3g} > 10*tol = {10 * tol:.3g}")
    return Deformation(VectorField(grid, best[1], best[2]))


def jacobian_determinant(phi: Deformation) -> Image:
    """det(I + grad disp) via central differences (one-sided at edges)."""
    sp = phi.grid.spacing
    ux_y, ux_x = np.gradient(phi.disp.ux, sp)
    uy_y, uy_x = np.gradient(phi.disp.uy, sp)
    det = (1.0 + ux_x) * (1.0 + uy_y) - ux_y * uy_x
    return Image(phi.grid, det)
