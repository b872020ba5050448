"""Low-level bilinear gather/scatter primitives and semi-Lagrangian steps.

Everything here works on raw float64 arrays in index coordinates
(column index = x / spacing, row index = y / spacing). The public,
grid-aware wrappers live in :mod:`diffeo2d.grid` and :mod:`diffeo2d.flows`.

Each gather has a hand-written vector-Jacobian product so the matching
module can backpropagate exactly through the discrete objective. The
adjoints treat the zero-extension / clamping validity masks as constants,
which is correct away from the (measure-zero) cell boundaries.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class GatherCache(NamedTuple):
    """Geometry and corner values saved by a cached gather."""

    shape: tuple          # (h, w) of the source arrays
    idx00: np.ndarray     # raveled corner indices, clipped into range
    idx01: np.ndarray
    idx10: np.ndarray
    idx11: np.ndarray
    v00: np.ndarray       # corner validity masks (float 0/1)
    v01: np.ndarray
    v10: np.ndarray
    v11: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    corners: tuple        # per-channel (f00, f01, f10, f11), zero-extended
    interior: np.ndarray | None  # clamp mode: 1 where the point was not clamped


def _corner_geometry(px, py, h, w):
    i0 = np.floor(px)
    j0 = np.floor(py)
    tx = px - i0
    ty = py - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)
    i1 = i0 + 1
    j1 = j0 + 1

    def clip_ravel(jj, ii):
        valid = ((ii >= 0) & (ii < w) & (jj >= 0) & (jj < h)).astype(np.float64)
        idx = np.clip(jj, 0, h - 1) * w + np.clip(ii, 0, w - 1)
        return idx, valid

    idx00, v00 = clip_ravel(j0, i0)
    idx01, v01 = clip_ravel(j0, i1)
    idx10, v10 = clip_ravel(j1, i0)
    idx11, v11 = clip_ravel(j1, i1)
    return idx00, idx01, idx10, idx11, v00, v01, v10, v11, tx, ty


def gather_zero(channels, px, py, cache=False):
    """Bilinear sample with virtual zero padding outside the array.

    channels: tuple of (h, w) arrays sharing one grid.
    px, py:   sample positions in index coordinates, any common shape.
    Returns one sampled array per channel (plus a GatherCache if requested).
    """
    h, w = channels[0].shape
    idx00, idx01, idx10, idx11, v00, v01, v10, v11, tx, ty = _corner_geometry(px, py, h, w)
    w00 = (1.0 - tx) * (1.0 - ty)
    w01 = tx * (1.0 - ty)
    w10 = (1.0 - tx) * ty
    w11 = tx * ty

    outs = []
    corner_vals = []
    for data in channels:
        flat = data.ravel()
        f00 = flat[idx00] * v00
        f01 = flat[idx01] * v01
        f10 = flat[idx10] * v10
        f11 = flat[idx11] * v11
        outs.append(f00 * w00 + f01 * w01 + f10 * w10 + f11 * w11)
        if cache:
            corner_vals.append((f00, f01, f10, f11))
    if not cache:
        return tuple(outs)
    cc = GatherCache((h, w), idx00, idx01, idx10, idx11,
                     v00, v01, v10, v11, tx, ty, tuple(corner_vals), None)
    return tuple(outs), cc


def gather_clamped(data, px, py, cache=False):
    """Bilinear sample with edge clamping (image intensities).

    Points outside the pixel hull are moved to the nearest edge before
    interpolation, so the result is the nearest-edge value there.
    """
    h, w = data.shape
    pxc = np.clip(px, 0.0, float(w - 1))
    pyc = np.clip(py, 0.0, float(h - 1))
    i0 = np.clip(np.floor(pxc).astype(np.int64), 0, w - 2)
    j0 = np.clip(np.floor(pyc).astype(np.int64), 0, h - 2)
    tx = pxc - i0
    ty = pyc - j0
    idx00 = j0 * w + i0
    idx01 = idx00 + 1
    idx10 = idx00 + w
    idx11 = idx10 + 1
    flat = data.ravel()
    f00 = flat[idx00]
    f01 = flat[idx01]
    f10 = flat[idx10]
    f11 = flat[idx11]
    out = (f00 * (1.0 - tx) * (1.0 - ty) + f01 * tx * (1.0 - ty)
           + f10 * (1.0 - tx) * ty + f11 * tx * ty)
    if not cache:
        return out
    one = np.ones_like(tx)
    interior = ((px > 0.0) & (px < w - 1) & (py > 0.0) & (py < h - 1)).astype(np.float64)
    cc = GatherCache((h, w), idx00, idx01, idx10, idx11,
                     one, one, one, one, tx, ty, ((f00, f01, f10, f11),), interior)
    return out, cc


def gather_point_vjp(cache, cotangents):
    """d(sample)/d(px, py) contracted with per-channel cotangents.

    Returns (gpx, gpy) in index units. For clamped gathers the gradient is
    zeroed where the clamp was active.
    """
    gpx = np.zeros_like(cache.tx)
    gpy = np.zeros_like(cache.ty)
    for (f00, f01, f10, f11), cot in zip(cache.corners, cotangents):
        dvx = (f01 - f00) * (1.0 - cache.ty) + (f11 - f10) * cache.ty
        dvy = (f10 - f00) * (1.0 - cache.tx) + (f11 - f01) * cache.tx
        gpx += cot * dvx
        gpy += cot * dvy
    if cache.interior is not None:
        gpx *= cache.interior
        gpy *= cache.interior
    return gpx, gpy


def gather_data_vjp(cache, cotangents):
    """Adjoint of the gather w.r.t. the source arrays (bilinear scatter)."""
    h, w = cache.shape
    n = h * w
    w00 = (1.0 - cache.tx) * (1.0 - cache.ty)
    w01 = cache.tx * (1.0 - cache.ty)
    w10 = (1.0 - cache.tx) * cache.ty
    w11 = cache.tx * cache.ty
    grads = []
    for cot in cotangents:
        acc = np.bincount(cache.idx00.ravel(), weights=(cot * w00 * cache.v00).ravel(), minlength=n)
        acc += np.bincount(cache.idx01.ravel(), weights=(cot * w01 * cache.v01).ravel(), minlength=n)
        acc += np.bincount(cache.idx10.ravel(), weights=(cot * w10 * cache.v10).ravel(), minlength=n)
        acc += np.bincount(cache.idx11.ravel(), weights=(cot * w11 * cache.v11).ravel(), minlength=n)
        grads.append(acc.reshape(h, w))
    return grads


# --- semi-Lagrangian displacement update -----------------------------------

class StepTape(NamedTuple):
    """Caches recorded by one taped displacement step (for the adjoint)."""

    stepper: str
    dt: float
    spacing: float
    cache1: GatherCache
    cache2: GatherCache | None


def advance_displacement(dispx, dispy, fx, fy, base_px, base_py, dt, spacing,
                         stepper="rk2", tape=None):
    """Advance particles x + disp(x) one time step through field (fx, fy).

    disp and the field are in physical units; base_px/base_py are the pixel
    index grids. The field is sampled with zero extension. `stepper` is
    "euler" or "rk2" (midpoint). If `tape` is a list, a StepTape is appended
    so the step can be differentiated later.
    """
    px = base_px + dispx / spacing
    py = base_py + dispy / spacing
    want = tape is not None
    if stepper == "euler":
        if want:
            (ax, ay), c1 = gather_zero((fx, fy), px, py, cache=True)
            tape.append(StepTape("euler", dt, spacing, c1, None))
        else:
            ax, ay = gather_zero((fx, fy), px, py)
        return dispx + dt * ax, dispy + dt * ay
    if stepper != "rk2":
        raise ValueError(f"unknown stepper {stepper!r}")
    if want:
        (a1x, a1y), c1 = gather_zero((fx, fy), px, py, cache=True)
    else:
        a1x, a1y = gather_zero((fx, fy), px, py)
    half = 0.5 * dt / spacing
    mx = px + half * a1x
    my = py + half * a1y
    if want:
        (a2x, a2y), c2 = gather_zero((fx, fy), mx, my, cache=True)
        tape.append(StepTape("rk2", dt, spacing, c1, c2))
    else:
        a2x, a2y = gather_zero((fx, fy), mx, my)
    return dispx + dt * a2x, dispy + dt * a2y


def advance_displacement_vjp(entry: StepTape, g_newx, g_newy):
    """Adjoint of one advance_displacement step.

    Given cotangents of the updated displacement, returns cotangents of the
    incoming displacement and of the velocity field arrays.
    """
    dt, sp = entry.dt, entry.spacing
    if entry.stepper == "euler":
        gpx, gpy = gather_point_vjp(entry.cache1, (dt * g_newx, dt * g_newy))
        gfx, gfy = gather_data_vjp(entry.cache1, (dt * g_newx, dt * g_newy))
        g_dispx = g_newx + gpx / sp
        g_dispy = g_newy + gpy / sp
        return g_dispx, g_dispy, gfx, gfy
    # rk2: new = disp + dt * a2,  a2 = F(mid),  mid = p + (dt/2sp) * a1,  a1 = F(p)
    ga2x = dt * g_newx
    ga2y = dt * g_newy
    gmx, gmy = gather_point_vjp(entry.cache2, (ga2x, ga2y))
    gfx2, gfy2 = gather_data_vjp(entry.cache2, (ga2x, ga2y))
    half = 0.5 * dt / sp
    ga1x = half * gmx
    ga1y = half * gmy
    gpx1, gpy1 = gather_point_vjp(entry.cache1, (ga1x, ga1y))
    gfx1, gfy1 = gather_data_vjp(entry.cache1, (ga1x, ga1y))
    gpx = gmx + gpx1
    gpy = gmy + gpy1
    g_dispx = g_newx + gpx / sp
    g_dispy = g_newy + gpy / sp
    return g_dispx, g_dispy, gfx1 + gfx2, gfy1 + gfy2
