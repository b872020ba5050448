"""Time integration of diffeomorphism paths and path energies.

Velocity paths are piecewise constant in time: N fields v_k acting on
[k/N, (k+1)/N) with dt = 1/N. Two constraints are supported:

* spatial (Eulerian):    d/dt phi = v o phi      -> integrate_spatial
* convective (body):     d/dt phi = d(phi) . v   -> integrate_convective

The convective flow is computed through its characterization by the
inverse map, d/dt phi^{-1} = -v o phi^{-1}, which is the stable
characteristics form; integrate_inverse integrates exactly that equation.

correspond_left_right maps a path phi(t) to psi(t) = phi(1) o phi^{-1}(1-t),
whose convective (left) velocity sequence is the time-reversed spatial
(right) sequence of phi. The two paths share endpoints, and their discrete
energies are permutations of the same summands.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _ops
from .errors import GridMismatchError, MissingMomentaError, ResidualTooLargeError
from .grid import Deformation, VectorField, compose, invert
from .kernels import apply_kernel, l2_inner


@dataclass(frozen=True)
class VelocityPath:
    """N >= 1 vector fields on one grid, piecewise constant in time."""

    steps: tuple

    def __init__(self, steps):
        steps = tuple(steps)
        if not steps:
            raise ValueError("velocity path needs at least one step")
        grid = steps[0].grid
        for s in steps:
            if s.grid != grid:
                raise GridMismatchError("velocity steps live on different grids")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def dt(self):
        return 1.0 / len(self.steps)

    @property
    def grid(self):
        return self.steps[0].grid

    def reversed(self):
        return VelocityPath(tuple(reversed(self.steps)))


@dataclass(frozen=True)
class DeformationPath:
    """N+1 deformation snapshots phi(t_k), t_k = k/N, starting at identity."""

    snapshots: tuple

    def __init__(self, snapshots):
        snapshots = tuple(snapshots)
        if len(snapshots) < 2:
            raise ValueError("deformation path needs at least 2 snapshots")
        grid = snapshots[0].grid
        for s in snapshots:
            if s.grid != grid:
                raise GridMismatchError("snapshots live on different grids")
        if not snapshots[0].is_identity():
            raise ValueError("deformation paths must start at the identity")
        object.__setattr__(self, "snapshots", snapshots)

    def __len__(self):
        return len(self.snapshots)

    @property
    def n_steps(self):
        return len(self.snapshots) - 1

    @property
    def grid(self):
        return self.snapshots[0].grid

    def endpoint(self):
        return self.snapshots[-1]


def _warn_cfl(v: VelocityPath):
    dt = v.dt
    sp = v.grid.spacing
    worst = max(s.max_abs() for s in v.steps)
    if worst * dt > 0.5 * sp:
        warnings.warn(
            f"per-step motion {worst * dt / sp:.2f} px exceeds half a pixel; "
            "integration accuracy may degrade", RuntimeWarning, stacklevel=3)


def _integrate(v: VelocityPath, sign: float, stepper: str) -> DeformationPath:
    grid = v.grid
    bx, by = grid.index_coords()
    dt = v.dt
    sp = grid.spacing
    dx = np.zeros(grid.shape)
    dy = np.zeros(grid.shape)
    snaps = [Deformation.identity(grid)]
    for field in v.steps:
        dx, dy = _ops.advance_displacement(
            dx, dy, sign * field.ux, sign * field.uy, bx, by, dt, sp, stepper)
        snaps.append(Deformation(VectorField(grid, dx, dy)))
    return DeformationPath(snaps)


def integrate_spatial(v: VelocityPath, stepper: str = "rk2") -> DeformationPath:
    """Flow of the spatial-velocity constraint d/dt phi = v(t) o phi."""
    _warn_cfl(v)
    return _integrate(v, +1.0, stepper)


def integrate_inverse(v: VelocityPath, stepper: str = "rk2") -> DeformationPath:
    """Forward integration of d/dt psi = -v(t) o psi with psi(0) = id.

    This is the inverse flow of the convective constraint: inverting its
    snapshots yields the path driven by d/dt phi = d(phi) . v.
    """
    _warn_cfl(v)
    return _integrate(v, -1.0, stepper)


def integrate_convective(v: VelocityPath, stepper: str = "rk2",
                         inv_max_iter: int = 120, inv_tol: float | None = None
                         ) -> DeformationPath:
    """Flow of the convective constraint, via its inverse characteristics."""
    eta = integrate_inverse(v, stepper)
    if inv_tol is None:
        inv_tol = 1e-3 * v.grid.spacing
    snaps = [Deformation.identity(v.grid)]
    for s in eta.snapshots[1:]:
        snaps.append(invert(s, max_iter=inv_max_iter, tol=inv_tol))
    return DeformationPath(snaps)


def correspond_left_right(phi: DeformationPath, inv_max_iter: int = 120,
                          inv_tol: float | None = None) -> DeformationPath:
    """Build psi_k = phi_N o phi_{N-k}^{-1}, the companion geodesic path.

    The path traverses the same endpoint through the group the other way
    round: its convective velocity sequence is the time-reversed spatial
    sequence of `phi`, so right-geodesics map to left-geodesics and energies
    are preserved summand by summand. psi_0 is snapped to the exact identity
    after its residual is verified; a residual above half a pixel raises
    ResidualTooLargeError.
    """
    grid = phi.grid
    sp = grid.spacing
    if inv_tol is None:
        inv_tol = 1e-3 * sp
    n = phi.n_steps
    end = phi.snapshots[n]
    snaps = [None] * (n + 1)
    snaps[n] = end
    for k in range(n):
        inv_k = invert(phi.snapshots[n - k], max_iter=inv_max_iter, tol=inv_tol)
        snaps[k] = compose(end, inv_k)
    residual = snaps[0].disp.max_abs()
    if residual > 0.5 * sp:
        raise ResidualTooLargeError(
            f"|phi_N o phi_N^{{-1}} - id| = {residual / sp:.3f} px > 0.5 px")
    if residual > 0.1 * sp:
        warnings.warn(
            f"correspondence residual {residual / sp:.3f} px above 0.1 px; "
            "snapping start to identity anyway", RuntimeWarning, stacklevel=2)
    snaps[0] = Deformation.identity(grid)
    return DeformationPath(snaps)


# --- energies ----------------------------------------------------------------

def step_energies(v: VelocityPath, spec, momenta, check_consistency=False):
    """Per-step energies (dt/2) <p_k, v_k>_{L2} of a momentum-driven path."""
    if momenta is None:
        raise MissingMomentaError(
            "path energy needs the momenta generating the velocities; "
            "inverting the kernel is not supported")
    if len(momenta) != len(v):
        raise ValueError("momenta and velocity step counts differ")
    dt = v.dt
    out = []
    for p, vel in zip(momenta, v.steps):
        if check_consistency:
            kv = apply_kernel(spec, p)
            num = max(np.max(np.abs(kv.ux - vel.ux)), np.max(np.abs(kv.uy - vel.uy)))
            den = max(kv.max_abs(), 1e-300)
            if num / den > 1e-6:
                raise ValueError("velocity step is not kernel * momentum")
        out.append(0.5 * dt * l2_inner(p, vel))
    return out


def path_energy(v: VelocityPath, spec, momenta, check_consistency=False) -> float:
    """Total energy 1/2 int ||v||_V^2 dt of a piecewise-constant path.

    Summed with math.fsum, so any permutation of the same step energies
    (e.g. the time-reversed companion path) gives a bitwise-equal total.
    """
    return math.fsum(step_energies(v, spec, momenta, check_consistency))


def path_length(v: VelocityPath, spec, momenta) -> float:
    """Metric length sqrt(2 E) of the path."""
    return math.sqrt(2.0 * path_energy(v, spec, momenta))
