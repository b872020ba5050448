"""Singular (pulson / landmark) geodesic dynamics in the plane.

A pulson state is N point positions Q_a with momenta P_a evolving under the
scalar-kernel Hamiltonian

    H(Q, P) = sum_{a,b} (P_a . P_b) k(Q_a, Q_b),      k(q, q') peak-1 Gaussian.

Two sign conventions of the canonical equations are provided:

* `rhs_right`: Qdot_a = sum_b P_b k(Q_a, Q_b),
               Pdot_a = -sum_b (P_a . P_b) dk/dQ_a --
  the usual landmark dynamics of the right-invariant geodesic equation;
* `rhs_left`:  the same equations with both signs flipped. Left dynamics
  are the time reversal of right dynamics, and the left Q_a(t) is read in
  body coordinates (an "anti-particle" track), not as a spatial position.

Trajectories are integrated with the classical 4th-order Runge-Kutta
scheme; conservation (H and total momentum) is monitored, not enforced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError


@dataclass(frozen=True)
class PulsonState:
    """Positions Q (N, 2) and momenta P (N, 2)."""

    Q: np.ndarray
    P: np.ndarray

    def __init__(self, Q, P):
        Q = np.array(Q, dtype=np.float64)
        P = np.array(P, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q[None, :]
        if P.ndim == 1:
            P = P[None, :]
        if Q.shape != P.shape or Q.ndim != 2 or Q.shape[1] != 2:
            raise ValueError("Q and P must both have shape (N, 2)")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
            raise NonFiniteError("pulson state has non-finite coordinates")
        Q.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)

    @property
    def n(self):
        return self.Q.shape[0]


@dataclass(frozen=True)
class GaussianScalarKernel:
    """k(q, q') = exp(-|q - q'|^2 / (2 sigma^2)); k(q, q) = 1, grad at 0 is 0."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")

    def matrix(self, Q):
        diff = Q[:, None, :] - Q[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        return np.exp(-r2 / (2.0 * self.sigma ** 2)), diff


def hamiltonian(state: PulsonState, kernel: GaussianScalarKernel) -> float:
    """Double sum over all ordered pairs, fixed summation order."""
    kmat, _ = kernel.matrix(state.Q)
    pp = state.P @ state.P.T
    return float(np.sum(pp * kmat))


def total_momentum(state: PulsonState) -> np.ndarray:
    """Sum of all momenta; conserved under both dynamics."""
    return np.sum(state.P, axis=0)


def _rhs_arrays(Q, P, kernel):
    kmat, diff = kernel.matrix(Q)
    qdot = kmat @ P
    # dk/dQ_a (Q_a, Q_b) = -(Q_a - Q_b) / sigma^2 * k, so
    # Pdot_a = -sum_b (P_a.P_b) dk/dQ_a = sum_b (P_a.P_b) k diff / sigma^2
    pp = P @ P.T
    w = pp * kmat / kernel.sigma ** 2
    pdot = np.sum(w[:, :, None] * diff, axis=1)
    return qdot, pdot


def rhs_right(state: PulsonState, kernel: GaussianScalarKernel):
    """Time derivative (Qdot, Pdot) of the right-invariant dynamics."""
    return _rhs_arrays(state.Q, state.P, kernel)


def rhs_left(state: PulsonState, kernel: GaussianScalarKernel):
    """Left-invariant dynamics: the exact negation of rhs_right."""
    qdot, pdot = _rhs_arrays(state.Q, state.P, kernel)
    return -qdot, -pdot


def shoot(state: PulsonState, kernel: GaussianScalarKernel, side: str,
          T: float, n_steps: int):
    """Integrate the chosen dynamics over duration T with classical RK4.

    Returns the n_steps + 1 visited states. `side` is "left" or "right";
    T may be negative (reversed-time integration). Raises NonFiniteError
    if the state blows up.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    sign = 1.0 if side == "right" else -1.0
    dt = T / n_steps
    Q = state.Q.copy()
    P = state.P.copy()
    out = [state]
    for _ in range(n_steps):
        k1q, k1p = _rhs_arrays(Q, P, kernel)
        k2q, k2p = _rhs_arrays(Q + (dt / 2.0) * (sign * k1q), P + (dt / 2.0) * (sign * k1p), kernel)
        k3q, k3p = _rhs_arrays(Q + (dt / 2.0) * (sign * k2q), P + (dt / 2.0) * (sign * k2p), kernel)
        k4q, k4p = _rhs_arrays(Q + dt * (sign * k3q), P + dt * (sign * k3p), kernel)
        Q = Q + (dt / 6.0) * (sign * k1q + 2.0 * (sign * k2q) + 2.0 * (sign * k3q) + sign * k4q)
        P = P + (dt / 6.0) * (sign * k1p + 2.0 * (sign * k2p) + 2.0 * (sign * k3p) + sign * k4p)
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
            raise NonFiniteError("pulson trajectory became non-finite")
        out.append(PulsonState(Q, P))
    return out


def hamiltonian_drift(states, kernel) -> float:
    """Max relative |H(t) - H(0)| / |H(0)| along a trajectory."""
    h0 = hamiltonian(states[0], kernel)
    if h0 == 0.0:
        return max(abs(hamiltonian(s, kernel)) for s in states)
    return max(abs(hamiltonian(s, kernel) - h0) for s in states) / abs(h0)


def write_trajectory_csv(path, states, kernel, T):
    """CSV rows (t, a, Qx, Qy, Px, Py, H), one per pulson per time sample."""
    n_steps = len(states) - 1
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "a", "Qx", "Qy", "Px", "Py", "H"])
        for i, s in enumerate(states):
            t = T * i / n_steps
            h = hamiltonian(s, kernel)
            for a in range(s.n):
                w.writerow([repr(t), a,
                            repr(s.Q[a, 0]), repr(s.Q[a, 1]),
                            repr(s.P[a, 0]), repr(s.P[a, 1]), repr(h)])
