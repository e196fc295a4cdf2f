"""Surrogate cable-driven soft robot and linear test plants.

The soft robot is reduced to two planar bending modes ``q`` (tip
displacement in m) with hardening (Duffing) stiffness and viscous damping:

    mass * q'' = -stiffness * q - cubic_stiffness * q**3 - damping * q' + cable_matrix @ u

Three cables sit at 0, 120 and 240 degrees around the rod, so equal
tensions cancel. The tip position is measured with additive white noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatch, NonFiniteState

_S3 = math.sqrt(3.0) / 2.0
# Exact literals so that equal tensions cancel bit-exactly.
CABLE_DIRECTIONS = np.array([[1.0, -0.5, -0.5], [0.0, _S3, -_S3]])


def cable_matrix(lever: float) -> np.ndarray:
    """2x3 map from cable tensions (N) to modal forces (N)."""
    return lever * CABLE_DIRECTIONS


def cable_force(lever: float, u) -> np.ndarray:
    """``cable_matrix(lever) @ u`` grouped so that equal tensions cancel exactly."""
    u0, u1, u2 = (float(v) for v in u)
    return np.array([lever * (u0 - 0.5 * (u1 + u2)), lever * _S3 * (u1 - u2)])


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray

    @classmethod
    def rest(cls) -> "PlantState":
        return cls(np.zeros(2), np.zeros(2))

    @classmethod
    def at(cls, q, qdot=(0.0, 0.0)) -> "PlantState":
        return cls(np.array(q, dtype=float), np.array(qdot, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_vector(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float)
        return cls(x[:2].copy(), x[2:].copy())


@dataclass(frozen=True)
class SoftRodPlant:
    """Parameters of the two-mode surrogate rod.

    ``lever`` scales the unit cable directions into ``cable_matrix``.
    """

    mass: float = 0.17
    stiffness: float = 40.0
    cubic_stiffness: float = 4.0e4
    damping: float = 0.1
    lever: float = 10.0
    noise_std: float = 0.01
    substeps: int = 50

    def __post_init__(self):
        if self.mass <= 0 or self.stiffness <= 0:
            raise ValueError("mass and stiffness must be positive")
        if self.cubic_stiffness < 0 or self.damping < 0 or self.noise_std < 0:
            raise ValueError("cubic_stiffness, damping and noise_std must be non-negative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def cable_matrix(self) -> np.ndarray:
        return cable_matrix(self.lever)

    def energy(self, s: PlantState) -> float:
        """Kinetic plus elastic energy (J)."""
        return float(
            0.5 * self.mass * s.qdot @ s.qdot
            + 0.5 * self.stiffness * s.q @ s.q
            + 0.25 * self.cubic_stiffness * np.sum(s.q**4)
        )


def _rk4(p: SoftRodPlant, x: np.ndarray, force: np.ndarray, h: float, n: int) -> np.ndarray:
    # scalar arithmetic: numpy call overhead dominates on a 4-vector
    inv_m = 1.0 / p.mass
    k, k3, c = p.stiffness, p.cubic_stiffness, p.damping
    f1, f2 = float(force[0]), float(force[1])
    q1, q2, v1, v2 = (float(e) for e in x)
    h2 = 0.5 * h
    h6 = h / 6.0

    def acc(q, v, f):
        return (f - k * q - k3 * q * q * q - c * v) * inv_m

    for _ in range(n):
        a1 = acc(q1, v1, f1)
        b1 = acc(q2, v2, f2)
        a2 = acc(q1 + h2 * v1, v1 + h2 * a1, f1)
        b2 = acc(q2 + h2 * v2, v2 + h2 * b1, f2)
        v1b, v2b = v1 + h2 * a1, v2 + h2 * b1
        a3 = acc(q1 + h2 * v1b, v1 + h2 * a2, f1)
        b3 = acc(q2 + h2 * v2b, v2 + h2 * b2, f2)
        v1c, v2c = v1 + h2 * a2, v2 + h2 * b2
        a4 = acc(q1 + h * v1c, v1 + h * a3, f1)
        b4 = acc(q2 + h * v2c, v2 + h * b3, f2)
        v1d, v2d = v1 + h * a3, v2 + h * b3
        q1 += h6 * (v1 + 2.0 * v1b + 2.0 * v1c + v1d)
        q2 += h6 * (v2 + 2.0 * v2b + 2.0 * v2c + v2d)
        v1 += h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        v2 += h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return np.array([q1, q2, v1, v2])


def plant_step(p: SoftRodPlant, s: PlantState, u, dt: float) -> PlantState:
    """Advance the rod by one control period with ``u`` held constant."""
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise DimensionMismatch(f"expected 3 cable tensions, got shape {u.shape}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    force = cable_force(p.lever, u)
    x = _rk4(p, s.as_vector(), force, dt / p.substeps, p.substeps)
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("plant state diverged")
    return PlantState.from_vector(x)


def plant_output(p: SoftRodPlant, s: PlantState, rng: np.random.Generator | None = None) -> np.ndarray:
    """Measured tip position ``q + noise``."""
    if p.noise_std == 0.0 or rng is None:
        return s.q.copy()
    return s.q + p.noise_std * rng.standard_normal(2)


@dataclass
class PlantSim:
    """Stateful episode wrapper around :class:`SoftRodPlant`."""

    params: SoftRodPlant
    dt: float = 0.05
    seed: int | None = 0
    state: PlantState = field(default_factory=PlantState.rest)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def reset(self, q0=(0.0, 0.0), seed: int | None = None):
        self.state = PlantState.at(q0)
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)

    def step(self, u) -> PlantState:
        self.state = plant_step(self.params, self.state, u, self.dt)
        return self.state

    def measure(self) -> np.ndarray:
        return plant_output(self.params, self.state, self.rng)

    @property
    def position(self) -> np.ndarray:
        return self.state.q.copy()


def continuous_linearization(p: SoftRodPlant) -> tuple[np.ndarray, np.ndarray]:
    """(A_c, B_c) of the rod about rest, state ordered (q, qdot)."""
    a = np.zeros((4, 4))
    a[:2, 2:] = np.eye(2)
    a[2:, :2] = -p.stiffness / p.mass * np.eye(2)
    a[2:, 2:] = -p.damping / p.mass * np.eye(2)
    b = np.zeros((4, 3))
    b[2:, :] = p.cable_matrix / p.mass
    return a, b


def linearize(p: SoftRodPlant, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-order-hold discretization of the rod about rest.

    Returns ``(A, B, C)`` with ``C = [I | 0]`` picking the positions.
    """
    ac, bc = continuous_linearization(p)
    aug = np.zeros((7, 7))
    aug[:4, :4] = ac
    aug[:4, 4:] = bc
    phi = expm(aug * dt)
    c = np.hstack([np.eye(2), np.zeros((2, 2))])
    return phi[:4, :4], phi[:4, 4:], c


@dataclass
class LinearPlant:
    """Discrete-time ``x+ = A x + B u``, ``y = C x + noise`` test plant."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    noise_std: float = 0.0
    seed: int | None = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.x = np.zeros(self.a.shape[0])
        self.rng = np.random.default_rng(self.seed)

    def reset(self, x0=None):
        self.x = np.zeros(self.a.shape[0]) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.rng = np.random.default_rng(self.seed)

    def step(self, u):
        self.x = self.a @ self.x + self.b @ np.asarray(u, dtype=float)
        return self.x

    def measure(self) -> np.ndarray:
        y = self.c @ self.x
        if self.noise_std > 0:
            y = y + self.noise_std * self.rng.standard_normal(y.shape)
        return y

    @property
    def position(self) -> np.ndarray:
        return self.c @ self.x
