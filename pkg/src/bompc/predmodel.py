"""Linear prediction model decoded from the search vector theta.

Only ``A`` and ``B`` are searched; ``C = [I | 0]`` and ``D = 0`` are fixed,
which removes the similarity-transform redundancy of a full state-space
parameterization. ``theta`` packs ``A`` then ``B``, both row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NoConvergence
from .numerics import dare_steady_kalman


@dataclass(frozen=True)
class ModelDims:
    n_z: int = 2
    n_u: int = 3
    n_y: int = 2

    def __post_init__(self):
        if min(self.n_z, self.n_u, self.n_y) < 1:
            raise ValueError("model dimensions must be positive")
        if self.n_z < self.n_y:
            raise DimensionMismatch("n_z must be >= n_y for C = [I | 0]")

    @property
    def theta_dim(self) -> int:
        return self.n_z * self.n_z + self.n_z * self.n_u


@dataclass(frozen=True)
class ThetaSpace:
    """Box search space over theta."""

    dims: ModelDims = field(default_factory=ModelDims)
    a_bound: float = 1.2
    b_bound: float = 0.5

    @property
    def lower(self) -> np.ndarray:
        return -self._half_width()

    @property
    def upper(self) -> np.ndarray:
        return self._half_width()

    @property
    def bounds(self) -> np.ndarray:
        """(dim, 2) array of [low, high] per coordinate."""
        return np.column_stack([self.lower, self.upper])

    def _half_width(self) -> np.ndarray:
        na = self.dims.n_z * self.dims.n_z
        nb = self.dims.n_z * self.dims.n_u
        return np.concatenate([np.full(na, self.a_bound), np.full(nb, self.b_bound)])

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return theta.shape == (self.dims.theta_dim,) and bool(
            np.all(theta >= self.lower) and np.all(theta <= self.upper)
        )


def output_matrix(dims: ModelDims) -> np.ndarray:
    return np.hstack([np.eye(dims.n_y), np.zeros((dims.n_y, dims.n_z - dims.n_y))])


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"spectral_radius needs a square matrix, got {m.shape}")
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


@dataclass
class PredictionModel:
    """``z+ = a z + b u``, ``y = c z + d u`` with a predictor-form observer.

    ``z`` is the observer's one-step-ahead estimate and is the state the MPC
    plans from. It persists across :meth:`observer_update` calls.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    observer_gain: np.ndarray
    z: np.ndarray = None

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.d = np.atleast_2d(np.asarray(self.d, dtype=float))
        self.observer_gain = np.atleast_2d(np.asarray(self.observer_gain, dtype=float))
        n_z = self.a.shape[0]
        n_u = self.b.shape[1]
        n_y = self.c.shape[0]
        expected = {
            "a": (n_z, n_z),
            "b": (n_z, n_u),
            "c": (n_y, n_z),
            "d": (n_y, n_u),
            "observer_gain": (n_z, n_y),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        self.z = np.zeros(n_z) if self.z is None else np.asarray(self.z, dtype=float).copy()

    @classmethod
    def from_matrices(cls, a, b, c, d=None, gain=None) -> "PredictionModel":
        """Build a model from explicit matrices; the observer gain defaults to the steady Kalman gain."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        c = np.atleast_2d(np.asarray(c, dtype=float))
        if d is None:
            d = np.zeros((c.shape[0], b.shape[1]))
        if gain is None:
            gain = kalman_gain_or_zero(a, c)
        return cls(a, b, c, d, gain)

    @property
    def n_z(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    @property
    def n_y(self) -> int:
        return self.c.shape[0]

    def reset(self):
        self.z = np.zeros(self.n_z)

    def observer_update(self, u, y_meas) -> "PredictionModel":
        """One predictor-form observer step; mutates and returns ``self``."""
        u = np.asarray(u, dtype=float)
        innovation = np.asarray(y_meas, dtype=float) - self.c @ self.z - self.d @ u
        self.z = self.a @ self.z + self.b @ u + self.observer_gain @ innovation
        return self

    def rollout(self, u_seq) -> np.ndarray:
        """Outputs ``y_0 .. y_{T-1}`` for inputs ``u_0 .. u_{T-1}`` from the stored state.

        The stored state is left untouched.
        """
        u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
        z = self.z.copy()
        ys = np.empty((u_seq.shape[0], self.n_y))
        for t, u in enumerate(u_seq):
            ys[t] = self.c @ z + self.d @ u
            z = self.a @ z + self.b @ u
        return ys

    def observer_matrix(self) -> np.ndarray:
        return self.a - self.observer_gain @ self.c


def kalman_gain_or_zero(a, c) -> np.ndarray:
    """Steady Kalman predictor gain with identity covariances, or zero if the Riccati iteration fails."""
    n_z = a.shape[0]
    n_y = c.shape[0]
    try:
        return dare_steady_kalman(a, c, np.eye(n_z), np.eye(n_y))
    except (NoConvergence, np.linalg.LinAlgError):
        return np.zeros((n_z, n_y))


def decode_theta(theta, dims: ModelDims = ModelDims()) -> PredictionModel:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dims.theta_dim,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({dims.theta_dim},)")
    na = dims.n_z * dims.n_z
    a = theta[:na].reshape(dims.n_z, dims.n_z)
    b = theta[na:].reshape(dims.n_z, dims.n_u)
    c = output_matrix(dims)
    d = np.zeros((dims.n_y, dims.n_u))
    return PredictionModel(a, b, c, d, kalman_gain_or_zero(a, c))


def encode_theta(model: PredictionModel) -> np.ndarray:
    """Inverse of :func:`decode_theta` (reads the A and B entries back)."""
    return np.concatenate([model.a.ravel(), model.b.ravel()])
