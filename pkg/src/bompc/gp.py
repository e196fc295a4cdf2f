"""Gaussian-process regression with an ARD squared-exponential kernel.

Inputs are mapped to the unit box and targets standardized before any
kernel algebra; :func:`predict` undoes the target scaling, so callers only
ever see raw parameter vectors and cost units. The prior mean is zero in
standardized units, i.e. the training-target mean in cost units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, NotPositiveDefinite
from .numerics import CholeskyFactor, cholesky_jittered, cholesky_solve

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-10
ACTIVE_SET_SIZE = 300

# log-space search box, in standardized / unit-box units
_LOG_SIGNAL_BOUNDS = (math.log(1e-2), math.log(1e2))
_LOG_LENGTH_BOUNDS = (math.log(1e-2), math.log(1e2))
_LOG_NOISE_BOUNDS = (math.log(NOISE_FLOOR), math.log(10.0))


@dataclass(frozen=True)
class GpHyperparams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 1e-6

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "noise_variance", max(float(self.noise_variance), NOISE_FLOOR))
        if self.signal_variance <= 0 or np.any(ls <= 0):
            raise ValueError("signal variance and lengthscales must be positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def to_log(self) -> np.ndarray:
        return np.concatenate(
            [[math.log(self.signal_variance)], np.log(self.lengthscales), [math.log(self.noise_variance)]]
        )

    @classmethod
    def from_log(cls, v) -> "GpHyperparams":
        v = np.asarray(v, dtype=float)
        return cls(float(np.exp(v[0])), np.exp(v[1:-1]), float(np.exp(v[-1])))

    def as_dict(self) -> dict:
        return {
            "signal_variance": self.signal_variance,
            "lengthscales": self.lengthscales.tolist(),
            "noise_variance": self.noise_variance,
        }


def kernel(x1, x2, h: GpHyperparams) -> float:
    """Squared-exponential covariance of two points."""
    d = (np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) / h.lengthscales
    return float(h.signal_variance * np.exp(-0.5 * d @ d))


def kernel_matrix(x1, x2, h: GpHyperparams) -> np.ndarray:
    x1 = np.atleast_2d(x1) / h.lengthscales
    x2 = np.atleast_2d(x2) / h.lengthscales
    sq = (
        np.sum(x1 * x1, axis=1)[:, None]
        + np.sum(x2 * x2, axis=1)[None, :]
        - 2.0 * x1 @ x2.T
    )
    return h.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def _factor(x, h: GpHyperparams) -> tuple[CholeskyFactor, float]:
    k = kernel_matrix(x, x, h)
    k[np.diag_indices_from(k)] += h.noise_variance
    return cholesky_jittered(k)


def log_marginal_likelihood(x, y, h: GpHyperparams) -> float:
    """``log p(y | x, h)`` for a zero-mean GP (data already normalized)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    f, _ = _factor(x, h)
    alpha = cholesky_solve(f, y)
    n = y.shape[0]
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(f.lower))) - 0.5 * n * math.log(2 * math.pi))


def _neg_lml_and_grad(logp: np.ndarray, x: np.ndarray, y: np.ndarray, sqdiff: np.ndarray):
    """Negative log marginal likelihood and its gradient in log-hyperparameters.

    ``sqdiff[d]`` holds the pairwise squared differences of coordinate ``d``.
    """
    sv = math.exp(logp[0])
    ls2 = np.exp(2.0 * logp[1:-1])
    nv = math.exp(logp[-1])
    scaled = np.tensordot(1.0 / ls2, sqdiff, axes=1)
    kf = sv * np.exp(-0.5 * scaled)
    k = kf.copy()
    k[np.diag_indices_from(k)] += nv
    try:
        f, _ = cholesky_jittered(k)
    except NotPositiveDefinite:
        return 1e25, np.zeros_like(logp)
    n = y.shape[0]
    alpha = cholesky_solve(f, y)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(f.lower))) + 0.5 * n * math.log(2 * math.pi)

    kinv = cholesky_solve(f, np.eye(n))
    inner = np.outer(alpha, alpha) - kinv
    grad = np.empty_like(logp)
    grad[0] = 0.5 * np.sum(inner * kf)
    weighted = inner * kf
    grad[1:-1] = 0.5 * np.tensordot(sqdiff, weighted, axes=([1, 2], [0, 1])) / ls2
    grad[-1] = 0.5 * nv * np.trace(inner)
    return float(nll), -grad


@dataclass(frozen=True)
class GpModel:
    """Fitted GP posterior; immutable once built."""

    x_lower: np.ndarray
    x_upper: np.ndarray
    train_inputs: np.ndarray
    train_targets: np.ndarray
    y_mean: float
    y_std: float
    hyper: GpHyperparams
    chol: CholeskyFactor
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    def normalize(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.x_lower) / (self.x_upper - self.x_lower)

    def log_marginal_likelihood(self) -> float:
        n = self.n_train
        return float(
            -0.5 * self.train_targets @ self.alpha
            - np.sum(np.log(np.diag(self.chol.lower)))
            - 0.5 * n * math.log(2 * math.pi)
        )


def _prepare(inputs, targets, bounds, active_set_size):
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise DimensionMismatch(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
    if x.shape[0] > active_set_size:
        x = x[-active_set_size:]
        y = y[-active_set_size:]
    if bounds is None:
        lower, upper = np.zeros(x.shape[1]), np.ones(x.shape[1])
    else:
        bounds = np.asarray(bounds, dtype=float)
        lower, upper = bounds[:, 0].copy(), bounds[:, 1].copy()
    if lower.shape[0] != x.shape[1]:
        raise DimensionMismatch("bounds do not match input dimension")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if not np.isfinite(y_std) or y_std < 1e-12:
        y_std = 1.0
    xn = (x - lower) / (upper - lower)
    yn = (y - y_mean) / y_std
    return lower, upper, xn, yn, y_mean, y_std


def build_model(inputs, targets, hyper: GpHyperparams, bounds=None, active_set_size: int = ACTIVE_SET_SIZE) -> GpModel:
    """Condition a GP with fixed hyperparameters on data.

    ``bounds`` is a (dim, 2) array mapping inputs to the unit box; ``None``
    means the inputs already live there.
    """
    lower, upper, xn, yn, y_mean, y_std = _prepare(inputs, targets, bounds, active_set_size)
    if hyper.dim != xn.shape[1]:
        raise DimensionMismatch("hyperparameter dimension does not match inputs")
    f, jitter = _factor(xn, hyper)
    return GpModel(lower, upper, xn, yn, y_mean, y_std, hyper, f, cholesky_solve(f, yn), jitter)


def fit(
    inputs,
    targets,
    bounds=None,
    restarts: int = 8,
    seed: int = 0,
    max_iter: int = 200,
    active_set_size: int = ACTIVE_SET_SIZE,
) -> GpModel:
    """Maximum-likelihood GP fit with multistart L-BFGS-B in log space."""
    lower, upper, xn, yn, y_mean, y_std = _prepare(inputs, targets, bounds, active_set_size)
    dim = xn.shape[1]
    diff = xn[:, None, :] - xn[None, :, :]
    sqdiff = np.moveaxis(diff * diff, -1, 0)
    box = [_LOG_SIGNAL_BOUNDS] + [_LOG_LENGTH_BOUNDS] * dim + [_LOG_NOISE_BOUNDS]
    rng = np.random.default_rng(seed)

    best = None
    for _ in range(max(1, restarts)):
        start = np.concatenate(
            [
                [rng.uniform(math.log(0.3), math.log(3.0))],
                rng.uniform(math.log(0.05), math.log(2.0), dim),
                [rng.uniform(math.log(1e-6), math.log(0.3))],
            ]
        )
        res = minimize(
            _neg_lml_and_grad,
            start,
            args=(xn, yn, sqdiff),
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": max_iter, "ftol": 1e-9, "gtol": 1e-6},
        )
        if not np.isfinite(res.fun) or res.fun >= 1e25:
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NotPositiveDefinite("every hyperparameter restart failed to factorize")

    hyper = GpHyperparams.from_log(best.x)
    f, jitter = _factor(xn, hyper)
    log.debug("gp fit: nll=%.4g hyper=%s", best.fun, hyper.as_dict())
    return GpModel(lower, upper, xn, yn, y_mean, y_std, hyper, f, cholesky_solve(f, yn), jitter)


def predict(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance in cost units.

    Accepts a single point or an (n, dim) batch and returns arrays of
    length n (length 1 for a single point).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.train_inputs.shape[1]:
        raise DimensionMismatch("query dimension does not match the model")
    xn = model.normalize(x)
    kx = kernel_matrix(xn, model.train_inputs, model.hyper)
    mean = kx @ model.alpha
    v = cholesky_solve(model.chol, kx.T)
    var = model.hyper.signal_variance - np.sum(kx * v.T, axis=1)
    var = np.maximum(var, 0.0)
    return model.y_mean + model.y_std * mean, model.y_std**2 * var
