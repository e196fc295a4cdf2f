"""Bayesian optimization of the MPC prediction model.

Every candidate ``theta`` is decoded into a linear prediction model, an MPC
is built on it, and one closed-loop episode on the surrogate rod yields the
tracking cost ``J(theta)``. A GP over ``theta -> J`` and the Expected
Improvement acquisition choose the next candidate.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erfcx
from scipy.stats import qmc

from . import gp
from .config import ScenarioConfig, reference_array
from .errors import NonFiniteState
from .mpc import MpcController
from .numerics import norm_cdf, norm_pdf
from .plant import PlantSim
from .predmodel import decode_theta

log = logging.getLogger(__name__)

PENALTY_FACTOR = 10.0
PENALTY_DEFAULT = 1e9
SIGMA_FLOOR = 1e-12


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for a (master, key...) tuple."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


@dataclass
class Trajectory:
    time: np.ndarray
    y: np.ndarray  # measured outputs, what the cost is computed on
    r: np.ndarray
    u: np.ndarray
    position: np.ndarray  # noise-free tip position


@dataclass
class EvaluationRecord:
    theta: np.ndarray
    cost: float
    trajectory: Trajectory | None = None
    flags: dict = field(default_factory=lambda: {"blowup": False, "solver_failure": False, "slack_active": False})

    @property
    def failed(self) -> bool:
        return self.flags.get("blowup", False) or self.flags.get("solver_failure", False)


@dataclass
class BoState:
    theta_set: list = field(default_factory=list)
    cost_set: list = field(default_factory=list)
    records: list = field(default_factory=list)
    best_index: int = -1
    best_history: list = field(default_factory=list)
    hyper_history: list = field(default_factory=list)
    rng_seed: int = 0

    @property
    def k(self) -> int:
        return len(self.cost_set)

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        return self.theta_set[self.best_index], self.cost_set[self.best_index]

    def worst_finite_cost(self) -> float | None:
        ok = [c for c, r in zip(self.cost_set, self.records) if not r.failed and math.isfinite(c)]
        return max(ok) if ok else None

    def add(self, record: EvaluationRecord):
        self.theta_set.append(np.asarray(record.theta, dtype=float))
        self.cost_set.append(float(record.cost))
        self.records.append(record)
        self.best_index = self._select_incumbent()
        self.best_history.append(self.cost_set[self.best_index])

    def _select_incumbent(self) -> int:
        ok = [i for i, r in enumerate(self.records) if not r.failed]
        pool = ok if ok else range(len(self.records))
        return min(pool, key=lambda i: self.cost_set[i])


# --- closed-loop evaluation -------------------------------------------

def evaluate_theta(theta, scenario: ScenarioConfig, seed: int = 0, worst_cost: float | None = None) -> EvaluationRecord:
    """One closed-loop episode with the MPC built on ``theta``.

    Per step: measure, observer update with the previous (input,
    measurement) pair, solve the MPC, accumulate the stage cost, advance
    the plant. Divergence or an unrecoverable QP failure yields the
    penalty cost ``10 * worst_cost`` (``1e9`` if no finite cost is known).
    """
    theta = np.asarray(theta, dtype=float)
    cfg = scenario
    mpc = cfg.mpc
    horizon = mpc.horizon
    n = cfg.steps
    model = decode_theta(theta, cfg.model_dims)
    ctl = MpcController(model, mpc)
    sim = PlantSim(cfg.plant, cfg.dt, seed)
    sim.reset(cfg.start_position)
    refs = reference_array(cfg, 0, n + horizon + 1)

    ys = np.zeros((n, 2))
    us = np.zeros((n, mpc.n_u))
    pos = np.zeros((n, 2))
    cost = 0.0
    y_prev = u_prev = None
    flags = {"blowup": False, "solver_failure": False, "slack_active": False}
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n):
            y = sim.measure()
            pos[t] = sim.position
            u = ctl.step(refs[t + 1:t + 1 + horizon], y_prev, u_prev)
            e = y - refs[t]
            cost += float(e @ mpc.q_weight @ e + u @ mpc.r_weight @ u)
            ys[t] = y
            us[t] = u
            try:
                sim.step(u)
            except NonFiniteState:
                flags["blowup"] = True
                break
            y_prev, u_prev = y, u

    flags["solver_failure"] = ctl.failures > 0
    flags["slack_active"] = ctl.slack_steps > 0
    if flags["blowup"] or flags["solver_failure"] or not math.isfinite(cost):
        flags["blowup"] = flags["blowup"] or not math.isfinite(cost)
        cost = PENALTY_FACTOR * worst_cost if worst_cost is not None else PENALTY_DEFAULT
    traj = Trajectory(np.arange(n) * cfg.dt, ys, refs[:n].copy(), us, pos)
    return EvaluationRecord(theta, cost, traj, flags)


# --- design and acquisition -------------------------------------------

def seed_design(n_seeds: int, bounds, seed: int = 0) -> np.ndarray:
    """Latin hypercube: one point per stratum in every coordinate."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    bounds = np.asarray(bounds, dtype=float)
    unit = qmc.LatinHypercube(bounds.shape[0], seed=seed).random(n_seeds)
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


def expected_improvement(model: gp.GpModel, x, j_best: float):
    """EI for minimization, ``E[max(0, j_best - J(x))]``.

    Returns a float for a single point and an array for a batch.
    """
    mu, var = gp.predict(model, x)
    ei = _ei_from_moments(mu, np.sqrt(var), j_best)
    return float(ei[0]) if np.ndim(x) == 1 else ei


def _ei_from_moments(mu, sigma, j_best):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = j_best - mu
    out = np.maximum(gain, 0.0)
    ok = sigma > SIGMA_FLOOR
    z = gain[ok] / sigma[ok]
    out[ok] = gain[ok] * norm_cdf(z) + sigma[ok] * norm_pdf(z)
    return np.maximum(out, 0.0)


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _log_ei_from_moments(mu, sigma, j_best):
    """``log EI`` that stays finite far into the tail where EI underflows."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = j_best - mu
    out = np.full(mu.shape, -np.inf)
    flat = sigma <= SIGMA_FLOOR
    pos = flat & (gain > 0)
    out[pos] = np.log(gain[pos])
    ok = ~flat
    z = gain[ok] / sigma[ok]
    # z*Phi(z) + phi(z) = phi(z) * (1 + z * sqrt(pi/2) * erfcx(-z / sqrt(2)))
    zc = np.clip(z, -25.0, 25.0)
    h = 1.0 + zc * math.sqrt(math.pi / 2.0) * erfcx(-zc / math.sqrt(2.0))
    h = np.where(z < -25.0, 1.0 / np.maximum(z * z, 1.0), h)  # asymptotic: 1/z^2
    with np.errstate(divide="ignore"):
        vals = np.log(sigma[ok]) - 0.5 * z * z - _LOG_SQRT_2PI + np.log(np.maximum(h, 1e-300))
    # far above the incumbent EI equals the gain to double precision
    out[ok] = np.where(z > 25.0, np.log(np.maximum(gain[ok], 1e-300)), vals)
    return out


def _score(model, unit_pts, j_best):
    x = model.x_lower + unit_pts * (model.x_upper - model.x_lower)
    mu, var = gp.predict(model, x)
    return _log_ei_from_moments(mu, np.sqrt(var), j_best)


def _pattern_search(model, start, j_best, f0, steps=100, initial=0.1, floor=1e-4):
    x = start.copy()
    f = f0
    step = initial
    d = x.shape[0]
    for _ in range(steps):
        cand = np.repeat(x[None, :], 2 * d, axis=0)
        idx = np.arange(d)
        cand[idx, idx] += step
        cand[d + idx, idx] -= step
        np.clip(cand, 0.0, 1.0, out=cand)
        vals = _score(model, cand, j_best)
        j = int(np.argmax(vals))
        if vals[j] > f:
            x, f = cand[j], vals[j]
        else:
            step *= 0.5
            if step < floor:
                break
    return x, f


def optimize_acquisition(
    model: gp.GpModel,
    j_best: float,
    bounds,
    budget: int = 4096,
    seed: int = 0,
    refine: int = 5,
    extra_starts=None,
) -> np.ndarray:
    """Maximize EI over the box.

    Scores ``budget`` scrambled-Sobol points, then refines the ``refine``
    best of them (plus any ``extra_starts``) by a per-coordinate pattern
    search starting at 10% of the box width. Candidates are ranked by
    ``log EI`` so that ordering survives where EI underflows.
    """
    bounds = np.asarray(bounds, dtype=float)
    lower, width = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    d = bounds.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # non power-of-two budgets
        probes = qmc.Sobol(d, scramble=True, seed=seed).random(budget)
    scores = _score(model, probes, j_best)

    starts = [(probes[i], scores[i]) for i in np.argsort(-scores, kind="stable")[:refine]]
    if extra_starts is not None:
        for s in np.atleast_2d(extra_starts):
            u = np.clip((np.asarray(s, dtype=float) - lower) / width, 0.0, 1.0)
            starts.append((u, _score(model, u[None, :], j_best)[0]))

    best_i = int(np.argmax(scores))
    best_x, best_f = probes[best_i], scores[best_i]
    for x0, f0 in starts:
        x, f = _pattern_search(model, x0, j_best, f0)
        if f > best_f:
            best_x, best_f = x, f
    return lower + best_x * width


# --- the loop -----------------------------------------------------------

Evaluator = Callable[[np.ndarray, int, "BoState"], EvaluationRecord]


def bayes_minimize(
    evaluate: Evaluator,
    bounds,
    k_max: int = 100,
    n_seeds: int = 10,
    seed: int = 0,
    budget: int = 4096,
    refine: int = 5,
    gp_restarts: int = 8,
    cost_transform: str = "none",
    progress: Callable[[int, EvaluationRecord, BoState], None] | None = None,
) -> BoState:
    """Generic BO loop; ``evaluate(theta, k, state)`` runs evaluation number ``k``.

    Exactly ``k_max`` evaluations are performed, the first ``n_seeds`` of
    them on a Latin hypercube.
    """
    bounds = np.asarray(bounds, dtype=float)
    state = BoState(rng_seed=seed)
    design = seed_design(n_seeds, bounds, derive_seed(seed, 0))

    def run(theta, k):
        rec = evaluate(theta, k, state)
        state.add(rec)
        if progress is not None:
            progress(k, rec, state)

    for k, theta in enumerate(design[:k_max]):
        run(theta, k)

    transform = np.log if cost_transform == "log" else (lambda c: np.asarray(c, dtype=float))
    for k in range(len(state.cost_set), k_max):
        costs = np.asarray(state.cost_set)
        if cost_transform == "log":
            costs = np.maximum(costs, 1e-300)
        targets = transform(costs)
        model = gp.fit(state.theta_set, targets, bounds, restarts=gp_restarts, seed=derive_seed(seed, 1, k))
        state.hyper_history.append(model.hyper)
        j_best = float(np.min(targets))
        theta = optimize_acquisition(
            model,
            j_best,
            bounds,
            budget=budget,
            seed=derive_seed(seed, 2, k),
            refine=refine,
            extra_starts=[state.incumbent[0]],
        )
        run(theta, k)
    return state


def run_bo(scenario: ScenarioConfig, progress=None) -> tuple[BoState, EvaluationRecord]:
    """Bayesian optimization of the prediction model for one scenario."""
    cfg = scenario.validate()
    space = cfg.theta_space
    master = cfg.bo.seed

    def evaluate(theta, k, state):
        return evaluate_theta(theta, cfg, derive_seed(master, 3, k), state.worst_finite_cost())

    state = bayes_minimize(
        evaluate,
        space.bounds,
        k_max=cfg.bo.k_max,
        n_seeds=cfg.bo.n_seeds,
        seed=master,
        budget=cfg.bo.acquisition_budget,
        refine=cfg.bo.refine_starts,
        gp_restarts=cfg.bo.gp_restarts,
        cost_transform=cfg.bo.cost_transform,
        progress=progress,
    )
    return state, state.records[state.best_index]
