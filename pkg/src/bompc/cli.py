"""Command-line entry point: ``bompc run --scenario origin|circle`` or ``--config file.json``.

Artifacts written to ``--out``:

convergence.csv      k, J_k, J_best_k (one row per closed-loop episode)
best_trajectory.csv  t, y1, y2, r1, r2, u1, u2, u3, p1, p2 of the incumbent episode
                     (y measured, p noise-free tip position)
theta_best.csv       the incumbent parameter vector, one row
report.txt           incumbent summary, fitted GP hyperparameters, wall-clock
config.json          the fully resolved configuration
run.log              per-iteration progress lines

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bo import BoState, EvaluationRecord, run_bo
from .config import SCENARIOS, ScenarioConfig, default_config, dump_config, load_config
from .errors import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("bompc")

TRAJECTORY_HEADER = ["t", "y1", "y2", "r1", "r2", "u1", "u2", "u3", "p1", "p2"]


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, int) else v for v in row])


def write_artifacts(out: Path, cfg: ScenarioConfig, state: BoState, best: EvaluationRecord, wall: float):
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(
        out / "convergence.csv",
        ["k", "J_k", "J_best_k"],
        ((k + 1, c, b) for k, (c, b) in enumerate(zip(state.cost_set, state.best_history))),
    )
    tr = best.trajectory
    _write_rows(
        out / "best_trajectory.csv",
        TRAJECTORY_HEADER,
        (
            [tr.time[i], *tr.y[i], *tr.r[i], *tr.u[i], *tr.position[i]]
            for i in range(len(tr.time))
        ),
    )
    _write_rows(out / "theta_best.csv", [f"theta_{i + 1}" for i in range(best.theta.size)], [best.theta])
    dump_config(cfg, out / "config.json")

    lines = [
        f"scenario: {cfg.name}",
        f"master seed: {cfg.bo.seed}",
        f"evaluations: {state.k}",
        f"incumbent cost: {_fmt(best.cost)}",
        f"incumbent iteration: {state.best_index + 1}",
        f"median seed cost: {_fmt(float(np.median(state.cost_set[: cfg.bo.n_seeds])))}",
        f"incumbent flags: {best.flags}",
        "incumbent theta: " + " ".join(_fmt(v) for v in best.theta),
    ]
    if state.hyper_history:
        h = state.hyper_history[-1]
        lines += [
            "final GP hyperparameters (standardized units):",
            f"  signal_variance: {_fmt(h.signal_variance)}",
            "  lengthscales: " + " ".join(_fmt(v) for v in h.lengthscales),
            f"  noise_variance: {_fmt(h.noise_variance)}",
        ]
    lines.append(f"wall-clock seconds: {wall:.2f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")


def run_scenario(cfg: ScenarioConfig, out: Path) -> tuple[BoState, EvaluationRecord]:
    """Run BO for ``cfg`` and write every artifact into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(handler)

    def progress(k, rec, state):
        flags = ",".join(name for name, on in rec.flags.items() if on) or "-"
        msg = f"k={k + 1:4d} J={rec.cost:.6g} J*={state.best_history[-1]:.6g} flags={flags}"
        print(msg, flush=True)
        log.info(msg)

    try:
        start = time.perf_counter()
        state, best = run_bo(cfg, progress=progress)
        write_artifacts(out, cfg, state, best, time.perf_counter() - start)
    finally:
        log.removeHandler(handler)
        handler.close()
    return state, best


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bompc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run Bayesian optimization for one scenario")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="JSON scenario file")
    src.add_argument("--scenario", choices=SCENARIOS, default="origin", help="built-in scenario")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    run.add_argument("--kmax", type=int, help="evaluation budget override")

    show = sub.add_parser("show-config", help="print a resolved configuration as JSON")
    show_src = show.add_mutually_exclusive_group()
    show_src.add_argument("--config", type=Path)
    show_src.add_argument("--scenario", choices=SCENARIOS, default="origin")
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg.bo.seed = args.seed
    if getattr(args, "kmax", None) is not None:
        cfg.bo.k_max = args.kmax
    return cfg.validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "show-config":
        print(dump_config(cfg))
        return EXIT_OK

    try:
        state, best = run_scenario(cfg, args.out)
    except Exception as exc:  # noqa: BLE001 - report any failure as exit code 3
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"incumbent cost {best.cost:.6g} at iteration {state.best_index + 1}; artifacts in {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
