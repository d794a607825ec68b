"""Seeded Monte Carlo over the {cbf, circle} x {kkt, input matching} matrix."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor

from .config import HarnessConfig
from .metrics import MetricsReport, rollout_metrics
from .rollout import RolloutOptions, run_rollout
from .scenario import ScenarioParams, generate_scenario

logger = logging.getLogger(__name__)

THREADS_ENV = "CBF_INVERT_THREADS"

CSV_COLUMNS = ("config", "seed", "collisions", "ghosts", "mean_error", "discovered",
               "total_obstacles", "failed_steps")


def worker_count(requested=None) -> int:
    """Parallel rollout workers; ``CBF_INVERT_THREADS`` caps it, 0 means one per CPU."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV, "0")
    try:
        cap = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        cap = 0
    n = cpus if cap <= 0 else cap
    if requested:
        n = min(n, requested)
    return max(1, n)


def _one(args):
    seed, params, opts, match_tol = args
    spec = generate_scenario(seed, params)
    return rollout_metrics(run_rollout(spec, opts), match_tol)


def run_configuration(name: str, params: ScenarioParams, opts: RolloutOptions, seeds,
                      match_tol: float, workers: int = 1) -> MetricsReport:
    jobs = [(s, params, opts, match_tol) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    # pool.map keeps submission order, so reports are ordered by seed
    return MetricsReport(name, results)


def run_monte_carlo(cfg: HarnessConfig = None, rollouts=None, matrix=None) -> dict:
    """Run every configuration on the same seeds; returns name -> MetricsReport."""
    cfg = cfg or HarnessConfig()
    n = cfg.rollouts if rollouts is None else int(rollouts)
    seeds = [cfg.seed + i for i in range(n)]
    workers = worker_count(n)
    out = {}
    for name in (matrix or cfg.matrix):
        logger.info("running %s on %d seeds with %d workers", name, n, workers)
        out[name] = run_configuration(name, cfg.scenario_for(name), cfg.planner, seeds,
                                      cfg.match_tol, workers)
    return out


def write_csv(reports: dict, path) -> None:
    """One row per (configuration, rollout), then a commented aggregate block.

    ``mean_error`` is in meters and empty when a rollout matched nothing.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for name, rep in reports.items():
            for r in rep.rollouts:
                err = "" if not r.errors else f"{r.mean_error:.12g}"
                w.writerow([name, r.seed, r.collisions, r.ghosts, err, r.discovered,
                            r.total_obstacles, r.failed_steps])
        fh.write("\n# summary\n")
        keys = list(next(iter(reports.values())).summary()) if reports else []
        fh.write("# " + ",".join(keys) + "\n")
        for rep in reports.values():
            summ = rep.summary()
            fh.write("# " + ",".join(_fmt(summ[k]) for k in keys) + "\n")


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def format_summary(reports: dict) -> str:
    lines = [f"{'config':<11} {'collisions':>14} {'ghosts':>14} {'error [m]':>20} {'discovery':>10}"]
    for name, rep in reports.items():
        c, g, e = rep.collisions, rep.ghosts, rep.inference_error
        lines.append(f"{name:<11} {c[0]:>6.2f} ± {c[1]:<5.2f} {g[0]:>6.2f} ± {g[1]:<5.2f} "
                     f"{e[0]:>9.4f} ± {e[1]:<8.4f} {rep.discovery_rate:>9.0%}")
    return "\n".join(lines)
