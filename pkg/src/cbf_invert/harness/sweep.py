"""Convergence regions of the KKT Newton solve and input matching over initial guesses."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .. import inference, safety_filter
from ..constraints import CbfParams, FormationConstraint, QuadraticBarrier
from ..dynamics import DynamicsParams
from ..inference import InferenceConfig, Observation
from ..safety_filter import FilterProblem, FormationTerm

CONVERGED_TRUE = "converged_true"
CONVERGED_WRONG = "converged_wrong"
DIVERGED = "diverged"

METHODS = ("newton", "input_matching")
CSV_COLUMNS = ("x0", "y0", "method", "outcome", "iterations", "final_error")


class SweepScenario(NamedTuple):
    obs: Observation
    theta: np.ndarray
    learner: np.ndarray
    cfg: InferenceConfig
    active: frozenset


class CellResult(NamedTuple):
    x0: float
    y0: float
    method: str
    outcome: str
    iterations: int
    final_error: float   # nan when diverged


@dataclass(frozen=True)
class SweepParams:
    r: float = 1.0
    dist: float = 1.5
    slack: float = 0.3
    gamma: float = 0.3
    dt: float = 0.1
    speed: float = 1.0
    match_frac: float = 0.25


def two_active_scenario(p: SweepParams = SweepParams()) -> SweepScenario:
    """Demonstrator pushed by an obstacle toward its partner.

    The demonstrator drives along +x past an obstacle ahead and to its left;
    the partner trails on its right at nearly the lower formation bound, so
    the filtered action has the obstacle and the lower formation bound both
    binding. The layout is searched over a small deterministic grid until
    that active set is reached.
    """
    fc = FormationConstraint(0, 1, p.dist, p.slack)
    dyn = DynamicsParams(p.dt)
    cbf = CbfParams(p.gamma)
    s = np.zeros(2)
    v = np.array([p.speed, 0.0])
    want = frozenset({safety_filter.OBSTACLE, safety_filter.FORMATION_LOWER})
    for gap in np.linspace(0.02, 0.3, 15) * p.r:
        for ang in np.linspace(10.0, 80.0, 15):
            a = np.deg2rad(ang)
            theta = s + (p.r + gap) * np.array([np.cos(a), np.sin(a)])
            for sep in np.linspace(0.0, 0.2, 11):
                partner = s + dyn.dt * v + np.array([0.0, -(fc.lower + sep)])
                u_nom = np.array([0.0, 0.0])
                term = FormationTerm(fc, partner, 1)
                bar = QuadraticBarrier.circle(theta, p.r)
                prob = FilterProblem(s, v, u_nom, bar, (term,), None, cbf, dyn)
                try:
                    sol = safety_filter.solve(prob)
                except safety_filter.FilterError:
                    continue
                if sol.active_set != want:
                    continue
                obs = Observation(u_nom, sol.u_safe, s, prob.next_position(sol.u_safe), dyn,
                                  v_t=v, formations=(term,))
                cfg = InferenceConfig(cbf=cbf, r=p.r, match_tol=p.match_frac * p.r)
                return SweepScenario(obs, theta, partner - dyn.dt * v, cfg, sol.active_set)
    raise RuntimeError("no layout with both constraints active was found")


def _classify(theta_hat, truth, tol) -> tuple:
    err = float(np.linalg.norm(np.asarray(theta_hat) - truth))
    return (CONVERGED_TRUE if err <= tol else CONVERGED_WRONG), err


def run_cell(scn: SweepScenario, theta0, method: str) -> CellResult:
    theta0 = np.asarray(theta0, dtype=float)
    terms = inference.formation_terms(scn.obs)
    if method == "newton":
        # multipliers are not part of the guess; take the best nonnegative fit at theta0
        x0 = np.concatenate([theta0, inference.fit_multipliers(scn.obs, theta0, scn.cfg, terms)])
        res = inference.newton_infer(scn.obs, x0, scn.cfg, terms)
    elif method == "input_matching":
        res = inference.input_matching_baseline(scn.obs, theta0, scn.cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not res.inferred:
        return CellResult(theta0[0], theta0[1], method, DIVERGED, res.iterations, float("nan"))
    outcome, err = _classify(res.theta_hat, scn.theta, scn.cfg.match_tol)
    return CellResult(theta0[0], theta0[1], method, outcome, res.iterations, err)


def default_grid(scn: SweepScenario, half_width: Optional[float] = None):
    """Box of side ``4r`` centered on the learner."""
    h = 2.0 * scn.cfg.r if half_width is None else half_width
    return tuple(scn.learner - h), tuple(scn.learner + h)


def newton_region_sweep(scn: SweepScenario = None, grid_min=None, grid_max=None,
                        resolution: int = 41, methods=METHODS) -> list:
    """Classify every grid cell for every method; cells are row-major in y then x."""
    scn = scn or two_active_scenario()
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if grid_min is None or grid_max is None:
        lo, hi = default_grid(scn)
        grid_min = lo if grid_min is None else grid_min
        grid_max = hi if grid_max is None else grid_max
    xs = np.linspace(grid_min[0], grid_max[0], resolution)
    ys = np.linspace(grid_min[1], grid_max[1], resolution)
    out = []
    for y in ys:
        for x in xs:
            for m in methods:
                out.append(run_cell(scn, (x, y), m))
    return out


def fractions(cells, method: str) -> dict:
    mine = [c for c in cells if c.method == method]
    n = len(mine) or 1
    return {k: sum(c.outcome == k for c in mine) / n for k in (CONVERGED_TRUE, CONVERGED_WRONG, DIVERGED)}


def write_csv(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in cells:
            err = "" if np.isnan(c.final_error) else f"{c.final_error:.12g}"
            w.writerow([f"{c.x0:.12g}", f"{c.y0:.12g}", c.method, c.outcome, c.iterations, err])
