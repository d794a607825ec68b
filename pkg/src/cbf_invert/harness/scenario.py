"""Seeded scenario generation for team navigation among obstacles."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..constraints import CbfParams, FormationConstraint, QuadraticBarrier
from ..coordinator import demo_radius
from ..dynamics import DynamicsParams

MAX_DRAWS = 10_000
RESTART_AFTER = 200


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the random scenario distribution.

    Obstacles are drawn uniformly inside a band of half-width ``corridor``
    around the straight start-to-goal path of the team. ``corridor=None``
    draws them uniformly over the whole arena.
    """

    n_agents: int = 2
    n_obstacles: tuple = (2, 3)
    arena: tuple = ((0.0, 0.0), (10.0, 10.0))
    r: float = 1.0
    clearance: float = 0.5
    dist: float = 1.5
    slack: float = 0.3
    corridor: Optional[float] = 1.5
    separation: Optional[float] = None
    inference_method: str = "kkt"
    constraint_form: str = "cbf"
    gamma: float = 0.3
    dt: float = 0.1
    t_e: int = 300
    certificate: bool = False

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("n_agents must be at least 2")
        if self.inference_method not in ("kkt", "input_matching"):
            raise ValueError(f"unknown inference method {self.inference_method!r}")
        if self.constraint_form not in ("cbf", "circle"):
            raise ValueError(f"unknown constraint form {self.constraint_form!r}")
        n = self.n_obstacles
        object.__setattr__(self, "n_obstacles", (int(n), int(n)) if np.isscalar(n) else tuple(int(x) for x in n))
        object.__setattr__(self, "arena", tuple(tuple(float(x) for x in c) for c in self.arena))

    @property
    def cbf(self) -> CbfParams:
        return CbfParams(1.0 if self.constraint_form == "circle" else self.gamma)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    n_agents: int
    n_obstacles: int
    arena: tuple
    starts: np.ndarray
    goals: np.ndarray
    obstacles: tuple                 # QuadraticBarrier per obstacle
    knowledge: dict                  # obstacle index -> frozenset of agents
    formation: tuple
    inference_method: str
    constraint_form: str
    cbf: CbfParams
    dyn: DynamicsParams
    t_e: int
    certificate: bool = False

    def private_obstacles(self, agent: int) -> list:
        return [self.obstacles[o] for o, holders in self.knowledge.items() if agent in holders]


def formation_ring(n: int, dist: float, slack: float) -> tuple:
    """Pairwise formation constraints for ``n`` agents placed on a line or ring."""
    if n == 2:
        return (FormationConstraint(0, 1, dist, slack),)
    return tuple(FormationConstraint(i, (i + 1) % n, dist, slack) for i in range(n))


def team_offsets(n: int, dist: float, heading: np.ndarray) -> np.ndarray:
    """Agent offsets from the team center with neighbours exactly ``dist`` apart."""
    lateral = np.array([-heading[1], heading[0]])
    if n == 2:
        return np.outer([-0.5, 0.5], lateral) * dist
    rad = dist / (2.0 * np.sin(np.pi / n))
    ang = np.arctan2(lateral[1], lateral[0]) + 2.0 * np.pi * np.arange(n) / n
    return rad * np.column_stack([np.cos(ang), np.sin(ang)])


def _sample_route(rng, lo, hi, margin):
    """Start and goal team centers on opposite sides of the arena."""
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) - margin
    ang = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(ang), np.sin(ang)])
    scale = np.min(half / np.maximum(np.abs(direction), 1e-12))
    start = center - scale * direction
    return start, center + scale * direction


def generate_scenario(seed: int, params: ScenarioParams = ScenarioParams()) -> ScenarioSpec:
    """Draw a random scenario; identical seeds give identical scenarios."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    lo, hi = (np.asarray(c) for c in params.arena)
    n = params.n_agents
    formation = formation_ring(n, params.dist, params.slack)
    reach = 0.5 * params.dist if n == 2 else params.dist / (2.0 * np.sin(np.pi / n))
    margin = reach + 0.25

    start_c, goal_c = _sample_route(rng, lo, hi, margin)
    heading = (goal_c - start_c) / np.linalg.norm(goal_c - start_c)
    offsets = team_offsets(n, params.dist, heading)
    starts = start_c + offsets
    goals = goal_c + offsets

    n_obs = int(rng.integers(params.n_obstacles[0], params.n_obstacles[1] + 1))
    keep = params.r + params.clearance
    sep = 2.0 * params.r
    if params.certificate and formation:
        r_demo = max(demo_radius(params.r, fc) for fc in formation)
        keep = max(keep, r_demo + params.clearance)
        # each demonstrator only filters against its nearest obstacle, so two
        # inflated regions must never be reachable at once
        sep = 2.0 * r_demo + params.clearance
    if params.separation is not None:
        sep = params.separation
    anchors = np.vstack([starts, goals])
    centers: list = []
    draws = stuck = 0
    while len(centers) < n_obs:
        draws += 1
        if draws > MAX_DRAWS:
            raise ScenarioError(f"could not place {n_obs} obstacles after {MAX_DRAWS} draws; "
                                "use fewer obstacles or a larger arena")
        stuck += 1
        if stuck > RESTART_AFTER:
            # earlier placements can leave no room for the rest; start over
            centers, stuck = [], 0
        if params.corridor is None:
            c = rng.uniform(lo, hi)
        else:
            along = rng.uniform(0.0, 1.0)
            side = rng.uniform(-params.corridor, params.corridor)
            c = start_c + along * (goal_c - start_c) + side * np.array([-heading[1], heading[0]])
            if np.any(c < lo) or np.any(c > hi):
                continue
        if np.min(np.linalg.norm(anchors - c, axis=1)) < keep:
            continue
        if any(np.linalg.norm(c - o) < sep for o in centers):
            continue
        centers.append(c)
        stuck = 0
    obstacles = tuple(QuadraticBarrier.circle(c, params.r) for c in centers)
    knowledge = {o: frozenset({int(rng.integers(n))}) for o in range(n_obs)}
    return ScenarioSpec(int(seed), n, n_obs, params.arena, starts, goals, obstacles, knowledge,
                        formation, params.inference_method, params.constraint_form, params.cbf,
                        DynamicsParams(params.dt), params.t_e, params.certificate)


def audit_scenario(spec: ScenarioSpec, clearance: float = 0.5) -> list:
    """Invariant violations of ``spec`` as messages; empty when valid."""
    problems = []
    anchors = np.vstack([spec.starts, spec.goals])
    for o, ob in enumerate(spec.obstacles):
        need = ob.r + clearance
        if spec.certificate:
            need = max([need] + [demo_radius(ob.r, fc) for fc in spec.formation])
        gap = float(np.min(np.linalg.norm(anchors - ob.theta, axis=1)))
        if gap < need - 1e-9:
            problems.append(f"obstacle {o} is {gap:.3f} m from a start or goal, needs {need:.3f}")
    for fc in spec.formation:
        dist = float(np.linalg.norm(spec.starts[fc.i] - spec.starts[fc.j]))
        if not fc.lower - 1e-9 <= dist <= fc.upper + 1e-9:
            problems.append(f"agents {fc.i},{fc.j} start {dist:.3f} m apart")
    return problems


def team_scenario(n_agents: int, offset: float = 2.0, r: float = 1.0, dist: float = 1.5,
                  slack: float = 0.3, gamma: float = 0.3, dt: float = 0.1,
                  t_e: int = 300) -> ScenarioSpec:
    """Fixed slalom: a team crosses along +x between two obstacles.

    The obstacles sit ``offset`` to the left and right of the path, one third
    and two thirds of the way along. Agent 0 alone knows the first and agent 1
    alone knows the second, so the rest of the team must infer them.
    """
    start_c, goal_c = np.array([1.5, 6.0]), np.array([13.5, 6.0])
    offsets = team_offsets(n_agents, dist, np.array([1.0, 0.0]))
    obstacles = (QuadraticBarrier.circle(np.array([5.0, 6.0 + offset]), r),
                 QuadraticBarrier.circle(np.array([9.0, 6.0 - offset]), r))
    knowledge = {0: frozenset({0}), 1: frozenset({1 % n_agents})}
    return ScenarioSpec(0, n_agents, 2, ((0.0, 0.0), (15.0, 12.0)), start_c + offsets,
                        goal_c + offsets, obstacles, knowledge,
                        formation_ring(n_agents, dist, slack), "kkt", "cbf", CbfParams(gamma),
                        DynamicsParams(dt), t_e, True)
