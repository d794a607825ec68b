"""Two teams crossing paths, each treating the other as a moving obstacle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..constraints import CbfParams, VelocityBound
from ..coordinator import BeliefSet, PlannerConfig, RoundRobinWorld, round_robin_step
from ..dynamics import AgentState, DynamicsParams, JointState
from ..inference import InferenceConfig
from ..robust import team_as_obstacle
from .scenario import formation_ring, team_offsets


@dataclass(frozen=True)
class CrossingParams:
    n_teams: int = 2
    team_size: int = 2
    arena: float = 10.0
    margin: float = 1.5
    r_safe: float = 2.0
    v_max: float = 2.0
    dist: float = 1.5
    slack: float = 0.3
    # slow decay: the other team closes in at up to v_max, so start yielding early
    gamma: float = 0.05
    dt: float = 0.1
    t_e: int = 300
    max_track_error: float = 2.0
    stagger: float = 1.0
    demonstrator_first: bool = False
    formation_weight: float = 0.0

    @property
    def agent_radius(self) -> float:
        """Per-agent clearance from another team's center.

        Two agents at least ``rho`` from a point and at most ``dist + slack``
        apart have their midpoint at least ``sqrt(rho^2 - (span/2)^2)`` from
        it, so this radius keeps the team centers ``r_safe`` apart.
        """
        half = 0.5 * (self.dist + self.slack) if self.team_size > 1 else 0.0
        return float(np.hypot(self.r_safe, half))


@dataclass
class CrossingResult:
    worlds: list
    center_distance: np.ndarray       # (T,) distance between the two team centers
    agent_distance: np.ndarray        # (T,) min over agents of distance to the other team's center
    r_safe: float
    halted: bool
    messages: list = field(default_factory=list)

    @property
    def min_center_distance(self) -> float:
        return float(self.center_distance.min())

    @property
    def min_agent_distance(self) -> float:
        return float(self.agent_distance.min())


def _routes(p: CrossingParams):
    """Teams cross the arena diagonally, each starting ``stagger`` further back."""
    lo, hi = p.margin, p.arena - p.margin
    corners = [(np.array([lo, lo]), np.array([hi, hi])), (np.array([hi, lo]), np.array([lo, hi])),
               (np.array([hi, hi]), np.array([lo, lo])), (np.array([lo, hi]), np.array([hi, lo]))]
    if p.n_teams > len(corners):
        raise ValueError("at most four teams fit the corner layout")
    out = []
    for b, (start, goal) in enumerate(corners[: p.n_teams]):
        u = (goal - start) / np.linalg.norm(goal - start)
        out.append((start - b * p.stagger * u, goal))
    return out


def build_crossing(p: CrossingParams = CrossingParams()) -> list:
    worlds = []
    for start, goal in _routes(p):
        heading = (goal - start) / np.linalg.norm(goal - start)
        off = team_offsets(p.team_size, p.dist, heading)
        cfg = PlannerConfig(max_track_error=p.max_track_error, formation_weight=p.formation_weight,
                            formation=formation_ring(p.team_size, p.dist, p.slack),
                            cbf=CbfParams(p.gamma), dyn=DynamicsParams(p.dt),
                            vel_bound=VelocityBound(p.v_max),
                            demonstrator_first=p.demonstrator_first)
        joint = JointState(tuple(AgentState(start + o, np.zeros(2)) for o in off))
        icfg = InferenceConfig(cbf=cfg.cbf, r=p.agent_radius, match_tol=0.25 * p.agent_radius)
        beliefs = [BeliefSet(icfg.match_tol) for _ in range(p.team_size)]
        worlds.append(RoundRobinWorld(joint, beliefs, goal + off, cfg, icfg))
    return worlds


def _centers(worlds):
    return [w.joint.positions().mean(axis=0) for w in worlds]


def run_crossing(p: CrossingParams = CrossingParams()) -> CrossingResult:
    """Step all teams in lockstep; every team sees the others through their centers."""
    worlds = build_crossing(p)
    center_d, agent_d = [], []

    def record():
        c = _centers(worlds)
        center_d.append(min(np.linalg.norm(c[a] - c[b])
                            for a in range(len(c)) for b in range(a + 1, len(c))))
        agent_d.append(min(np.min(np.linalg.norm(w.joint.positions() - c[b], axis=1))
                           for a, w in enumerate(worlds) for b in range(len(c)) if b != a))

    record()
    halted = False
    for _ in range(p.t_e):
        others = [[team_as_obstacle(o.joint.agents, p.v_max, p.agent_radius)
                   for b, o in enumerate(worlds) if b != a] for a in range(len(worlds))]
        for w, obs in zip(worlds, others):
            w.moving = tuple(obs)
            round_robin_step(w)
        record()
        if any(w.halted for w in worlds):
            halted = True
            break
    return CrossingResult(worlds, np.array(center_d), np.array(agent_d), p.r_safe, halted,
                          [w.failure for w in worlds if w.failure])
