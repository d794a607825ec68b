"""Turn a scenario into a round-robin world and run it to completion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..coordinator import (PRIVATE, BeliefSet, PlannerConfig, RoundRobinWorld,
                           check_safety_certificate, round_robin_step)
from ..dynamics import AgentState, JointState
from ..inference import InferenceConfig
from .scenario import ScenarioSpec


@dataclass(frozen=True)
class RolloutOptions:
    horizon: int = 20
    goal_weight: float = 1.0
    velocity_weight: float = 1.0
    effort_weight: float = 0.2
    formation_weight: float = 0.0
    max_track_error: Optional[float] = 2.0
    inflate_demo: Optional[bool] = None
    demonstrator_first: bool = False
    match_frac: float = 0.25
    stop_at_goal: bool = True
    goal_tol: float = 0.05


@dataclass
class RolloutResult:
    spec: ScenarioSpec
    world: RoundRobinWorld
    collisions: int
    min_margin: float
    failed_steps: int
    reached_goal: bool
    collision_events: list = field(default_factory=list)

    @property
    def inferred(self) -> list:
        """Every inferred belief entry, across all learners, in insertion order."""
        return [e for b in self.world.beliefs for e in b.inferred()]


def build_world(spec: ScenarioSpec, opts: RolloutOptions = RolloutOptions()) -> RoundRobinWorld:
    r = spec.obstacles[0].r if spec.obstacles else 1.0
    # the circle baseline keeps the plain radius; inflation belongs to the CBF method
    inflate = spec.constraint_form == "cbf" if opts.inflate_demo is None else opts.inflate_demo
    cfg = PlannerConfig(horizon=opts.horizon, goal_weight=opts.goal_weight,
                        velocity_weight=opts.velocity_weight, effort_weight=opts.effort_weight,
                        formation_weight=opts.formation_weight, max_track_error=opts.max_track_error,
                        formation=spec.formation, cbf=spec.cbf, dyn=spec.dyn,
                        inflate_demo=inflate, demonstrator_first=opts.demonstrator_first)
    match_tol = opts.match_frac * r
    # learners invert with the radius the demonstrator actually enforced
    icfg = InferenceConfig(cbf=spec.cbf, r=cfg.demo_radius(r, 0), match_tol=match_tol)
    beliefs = []
    for k in range(spec.n_agents):
        b = BeliefSet(match_tol)
        for ob in spec.private_obstacles(k):
            b.add(ob, PRIVATE)
        beliefs.append(b)
    joint = JointState(tuple(AgentState(p, np.zeros_like(p)) for p in spec.starts))
    return RoundRobinWorld(joint, beliefs, np.array(spec.goals, dtype=float), cfg, icfg,
                           method=spec.inference_method, obstacle_radius=r)


def count_collisions(positions: np.ndarray, obstacles) -> list:
    """First-entry events ``(t, agent, obstacle)`` for positions shaped (T, N, d)."""
    events = []
    for o, ob in enumerate(obstacles):
        inside = np.linalg.norm(positions - ob.theta, axis=2) < ob.r
        for i in range(positions.shape[1]):
            entered = inside[:, i] & ~np.concatenate([[False], inside[:-1, i]])
            events.extend((int(t), i, o) for t in np.flatnonzero(entered))
    return sorted(events)


def trajectory(world: RoundRobinWorld) -> np.ndarray:
    pos = [np.stack([a.position for a in rec.agents]) for rec in world.log]
    pos.append(world.joint.positions())
    return np.stack(pos)


def run_rollout(spec: ScenarioSpec, opts: RolloutOptions = RolloutOptions()) -> RolloutResult:
    world = build_world(spec, opts)
    reached = False
    for _ in range(spec.t_e):
        round_robin_step(world)
        if world.halted:
            break
        gap = np.linalg.norm(world.joint.positions() - world.goals, axis=1).max()
        if gap < opts.goal_tol and np.linalg.norm(world.joint.velocities()) < opts.goal_tol:
            reached = True
            if opts.stop_at_goal:
                break
    # the last demonstration still gets processed by the learners
    if not world.halted and world.log:
        round_robin_step(world)
    pos = trajectory(world)
    events = count_collisions(pos, spec.obstacles)
    margin = check_safety_certificate(world, spec.obstacles).min_margin
    failed = sum(1 for rec in world.log if rec.failed)
    return RolloutResult(spec, world, len(events), margin, failed, reached, events)
