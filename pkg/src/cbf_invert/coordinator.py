"""Round-robin decentralized planning with constraint inference.

At every step one agent demonstrates: it filters its nominal control against
the nearest obstacle it knows of, private ones included.  Every other agent
learns: it acts on public and self-inferred obstacles only, and at the next
step inverts the demonstrator's filtered action to discover what it avoided.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import inference, safety_filter
from .constraints import CbfParams, FormationConstraint, QuadraticBarrier, VelocityBound
from .dynamics import AgentState, DynamicsParams, JointState, step as dyn_step
from .inference import InferenceConfig, InferenceResult, Observation
from .robust import MovingObstacle, robust_radius
from .safety_filter import FilterError, FilterProblem, FilterSolution, FormationTerm

logger = logging.getLogger(__name__)

PRIVATE = "private"
PUBLIC = "public"
INFERRED = "inferred"

DEMONSTRATOR = "demonstrator"
LEARNER = "learner"


@dataclass(frozen=True)
class BeliefEntry:
    barrier: QuadraticBarrier
    provenance: str
    source: Optional[int] = None
    time: Optional[int] = None

    @property
    def theta(self) -> np.ndarray:
        return self.barrier.theta


class BeliefSet:
    """Obstacles one agent knows about, deduplicated within ``match_tol``."""

    def __init__(self, match_tol: float, entries=()):
        self.match_tol = float(match_tol)
        self.entries: list[BeliefEntry] = []
        for e in entries:
            self.add(e.barrier, e.provenance, e.source, e.time)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def find(self, theta) -> Optional[BeliefEntry]:
        theta = np.asarray(theta, dtype=float)
        for e in self.entries:
            if np.linalg.norm(e.theta - theta) <= self.match_tol:
                return e
        return None

    def add(self, barrier: QuadraticBarrier, provenance: str = PRIVATE,
            source: Optional[int] = None, time: Optional[int] = None) -> bool:
        if self.find(barrier.theta) is not None:
            return False
        self.entries.append(BeliefEntry(barrier, provenance, source, time))
        return True

    def inferred(self) -> list[BeliefEntry]:
        return [e for e in self.entries if e.provenance == INFERRED]

    def copy(self) -> "BeliefSet":
        out = BeliefSet(self.match_tol)
        out.entries = list(self.entries)
        return out


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 20
    goal_weight: float = 1.0
    velocity_weight: float = 1.0
    effort_weight: float = 0.2
    formation_weight: float = 0.0
    max_track_error: Optional[float] = None
    formation: tuple = ()
    cbf: CbfParams = CbfParams()
    dyn: DynamicsParams = DynamicsParams()
    inflate_demo: bool = True
    demonstrator_first: bool = False
    vel_bound: Optional[VelocityBound] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if min(self.goal_weight, self.velocity_weight, self.effort_weight, self.formation_weight) < 0:
            raise ValueError("planner weights must be nonnegative")
        if self.max_track_error is not None and not self.max_track_error > 0:
            raise ValueError("max_track_error must be positive")
        object.__setattr__(self, "formation", tuple(self.formation))

    def formations_of(self, k: int) -> list[FormationConstraint]:
        return [fc for fc in self.formation if fc.involves(k)]

    def demo_radius(self, r: float, k: int) -> float:
        forms = self.formations_of(k)
        if not self.inflate_demo or not forms:
            return r
        return max(demo_radius(r, fc) for fc in forms)


def demo_radius(r: float, fc: FormationConstraint) -> float:
    """Radius a demonstrator must keep so that formation partners stay clear of ``r``."""
    return r + fc.dist + fc.slack


@functools.lru_cache(maxsize=64)
def _lqr_gain(dt: float, horizon: int, n: int, pairs: tuple, qp: float, qv: float,
              qf: float, ru: float) -> np.ndarray:
    """First-step feedback gain of finite-horizon LQR for ``n`` 1-D double integrators.

    State is ``(p_1..p_n, v_1..v_n)`` expressed relative to the goals, so the
    formation term penalizes drift of pairwise offsets away from the goal
    offsets. Both axes share the gain.
    """
    eye = np.eye(n)
    a = np.block([[eye, dt * eye], [np.zeros((n, n)), eye]])
    b = np.vstack([0.5 * dt * dt * eye, dt * eye])
    qpos = qp * eye
    for i, j in pairs:
        e = np.zeros(n)
        e[i], e[j] = 1.0, -1.0
        qpos = qpos + qf * np.outer(e, e)
    q = np.block([[qpos, np.zeros((n, n))], [np.zeros((n, n)), qv * eye]])
    p = q.copy()
    k = np.zeros((n, 2 * n))
    for _ in range(horizon):
        k = np.linalg.solve(ru * eye + b.T @ p @ b, b.T @ p @ a)
        p = q + a.T @ p @ (a - b @ k)
    return k


def nominal_plan(joint: JointState, goals, cfg: PlannerConfig) -> np.ndarray:
    """First control of an unconstrained finite-horizon goal-tracking LQR.

    With ``formation_weight == 0`` the agents decouple and each tracks its own
    goal independently. ``max_track_error`` clips each agent's goal error so
    a distant goal does not command an unbounded cruise speed.
    """
    n = len(joint)
    pairs = tuple(sorted((fc.i, fc.j) for fc in cfg.formation)) if cfg.formation_weight > 0 else ()
    k = _lqr_gain(cfg.dyn.dt, cfg.horizon, n, pairs, cfg.goal_weight, cfg.velocity_weight,
                  cfg.formation_weight, max(cfg.effort_weight, 1e-12))
    err = joint.positions() - np.asarray(goals, dtype=float)
    if cfg.max_track_error is not None:
        norm = np.linalg.norm(err, axis=1, keepdims=True)
        err = err * np.minimum(1.0, cfg.max_track_error / np.maximum(norm, 1e-300))
    x = np.vstack([err, joint.velocities()])
    return -(k @ x)


@dataclass
class AgentRecord:
    role: str
    position: np.ndarray
    velocity: np.ndarray
    u_nom: np.ndarray
    u_safe: np.ndarray
    solution: Optional[FilterSolution] = None
    obstacle: Optional[QuadraticBarrier] = None
    formations: tuple = ()


@dataclass
class StepRecord:
    t: int
    demonstrator: int
    agents: list
    inferences: dict = field(default_factory=dict)  # learner -> InferenceResult
    failed: bool = False
    message: str = ""


@dataclass
class RoundRobinWorld:
    joint: JointState
    beliefs: list
    goals: np.ndarray
    config: PlannerConfig
    inference_cfg: InferenceConfig
    method: str = "kkt"
    schedule: Callable[[int, int], int] = staticmethod(lambda t, n: t % n)
    moving: tuple = ()
    obstacle_radius: Optional[float] = None
    log: list = field(default_factory=list)
    prev_moving: list = field(default_factory=list)
    halted: bool = False
    failure: str = ""

    @property
    def n_agents(self) -> int:
        return len(self.joint)

    @property
    def true_radius(self) -> float:
        return self.inference_cfg.r if self.obstacle_radius is None else self.obstacle_radius

    def demonstrator(self, t: int) -> int:
        return self.schedule(t, self.n_agents)

    def public_entries(self, j: int) -> list[BeliefEntry]:
        """Entries of agent ``j`` known to every other agent, plus its own inferences."""
        out = []
        for e in self.beliefs[j]:
            if e.provenance == INFERRED or all(
                    self.beliefs[k].find(e.theta) is not None
                    for k in range(self.n_agents) if k != j):
                out.append(e)
        return out


def _moving_barriers(world: RoundRobinWorld) -> list:
    dt = world.config.dyn.dt
    return [QuadraticBarrier.circle(m.center, robust_radius(m.r_safe, dt, m.v_max))
            for m in world.moving]


def _nearest(s, barriers):
    return safety_filter.nearest_obstacle(s, barriers)


def _observation(world: RoundRobinWorld, prev: StepRecord) -> Observation:
    k = prev.demonstrator
    rec = prev.agents[k]
    # partner positions the demonstrator constrained against are reproducible
    # from the shared state and planner, so learners may use them directly
    return Observation(rec.u_nom, rec.u_safe, rec.position, world.joint.positions()[k],
                       world.config.dyn, v_t=rec.velocity, formations=rec.formations,
                       vel_bound=world.config.vel_bound)


def _explained_by_moving(world: RoundRobinWorld, prev: StepRecord, obs: Observation, barriers) -> bool:
    """True when a publicly known moving obstacle reproduces the demonstrator's action."""
    if not barriers:
        return False
    bar = _nearest(obs.s_t, barriers)
    problem = FilterProblem(obs.s_t, obs.v_t, obs.u_nom, bar, obs.formations,
                            world.config.vel_bound, world.config.cbf, world.config.dyn)
    try:
        u = safety_filter.solve(problem).u_safe
    except FilterError:
        return False
    return float(np.linalg.norm(u - obs.u_safe)) < world.inference_cfg.noise_threshold


def _infer(world: RoundRobinWorld, prev: StepRecord, t: int, moving_prev) -> dict:
    k = prev.demonstrator
    rec = prev.agents[k]
    out = {}
    if np.array_equal(rec.u_safe, rec.u_nom):
        return out
    obs = _observation(world, prev)
    explained = _explained_by_moving(world, prev, obs, moving_prev)
    for j in range(world.n_agents):
        if j == k:
            continue
        if explained:
            out[j] = InferenceResult(inference.REJECTED_KNOWN, message="moving obstacle")
            continue
        theta0 = prev.agents[j].position if world.method == "input_matching" else None
        res = inference.rejection_pipeline(obs, world.beliefs[j], world.inference_cfg,
                                           active=rec.solution.active_set if rec.solution else None,
                                           method=world.method, theta0=theta0)
        if res.inferred:
            world.beliefs[j].add(QuadraticBarrier(res.theta_hat, world.inference_cfg.q, world.true_radius),
                                 INFERRED, k, t - 1)
        out[j] = res
    return out


def round_robin_step(world: RoundRobinWorld) -> RoundRobinWorld:
    """Advance ``world`` by one step in place and return it."""
    if world.halted:
        return world
    cfg = world.config
    t = world.joint.time_index
    n = world.n_agents
    k = world.demonstrator(t)

    moving = _moving_barriers(world)
    if world.log and not world.log[-1].failed:
        prev = world.log[-1]
        prev.inferences.update(_infer(world, prev, t, world.prev_moving))
    world.prev_moving = moving

    u_nom = nominal_plan(world.joint, world.goals, cfg)
    agents = world.joint.agents
    next_pos = {}
    records = [None] * n
    learners = [j for j in range(n) if j != k]
    order = [k] + learners if cfg.demonstrator_first else learners + [k]
    if cfg.demonstrator_first:
        # the demonstrator constrains against where partners would go unfiltered
        for j in learners:
            next_pos[j] = agents[j].position + cfg.dyn.dt * agents[j].velocity \
                + 0.5 * cfg.dyn.dt ** 2 * u_nom[j]
    record = StepRecord(t, k, records)
    for j in order:
        a = agents[j]
        if j == k:
            static = [e.barrier.with_radius(cfg.demo_radius(e.barrier.r, k)) for e in world.beliefs[j]]
            partners = cfg.formations_of(j)
        else:
            static = [e.barrier for e in world.public_entries(j)]
            partners = [fc for fc in cfg.formations_of(j) if fc.other(j) in next_pos]
        bar = _nearest(a.position, static + moving)
        terms = tuple(FormationTerm(fc, next_pos[fc.other(j)], fc.other(j)) for fc in partners)
        problem = FilterProblem(a.position, a.velocity, u_nom[j], bar, terms, cfg.vel_bound, cfg.cbf, cfg.dyn)
        try:
            sol = safety_filter.solve(problem)
        except FilterError as exc:
            record.failed = True
            record.message = f"agent {j}: {exc}"
            world.halted = True
            world.failure = record.message
            logger.info("rollout halted at t=%d: %s", t, record.message)
            for i in range(n):
                if records[i] is None:
                    records[i] = AgentRecord(DEMONSTRATOR if i == k else LEARNER, agents[i].position,
                                             agents[i].velocity, u_nom[i], u_nom[i])
            world.log.append(record)
            return world
        records[j] = AgentRecord(DEMONSTRATOR if j == k else LEARNER, a.position, a.velocity,
                                 u_nom[j], sol.u_safe, sol, bar, terms)
        if j == k and cfg.demonstrator_first:
            next_pos = {}
        next_pos[j] = problem.next_position(sol.u_safe)
    world.log.append(record)
    new_agents = tuple(dyn_step(agents[i], records[i].u_safe, cfg.dyn) for i in range(n))
    world.joint = JointState(new_agents, t + 1)
    return world


@dataclass
class CertificateReport:
    condition1: bool
    condition2: bool
    premises_ok: bool
    min_margin: float
    details: list = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return self.min_margin >= 0.0


def check_premises(joint: JointState, obstacles: Sequence[QuadraticBarrier],
                   cfg: PlannerConfig) -> tuple[bool, bool, list]:
    """Inflated demonstration radius and initial feasibility.

    Initial states must lie outside every inflated radius by at least one step
    of travel at their current speed, a sufficient stand-in for membership of
    the forward invariant set.
    """
    details = []
    cond1 = cfg.inflate_demo and bool(cfg.formation) and cfg.cbf.gamma < 1.0
    if not cond1:
        details.append("condition 1: demonstrators do not use the inflated CBF radius")
    cond2 = True
    pos = joint.positions()
    for fc in cfg.formation:
        dist = float(np.linalg.norm(pos[fc.i] - pos[fc.j]))
        if not fc.lower <= dist <= fc.upper:
            cond2 = False
            details.append(f"condition 2: agents {fc.i},{fc.j} start outside the formation band ({dist:.3f})")
    for i, a in enumerate(joint.agents):
        for ob in obstacles:
            need = cfg.demo_radius(ob.r, i) + float(np.linalg.norm(a.velocity)) * cfg.dyn.dt
            dist = float(np.linalg.norm(a.position - ob.theta))
            if dist < need:
                cond2 = False
                details.append(f"condition 2: agent {i} starts {dist:.3f} m from obstacle at "
                               f"{np.round(ob.theta, 3).tolist()}, needs {need:.3f}")
    return cond1, cond2, details


def check_safety_certificate(world: RoundRobinWorld, true_obstacles: Sequence[QuadraticBarrier],
                             initial: Optional[JointState] = None) -> CertificateReport:
    """Premise check plus the realized minimum clearance ``|s - theta| - r``."""
    if initial is None:
        if world.log:
            first = world.log[0]
            initial = JointState(tuple(AgentState(a.position, a.velocity) for a in first.agents))
        else:
            initial = world.joint
    c1, c2, details = check_premises(initial, true_obstacles, world.config)
    margin = np.inf
    positions = [np.stack([a.position for a in rec.agents]) for rec in world.log]
    positions.append(world.joint.positions())
    for pos in positions:
        for ob in true_obstacles:
            margin = min(margin, float(np.min(np.linalg.norm(pos - ob.theta, axis=1)) - ob.r))
    return CertificateReport(c1, c2, c1 and c2, margin, details)
