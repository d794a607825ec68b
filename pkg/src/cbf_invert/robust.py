"""Moving obstacles with bounded speed, including other teams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import AgentState


@dataclass(frozen=True)
class MovingObstacle:
    center: np.ndarray
    v_max: float
    r_safe: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if not self.r_safe > 0:
            raise ValueError("r_safe must be positive")


class WorstCase(NamedTuple):
    v_star: np.ndarray
    h_min: float
    r: float


def worst_case_velocity(c, dt: float, v_max: float, r: float = 0.0) -> WorstCase:
    """Obstacle velocity that brings it closest to the agent within one step.

    ``c`` is the agent's predicted next position minus the obstacle's current
    position.  The minimiser of ``|c - dt v|`` over the speed ball is the
    projection of ``c / dt`` onto that ball.
    """
    c = np.asarray(c, dtype=float)
    nc = float(np.linalg.norm(c))
    if nc > dt * v_max:
        return WorstCase(v_max * c / nc, (nc - dt * v_max) ** 2 - r ** 2, r)
    return WorstCase(c / dt, -r ** 2, r)


def robust_radius(r_safe: float, dt: float, v_max: float) -> float:
    """Radius that absorbs one step of worst-case obstacle motion."""
    return r_safe + dt * v_max


def team_as_obstacle(other_team: Sequence[AgentState], v_max: float, r_safe: float) -> MovingObstacle:
    if not other_team:
        raise ValueError("team must have at least one agent")
    center = np.mean([a.position for a in other_team], axis=0)
    return MovingObstacle(center, v_max, r_safe)
