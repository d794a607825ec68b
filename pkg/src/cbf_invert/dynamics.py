"""Discrete-time double-integrator dynamics.

The constraint-relevant state of an agent is its position, so the
constraint-relevant control matrix is ``0.5 * dt**2 * I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors of incompatible dimension are combined."""


@dataclass(frozen=True)
class DynamicsParams:
    dt: float = 0.1
    dim: int = 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(-1)
        v = np.asarray(self.velocity, dtype=float).reshape(-1)
        if p.shape != v.shape:
            raise DimensionError(
                f"position has dimension {p.size} but velocity has {v.size}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("agent state must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)

    @property
    def dim(self) -> int:
        return self.position.size


@dataclass(frozen=True)
class JointState:
    agents: tuple[AgentState, ...]
    time_index: int = 0

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise ValueError("joint state needs at least one agent")
        dims = {a.dim for a in agents}
        if len(dims) != 1:
            raise DimensionError(f"agents disagree on dimension: {sorted(dims)}")
        if self.time_index < 0:
            raise ValueError("time_index must be nonnegative")
        object.__setattr__(self, "agents", agents)

    def __len__(self):
        return len(self.agents)

    def positions(self) -> np.ndarray:
        return np.stack([a.position for a in self.agents])

    def velocities(self) -> np.ndarray:
        return np.stack([a.velocity for a in self.agents])


def step(state: AgentState, u, params: DynamicsParams) -> AgentState:
    """Advance one agent by one time step under acceleration ``u``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != state.dim:
        raise DimensionError(
            f"control has dimension {u.size}, state has {state.dim}")
    dt = params.dt
    p = state.position + dt * state.velocity + 0.5 * dt * dt * u
    v = state.velocity + dt * u
    return AgentState(p, v)


def predict_position(s, v, u, dt: float) -> np.ndarray:
    """Next position for raw arrays; the hot-path twin of :func:`step`."""
    return s + dt * v + 0.5 * dt * dt * u


def constraint_relevant_state(state: AgentState) -> np.ndarray:
    return state.position.copy()


def control_matrix(params: DynamicsParams) -> np.ndarray:
    """Map from control to next-step displacement of the position."""
    return 0.5 * params.dt ** 2 * np.eye(params.dim)
