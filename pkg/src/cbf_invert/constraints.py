"""Quadratic barriers, the discrete CBF condition, and formation bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PD_TOL = 1e-10


@dataclass(frozen=True)
class QuadraticBarrier:
    """Keep-out region ``(s - theta)^T q (s - theta) >= r**2``."""

    theta: np.ndarray
    q: np.ndarray
    r: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        q = np.asarray(self.q, dtype=float)
        if q.shape != (theta.size, theta.size):
            raise ValueError(f"shape matrix {q.shape} does not match theta of size {theta.size}")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValueError("shape matrix must be symmetric")
        if np.linalg.eigvalsh(q).min() <= PD_TOL:
            raise ValueError("shape matrix must be positive definite")
        if not self.r > 0:
            raise ValueError(f"radius must be positive, got {self.r}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def circle(cls, theta, r: float) -> "QuadraticBarrier":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return cls(theta, np.eye(theta.size), r)

    @property
    def is_circle(self) -> bool:
        return bool(np.array_equal(self.q, np.eye(self.theta.size)))

    def with_theta(self, theta) -> "QuadraticBarrier":
        return QuadraticBarrier(theta, self.q, self.r)

    def with_radius(self, r: float) -> "QuadraticBarrier":
        return QuadraticBarrier(self.theta, self.q, r)


@dataclass(frozen=True)
class CbfParams:
    """Decay rate of the discrete-time barrier condition.

    ``gamma == 1`` drops the contraction term entirely and yields the plain
    next-step constraint ``h(s_next) >= 0`` used by the circle baseline.
    """

    gamma: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def is_circle(self) -> bool:
        return self.gamma == 1.0


@dataclass(frozen=True)
class FormationConstraint:
    i: int
    j: int
    dist: float
    slack: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("formation constraint needs two distinct agents")
        if not self.slack > 0:
            raise ValueError("formation slack must be positive")
        if not self.dist - self.slack > 0:
            raise ValueError("formation lower bound dist - slack must be positive")

    @property
    def lower(self) -> float:
        return self.dist - self.slack

    @property
    def upper(self) -> float:
        return self.dist + self.slack

    def involves(self, k: int) -> bool:
        return k in (self.i, self.j)

    def other(self, k: int) -> int:
        if k == self.i:
            return self.j
        if k == self.j:
            return self.i
        raise ValueError(f"agent {k} is not part of {self}")


@dataclass(frozen=True)
class VelocityBound:
    v_max: float

    def __post_init__(self):
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")


def barrier_value(s, b: QuadraticBarrier) -> float:
    e = np.asarray(s, dtype=float) - b.theta
    return float(e @ b.q @ e - b.r ** 2)


def barrier_grad_u(s_next, b: QuadraticBarrier, B_s) -> np.ndarray:
    """Gradient of ``h(s_next(u), theta)`` with respect to the control."""
    e = np.asarray(s_next, dtype=float) - b.theta
    return 2.0 * np.asarray(B_s).T @ (b.q @ e)


def cbf_residual(s_t, s_next, b: QuadraticBarrier, p: CbfParams) -> float:
    """``h(s_next) - (1 - gamma) h(s_t)``; nonnegative when the condition holds."""
    return barrier_value(s_next, b) - (1.0 - p.gamma) * barrier_value(s_t, b)


def formation_values(s_i, s_j, fc: FormationConstraint) -> tuple[float, float]:
    """Return ``(g_lower, g_upper)``; both are nonnegative inside the band."""
    dd = float(np.sum((np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float)) ** 2))
    return dd - fc.lower ** 2, fc.upper ** 2 - dd
