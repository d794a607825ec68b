"""Rollout metrics: collisions, ghost inferences, inference error, discovery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class Match(NamedTuple):
    inferred: int
    true: int
    error: float


def classify_inferences(inferred: Sequence, true_obstacles: Sequence, match_tol: float):
    """Greedy nearest-neighbour matching of inferred centers to true centers.

    Pairs are taken in order of increasing distance, ties broken by the index
    of the inferred entry and then of the true obstacle. Each true obstacle is
    matched at most once; inferred entries left unmatched are ghosts.

    Returns:
        ``(matches, ghosts)``: a list of :class:`Match` and a list of indices
        into ``inferred``.
    """
    inf = [np.asarray(getattr(e, "theta", e), dtype=float) for e in inferred]
    tru = [np.asarray(getattr(o, "theta", o), dtype=float) for o in true_obstacles]
    pairs = []
    for i, a in enumerate(inf):
        for o, b in enumerate(tru):
            dist = float(np.linalg.norm(a - b))
            if dist <= match_tol:
                pairs.append((dist, i, o))
    pairs.sort()
    used_i, used_o, matches = set(), set(), []
    for dist, i, o in pairs:
        if i in used_i or o in used_o:
            continue
        used_i.add(i)
        used_o.add(o)
        matches.append(Match(i, o, dist))
    matches.sort(key=lambda m: m.inferred)
    ghosts = [i for i in range(len(inf)) if i not in used_i]
    return matches, ghosts


@dataclass
class RolloutMetrics:
    seed: int
    collisions: int
    ghosts: int
    errors: list
    discovered: int
    total_obstacles: int
    failed_steps: int

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("nan")

    @property
    def discovery_rate(self) -> float:
        return self.discovered / self.total_obstacles if self.total_obstacles else float("nan")


def rollout_metrics(result, match_tol: float) -> RolloutMetrics:
    """Score one rollout; inferences are matched per learner."""
    spec = result.spec
    errors, ghosts, found = [], 0, set()
    for belief in result.world.beliefs:
        entries = belief.inferred()
        matches, lost = classify_inferences(entries, spec.obstacles, match_tol)
        errors.extend(m.error for m in matches)
        found.update(m.true for m in matches)
        ghosts += len(lost)
    return RolloutMetrics(spec.seed, result.collisions, ghosts, errors, len(found),
                          len(spec.obstacles), result.failed_steps)


def _mean_std(values) -> tuple:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())


@dataclass
class MetricsReport:
    """Per-rollout metrics of one configuration plus their aggregates.

    Errors are obstacle-center distances in meters, averaged over matched
    inferences pooled across rollouts. Discovery pools obstacles across
    rollouts: discovered obstacles over total obstacles.
    """

    name: str
    rollouts: list = field(default_factory=list)

    def _field(self, attr):
        return [getattr(r, attr) for r in self.rollouts]

    @property
    def collisions(self) -> tuple:
        return _mean_std(self._field("collisions"))

    @property
    def ghosts(self) -> tuple:
        return _mean_std(self._field("ghosts"))

    @property
    def inference_error(self) -> tuple:
        return _mean_std([e for r in self.rollouts for e in r.errors])

    @property
    def discovery_rate(self) -> float:
        total = sum(self._field("total_obstacles"))
        return sum(self._field("discovered")) / total if total else float("nan")

    @property
    def failed_rollouts(self) -> int:
        return sum(1 for r in self.rollouts if r.failed_steps)

    def summary(self) -> dict:
        return {
            "config": self.name,
            "rollouts": len(self.rollouts),
            "collisions_mean": self.collisions[0], "collisions_std": self.collisions[1],
            "ghosts_mean": self.ghosts[0], "ghosts_std": self.ghosts[1],
            "error_mean": self.inference_error[0], "error_std": self.inference_error[1],
            "discovery": self.discovery_rate,
            "failed_rollouts": self.failed_rollouts,
        }
