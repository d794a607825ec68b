"""JSON configuration for the harness.

Key tree (every key optional)::

    {
      "scenario":   {"n_agents", "n_obstacles", "arena", "r", "clearance", "dist",
                     "slack", "corridor", "separation", "gamma", "dt", "t_e"},
      "planner":    {"horizon", "goal_weight", "velocity_weight", "effort_weight",
                     "formation_weight", "max_track_error", "inflate_demo",
                     "demonstrator_first"},
      "inference":  {"match_frac"},
      "montecarlo": {"rollouts", "seed", "matrix"},
      "sweep":      {"grid_min", "grid_max", "resolution", "seed"},
      "certify":    {"seeds", "n_obstacles", "separation", "arena", "corridor"}
    }

``inference.match_frac`` sets the match tolerance as a fraction of ``r``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .rollout import RolloutOptions
from .scenario import ScenarioParams

MATRIX = ("cbf-kkt", "cbf-im", "circle-kkt", "circle-im")

_METHOD = {"kkt": "kkt", "im": "input_matching"}


def parse_config_name(name: str) -> tuple:
    """``"cbf-im"`` -> ``("cbf", "input_matching")``."""
    try:
        form, method = name.strip().lower().split("-")
        if form not in ("cbf", "circle"):
            raise ValueError
        return form, _METHOD[method]
    except (ValueError, KeyError):
        raise ValueError(f"unknown configuration {name!r}; expected one of {', '.join(MATRIX)}") from None


# Monte Carlo defaults: two obstacles along the route, kept apart so that at
# most one inflated obstacle region is in reach at a time
MC_SCENARIO = {"n_obstacles": (2, 2), "separation": 3.5}

# certificate runs: premises enforced at generation, obstacles anywhere in a
# slightly larger arena so that the wider separation always fits
CERT_SCENARIO = {"n_obstacles": (2, 2), "arena": ((0.0, 0.0), (12.0, 12.0)), "corridor": None,
                 "separation": None, "certificate": True}


@dataclass
class HarnessConfig:
    scenario: ScenarioParams = field(default_factory=lambda: ScenarioParams(**MC_SCENARIO))
    planner: RolloutOptions = field(default_factory=RolloutOptions)
    rollouts: int = 20
    seed: int = 0
    matrix: tuple = MATRIX
    grid_min: Optional[tuple] = None
    grid_max: Optional[tuple] = None
    resolution: int = 41
    sweep_seed: int = 0
    certify_seeds: int = 100
    certify_scenario: dict = field(default_factory=dict)

    @property
    def match_tol(self) -> float:
        return self.planner.match_frac * self.scenario.r

    def certificate_params(self) -> ScenarioParams:
        """Scenario for certificate runs; MC keys not overridden by ``certify`` carry over."""
        base = dataclasses.asdict(self.scenario)
        base.update(CERT_SCENARIO)
        base.update(self.certify_scenario)
        base.update(constraint_form="cbf", inference_method="kkt", certificate=True)
        return ScenarioParams(**base)

    def scenario_for(self, name: str) -> ScenarioParams:
        form, method = parse_config_name(name)
        return dataclasses.replace(self.scenario, constraint_form=form, inference_method=method)

    @classmethod
    def from_dict(cls, data: dict) -> "HarnessConfig":
        known = {"scenario", "planner", "inference", "montecarlo", "sweep", "certify"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        scen = dict(MC_SCENARIO)
        scen.update(data.get("scenario", {}))
        if "arena" in scen:
            scen["arena"] = tuple(tuple(c) for c in scen["arena"])
        if isinstance(scen.get("n_obstacles"), list):
            scen["n_obstacles"] = tuple(scen["n_obstacles"])
        planner = dict(data.get("planner", {}))
        planner.update(data.get("inference", {}))
        mc = data.get("montecarlo", {})
        sw = data.get("sweep", {})
        cert = dict(data.get("certify", {}))
        if "arena" in cert:
            cert["arena"] = tuple(tuple(c) for c in cert["arena"])
        if isinstance(cert.get("n_obstacles"), list):
            cert["n_obstacles"] = tuple(cert["n_obstacles"])
        return cls(
            scenario=ScenarioParams(**scen),
            planner=RolloutOptions(**planner),
            rollouts=int(mc.get("rollouts", 20)),
            seed=int(mc.get("seed", 0)),
            matrix=tuple(mc.get("matrix", MATRIX)),
            grid_min=tuple(sw["grid_min"]) if "grid_min" in sw else None,
            grid_max=tuple(sw["grid_max"]) if "grid_max" in sw else None,
            resolution=int(sw.get("resolution", 41)),
            sweep_seed=int(sw.get("seed", 0)),
            certify_seeds=int(cert.pop("seeds", 100)),
            certify_scenario=cert,
        )


def load_config(path=None) -> HarnessConfig:
    if path is None:
        return HarnessConfig()
    with open(Path(path), encoding="utf-8") as fh:
        return HarnessConfig.from_dict(json.load(fh))
