"""Line-delimited JSON trace of a rollout, one record per timestep and agent."""

from __future__ import annotations

import json

import numpy as np

TRACE_FIELDS = ("t", "agent", "role", "position", "velocity", "u_nom", "u_safe", "active_set",
                "lambda", "nu", "inference_verdict", "theta_hat")


def _num(x):
    if x is None:
        return None
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return float(f"{float(arr):.12g}")
    return [float(f"{v:.12g}") for v in arr.reshape(-1)]


def trace_records(world):
    """Yield one dict per (timestep, agent) of ``world.log``.

    ``inference_verdict`` and ``theta_hat`` hold what that agent concluded,
    as a learner, from the demonstration made at this timestep.
    """
    for rec in world.log:
        for j, a in enumerate(rec.agents):
            sol = a.solution
            inf = rec.inferences.get(j)
            yield {
                "t": rec.t,
                "agent": j,
                "role": a.role,
                "position": _num(a.position),
                "velocity": _num(a.velocity),
                "u_nom": _num(a.u_nom),
                "u_safe": _num(a.u_safe),
                "active_set": sorted(sol.active_set) if sol is not None else [],
                "lambda": _num(sol.lambda_obs) if sol is not None else None,
                "nu": _num(sol.nu_form) if sol is not None else None,
                "inference_verdict": inf.verdict if inf is not None else None,
                "theta_hat": _num(inf.theta_hat) if inf is not None else None,
            }


def write_trace(world, path) -> int:
    """Write the trace and return the number of records."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in trace_records(world):
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_trace(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
