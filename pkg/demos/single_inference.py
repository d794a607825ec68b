"""Filter one nominal control against a hidden obstacle, then recover the obstacle.

    python demos/single_inference.py
"""

import numpy as np

from cbf_invert import inference, safety_filter
from cbf_invert.constraints import CbfParams, QuadraticBarrier
from cbf_invert.dynamics import DynamicsParams
from cbf_invert.inference import InferenceConfig, Observation
from cbf_invert.safety_filter import FilterProblem


def main():
    dyn, cbf = DynamicsParams(0.1), CbfParams(0.3)
    theta = np.array([1.1, 0.35])
    s, v = np.zeros(2), np.array([1.0, 0.0])
    u_nom = np.array([2.0, 0.0])
    prob = FilterProblem(s, v, u_nom, QuadraticBarrier.circle(theta, 1.0), cbf=cbf, dyn=dyn)
    sol = safety_filter.solve(prob)
    print(f"u_nom  = {u_nom}")
    print(f"u_safe = {np.round(sol.u_safe, 4)}  active: {sorted(sol.active_set)}")

    obs = Observation(u_nom, sol.u_safe, s, prob.next_position(sol.u_safe), dyn, v_t=v)
    cfg = InferenceConfig(cbf=cbf, r=1.0)
    est, _ = inference.closed_form_theta(obs, cfg)
    print(f"closed form theta = {np.round(est, 6)}  error {np.linalg.norm(est - theta):.2e} m")
    res = inference.newton_infer(obs, cfg=cfg)
    print(f"newton theta      = {np.round(res.theta_hat, 6)}  {res.verdict}, "
          f"{res.iterations} iterations")


if __name__ == "__main__":
    main()
