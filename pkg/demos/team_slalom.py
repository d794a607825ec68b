"""Teams of 2, 3 and 4 agents cross between two privately known obstacles.

    python demos/team_slalom.py [--plot out.png]
"""

import argparse

from cbf_invert.harness.rollout import run_rollout, trajectory
from cbf_invert.harness.scenario import team_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--plot", help="save trajectories to this image (needs matplotlib)")
    args = ap.parse_args()
    results = {}
    for n in (2, 3, 4):
        res = run_rollout(team_scenario(n))
        results[n] = res
        print(f"N={n}: steps={len(res.world.log)} collisions={res.collisions} "
              f"min clearance={res.min_margin:.3f} m inferred={len(res.inferred)} "
              f"reached goal={res.reached_goal}")
    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(15, 4), sharey=True)
        for ax, (n, res) in zip(axes, results.items()):
            pos = trajectory(res.world)
            for i in range(n):
                ax.plot(pos[:, i, 0], pos[:, i, 1], lw=1)
            for ob in res.spec.obstacles:
                ax.add_patch(plt.Circle(ob.theta, ob.r, color="k", alpha=0.3))
            for e in res.inferred:
                ax.plot(*e.theta, "rx")
            ax.set_aspect("equal")
            ax.set_title(f"N={n}")
        fig.savefig(args.plot, dpi=120, bbox_inches="tight")
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
