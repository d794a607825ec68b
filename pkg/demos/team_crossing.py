"""Two 2-agent teams cross diagonally, each treating the other as a moving obstacle.

    python demos/team_crossing.py [--plot out.png]
"""

import argparse

import numpy as np

from cbf_invert.harness.multiteam import CrossingParams, run_crossing


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--stagger", type=float, default=CrossingParams.stagger)
    ap.add_argument("--plot", help="save the center distance to this image (needs matplotlib)")
    args = ap.parse_args()
    p = CrossingParams(stagger=args.stagger)
    res = run_crossing(p)
    print(f"steps={len(res.center_distance) - 1} halted={res.halted}")
    print(f"min center distance {res.min_center_distance:.3f} m (threshold {p.r_safe} m) "
          f"at step {int(np.argmin(res.center_distance))}")
    for msg in res.messages:
        print("halt:", msg)
    if args.plot:
        import matplotlib.pyplot as plt

        t = np.arange(len(res.center_distance)) * p.dt
        plt.plot(t, res.center_distance, label="team centers")
        plt.axhline(p.r_safe, color="r", ls="--", label="threshold")
        plt.xlabel("time [s]")
        plt.ylabel("distance [m]")
        plt.legend()
        plt.savefig(args.plot, dpi=120, bbox_inches="tight")
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
