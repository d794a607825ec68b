"""Text map of where Newton inference and input matching recover the obstacle.

    python demos/convergence_map.py [--resolution 21]

``#`` converged to the true obstacle, ``o`` converged elsewhere, ``.`` diverged,
``L`` marks the learner.
"""

import argparse

import numpy as np

from cbf_invert.harness import sweep

GLYPH = {sweep.CONVERGED_TRUE: "#", sweep.CONVERGED_WRONG: "o", sweep.DIVERGED: "."}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--resolution", type=int, default=21)
    args = ap.parse_args()
    n = args.resolution
    scn = sweep.two_active_scenario()
    cells = sweep.newton_region_sweep(scn, resolution=n)
    lo, hi = sweep.default_grid(scn)
    li = np.rint((scn.learner - lo) / (np.array(hi) - lo) * (n - 1)).astype(int)
    print(f"true obstacle {np.round(scn.theta, 3)}, learner {np.round(scn.learner, 3)}")
    for method in sweep.METHODS:
        mine = [c for c in cells if c.method == method]
        print(f"\n{method}: {sweep.fractions(cells, method)[sweep.CONVERGED_TRUE]:.1%} converged_true")
        for row in reversed(range(n)):
            line = "".join("L" if (col, row) == tuple(li) else GLYPH[mine[row * n + col].outcome]
                           for col in range(n))
            print("  " + line)


if __name__ == "__main__":
    main()
