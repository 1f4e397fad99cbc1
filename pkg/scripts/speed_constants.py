"""Fitted speed-bound constants C(theta1) for the three hyperboloid scenarios."""

import math
from pathlib import Path

from imcflab import cli
from imcflab import estimates as es
from imcflab.flowengine import run

CORPUS = Path(__file__).resolve().parent.parent / "scenarios"


def main():
    print(f"{'theta1':>8} {'c':>8} {'C_fit':>12} {'max_w':>10}  trend")
    for name in ("speed_pi6", "speed_pi4", "speed_pi3"):
        s = cli.parse_scenario(str(CORPUS / f"{name}.scn"))
        problem = cli.build_problem(s)
        traj = run(problem)
        theta1 = s.verifications[0].params["theta1"]
        rep = es.speed_bound(traj, theta1, t_max=0.9 * problem.cone.maximal_time)
        c = rep.constants
        print(f"{theta1:8.4f} {c['c']:8.4f} {c['C_fit']:12.6g} {c['max_w']:10.4g}  {c['w_tail_trend']}")


if __name__ == "__main__":
    main()
