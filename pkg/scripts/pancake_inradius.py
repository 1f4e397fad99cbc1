"""Inradius growth of the evolving pancake and the fitted linear constant."""

import argparse

import numpy as np

from imcflab import barriers
from imcflab.flowengine import FlowProblem, StepControl, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--R", type=float, default=1.0)
    ap.add_argument("--eps", type=float, default=0.005)
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--nodes", type=int, default=4097)
    ap.add_argument("--t-end", type=float, default=0.2)
    args = ap.parse_args()
    pc = barriers.pancake_construction(args.R, args.eps, args.delta, 2, args.nodes)
    print(f"mollified slab: delta used {pc.delta_used:.3g}, retries {pc.retries}, c_measured {pc.c_measured:.4g}")
    control = StepControl(dt_init=1e-6, dt_max=1e-2, adapt_rule="cfl", target_update=0.05)
    traj = run(FlowProblem(pc.surface, control, args.t_end, record_cadence=10))
    t = traj.times
    inr = np.array([np.min(st.surface.rho) for st in traj.states])
    c = float(np.min(inr[t > 0] / t[t > 0]))
    print(f"{'t':>10} {'inradius':>12} {'inradius/t':>12}")
    for ti, ri in zip(t, inr):
        print(f"{ti:10.5f} {ri:12.6f} {ri / ti if ti > 0 else float('inf'):12.4f}")
    print(f"fitted c = {c:.4f}")


if __name__ == "__main__":
    main()
