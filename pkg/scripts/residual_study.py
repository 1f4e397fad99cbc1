"""Convergence table of the evolution-identity residuals on a star surface and a graph."""

import argparse
import math

import numpy as np

from imcflab import estimates as es
from imcflab.flowengine import ConeLaw, FlowProblem, StepControl, run
from imcflab.geomcore import GraphSurface, RadialSurface


def star_levels(base, levels):
    out = []
    for k in range(levels):
        N = (base - 1) * 2 ** k + 1
        dt = 0.2 * math.pi / (N - 1)
        s = RadialSurface.from_function(2, N, lambda p: 1 + 0.15 * np.cos(p) ** 2)
        out.append(run(FlowProblem(s, StepControl(dt_init=dt, dt_max=dt), 0.4)))
    return out


def graph_levels(base, levels, r_max=6.0):
    out = []
    for k in range(levels):
        N = (base - 1) * 2 ** k + 1
        dt = 0.1 * r_max / (N - 1)
        g = GraphSurface.from_function(2, N, r_max, lambda r: np.sqrt(r * r + 1), 1.0)
        out.append(run(FlowProblem(g, StepControl(dt_init=dt, dt_max=dt), 0.3, cone=ConeLaw(math.pi / 4, 2))))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()
    for label, trajs in (("perturbed sphere", star_levels(33, args.levels)),
                         ("hyperboloid graph", graph_levels(41, args.levels))):
        print(f"== {label}")
        for ident in es.IDENTITIES:
            print(es.evolution_residual(trajs, ident).to_text())


if __name__ == "__main__":
    main()
