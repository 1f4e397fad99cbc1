"""Flows of smooth inner approximants of a square: nesting and Hausdorff convergence in k."""

import numpy as np

from imcflab import convexkit as ck
from imcflab import estimates as es
from imcflab.flowengine import FlowProblem, StepControl, run
from imcflab.geomcore import RadialSurface

KS = (8, 16, 32, 64)


def main():
    square = ck.PlanarPolygon(np.array([[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]]))
    times = tuple(round(0.1 * i, 12) for i in range(1, 11))
    family = {}
    for k in KS:
        inner, _ = ck.inner_outer_approx(square, k)
        s = RadialSurface.from_function(1, 256, inner.radial_function)
        control = StepControl(dt_init=2e-3, dt_max=2e-3)
        family[k] = run(FlowProblem(s, control, 1.0, record_times=times, record_cadence=10 ** 6))
    rep = es.comparison_monotonicity([family[k] for k in KS])
    print(f"nested at all matched times: {rep.passed}")
    print(f"{'t':>6} " + " ".join(f"{'d(' + str(k) + ')':>10}" for k in KS[:-1]))
    for t in times:
        hulls = {k: ck.hull_support(next(s for s in family[k].states if abs(s.t - t) < 1e-9).surface.meridian_points())
                 for k in KS}
        d = [ck.hausdorff_distance(hulls[k], hulls[KS[-1]]) for k in KS[:-1]]
        print(f"{t:6.2f} " + " ".join(f"{x:10.5f}" for x in d))


if __name__ == "__main__":
    main()
