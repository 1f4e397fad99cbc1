"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import math
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from imcflab import cli
from imcflab import convexkit as ck
from imcflab import estimates as es
from imcflab.flowengine import (
    ConeLaw,
    FlowProblem,
    LinkCurve,
    StepControl,
    run,
    vt_plugin_residual,
)
from imcflab.geomcore import GraphSurface, RadialGrid, RadialSurface
from imcflab.reports import residual_report

from test_convexkit import random_nested_pair

CORPUS = Path(__file__).resolve().parent.parent / "scenarios"
LN_SQRT2 = math.log(math.sqrt(2.0))
# smallest amplitude-5 flower that is still convex is below 1/26; 0.03 is used
MEAN_CONVEX_FLOWER = lambda p: 1 + 0.03 * np.cos(5 * p)
FLOWER = lambda p: 1 + 0.3 * np.cos(5 * p)


def fixed(dt):
    return StepControl(dt_init=dt, dt_max=dt)


def scenario_traj(name):
    s = cli.parse_scenario(str(CORPUS / f"{name}.scn"))
    problem = cli.build_problem(s)
    traj = run(problem)
    traj.meta["cone"] = problem.cone
    return s, traj


def state_at(traj, t):
    return next(st for st in traj.states if abs(st.t - t) <= 1e-9)


@lru_cache(maxsize=None)
def sphere_run(n, node_count=512, dt=1e-3, t_end=1.0, cadence=50):
    return run(FlowProblem(RadialSurface.sphere(n, node_count, 1.0), fixed(dt), t_end, record_cadence=cadence))


@lru_cache(maxsize=None)
def hyperboloid_run():
    g = GraphSurface.from_function(2, 201, 10.0, lambda r: np.sqrt(1 + r * r), 1.0)
    return run(FlowProblem(g, fixed(2e-3), 1.0, cone=ConeLaw(math.pi / 4, 2), record_times=(0.5 * LN_SQRT2,)))


@lru_cache(maxsize=None)
def flat_disk_run():
    return scenario_traj("flat_disk")[1]


def star_curve_run(func, t_end=2.0):
    s = RadialSurface.from_function(1, 512, func)
    control = StepControl(dt_init=1e-3, dt_max=1e-2, adapt_rule="cfl", target_update=0.01)
    return run(FlowProblem(s, control, t_end, record_cadence=20))


# ---------------------------------------------------------------------------


def test_criterion_01_sphere_law(criterion):
    errs = {n: float(np.max(np.abs(sphere_run(n).final.surface.rho / math.exp(1.0 / n) - 1))) for n in (1, 2)}
    ok = all(e <= 1e-4 for e in errs.values()) and all(sphere_run(n).final.t == pytest.approx(1.0) for n in (1, 2))
    criterion(1, ok, f"sphere law, relative radius error n=1: {errs[1]:.2e}, n=2: {errs[2]:.2e} (tol 1e-4)")
    assert ok


def test_criterion_02_exponential_area(criterion):
    s, ellipse = scenario_traj("ellipse")
    rep = es.area_growth(ellipse, 1e-3)
    sub = es.area_growth(star_curve_run(MEAN_CONVEX_FLOWER), 1e-3)
    reached = ellipse.final.t == pytest.approx(2.0)
    ok = rep.passed and reached
    criterion(2, ok, f"ellipse max |log L/L0 - t| = {rep.constants['max_log_deviation']:.2e}; "
                     f"mean-convex flower substitute {sub.constants['max_log_deviation']:.2e}; "
                     "flower rho = 1 + 0.3 cos 5phi is strict xfail (not mean-convex)")
    assert ok and sub.passed


@pytest.mark.xfail(strict=True, reason="the flower curve has negative curvature at the inner lobes; the flow is undefined")
def test_criterion_02_flower_area():
    traj = star_curve_run(FLOWER)
    assert traj.final.t == pytest.approx(2.0), traj.event
    assert es.area_growth(traj, 1e-3).passed


def test_criterion_03_link_law(criterion):
    theta0 = math.pi / 6
    traj = run(FlowProblem(LinkCurve.geodesic_circle(theta0, 256), fixed(1e-3), 1.0, record_cadence=10))
    L0 = traj.states[0].surface.length()
    early = [st for st in traj.states if st.t <= 0.9 * math.log(2)]
    sin_dev = max(abs(math.sin(float(np.mean(st.surface.polar_angles()))) / math.sin(theta0) - math.exp(st.t))
                  for st in early)
    len_dev = max(abs(st.surface.length() / (math.exp(st.t) * L0) - 1) for st in early)
    kind, t_event, _ = traj.event
    event_dev = abs(t_event - math.log(2)) / math.log(2)
    ok = sin_dev <= 1e-3 and len_dev <= 1e-3 and kind == "equator-reached" and event_dev <= 0.01
    criterion(3, ok, f"link: sin ratio dev {sin_dev:.2e}, length dev {len_dev:.2e}, "
                     f"{kind} at {t_event:.5f} ({event_dev:.2%} from ln 2)")
    assert ok


def test_criterion_04_maximal_time(criterion):
    traj = hyperboloid_run()
    kind, t_event, _ = traj.event
    event_dev = abs(t_event - LN_SQRT2) / LN_SQRT2
    g0 = traj.states[0].surface
    mid = state_at(traj, 0.5 * LN_SQRT2).surface
    P0 = ck.perimeter(ck.tangent_cone_link(g0))
    p_dev = abs(ck.perimeter(ck.tangent_cone_link(mid)) / (math.exp(0.5 * LN_SQRT2) * P0) - 1)
    exact_cone = GraphSurface.from_function(2, 201, 10.0, lambda r: r, 1.0)
    T_cone = ck.maximal_time(ck.tangent_cone_link(exact_cone))
    T_hyp = ck.maximal_time(ck.tangent_cone_link(g0))
    ok = (kind == "maximal-time-reached" and event_dev <= 0.02 and p_dev <= 0.01
          and abs(T_cone - LN_SQRT2) <= 1e-4 and abs(T_hyp - LN_SQRT2) <= 1e-4)
    criterion(4, ok, f"cone graph alpha=1: {kind} at {t_event:.5f} ({event_dev:.2%}), blow-down perimeter "
                     f"dev {p_dev:.2e} at T/2, extracted-link T: cone {T_cone:.6f}, hyperboloid {T_hyp:.6f}")
    assert ok


def test_criterion_05_zero_maximal_time(criterion):
    north = np.array([0.0, 0.0, 1.0])
    hemi = ck.GeodesicBall(north, math.pi / 2)
    lune = ck.Lune(north, np.array([1.0, 0.0, 0.0]), math.pi / 3)
    ok = (ck.maximal_time(hemi) == 0.0 and ck.maximal_time(lune) == 0.0
          and ck.classify_degenerate(hemi) == "hemisphere" and ck.classify_degenerate(lune) == "wedge")
    criterion(5, ok, "hemisphere and pi/3-lune: T = 0 exactly, classified hemisphere / wedge")
    assert ok


def test_criterion_06_speed_estimate(criterion):
    fits, max_w = [], []
    for name, theta1 in (("speed_pi6", math.pi / 6), ("speed_pi4", math.pi / 4), ("speed_pi3", math.pi / 3)):
        s, traj = scenario_traj(name)
        T = traj.meta["cone"].maximal_time
        assert traj.final.t >= 0.9 * T * (1 - 1e-9), traj.event
        rep = es.speed_bound(traj, theta1, t_min=1e-3, t_max=0.9 * T)
        assert rep.passed
        assert rep.constants["c"] == pytest.approx((math.pi - theta1) / (math.pi - 2 * theta1))
        fits.append(rep.constants["C_fit"])
        max_w.append(rep.constants["max_w"])
    ok = (all(math.isfinite(c) and c > 0 for c in fits) and all(a >= b for a, b in zip(fits, fits[1:]))
          and all(math.isfinite(w) for w in max_w))
    criterion(6, ok, "speed bound C_fit for theta1 = pi/6, pi/4, pi/3: "
                     + ", ".join(f"{c:.4g}" for c in fits) + " (non-increasing); max w "
                     + ", ".join(f"{w:.3g}" for w in max_w))
    assert ok


def test_criterion_07_instant_regularization(criterion):
    traj = flat_disk_run()
    rows = [r for r in traj.rows if 0 < r["t"] <= 0.1 + 1e-12]
    rep = es.convexity_report(traj, "strict")
    min_H, min_lam = min(r["min_H"] for r in rows), min(r["min_lambda1"] for r in rows)
    ok = rep.passed and min_H > 0 and min_lam > 0 and traj.final.t == pytest.approx(0.1)
    criterion(7, ok, f"flat disk: min H = {min_H:.3e}, min lambda_1 = {min_lam:.3e} over t in (0, 0.1] "
                     f"(initial min lambda_1 {traj.rows[0]['min_lambda1']:.1e})")
    assert ok


def _star_levels():
    out = []
    for N in (33, 65, 129):
        dt = 0.2 * math.pi / (N - 1)
        s = RadialSurface.from_function(2, N, lambda p: 1 + 0.15 * np.cos(p) ** 2)
        out.append(run(FlowProblem(s, fixed(dt), 0.4)))
    return out


def _graph_levels():
    out = []
    for N in (41, 81, 161):
        dt = 0.1 * 6.0 / (N - 1)
        g = GraphSurface.from_function(2, N, 6.0, lambda r: np.sqrt(r * r + 1), 1.0)
        out.append(run(FlowProblem(g, fixed(dt), 0.3, cone=ConeLaw(math.pi / 4, 2))))
    return out


def test_criterion_08_identity_residuals(criterion):
    worst_order, worst_ratio, failed = math.inf, math.inf, []
    for label, levels in (("sphere", _star_levels()), ("cone graph", _graph_levels())):
        for ident in es.IDENTITIES:
            rep = es.evolution_residual(levels, ident, min_order=1.5)
            worst_order = min(worst_order, rep.order)
            worst_ratio = min(worst_ratio, min(rep.ratios))
            if not (rep.passed and min(rep.ratios) >= 2.8):
                failed.append(f"{label}/{ident}")
    ok = not failed
    criterion(8, ok, f"{2 * len(es.IDENTITIES)} identity studies at 3 levels: worst order {worst_order:.3f}, "
                     f"worst ratio {worst_ratio:.2f}" + (f"; failed {failed}" if failed else ""))
    assert ok


def test_criterion_09_hi_estimate(criterion):
    traj = star_curve_run(MEAN_CONVEX_FLOWER)
    rep = es.hi_bound(traj)
    c = rep.constants
    ok = rep.passed and c["pinching"] and math.isfinite(c["C_fit"]) and c["roundness_decreasing"]
    criterion(9, ok, f"mean-convex flower substitute: pinching {c['pinching']}, C_fit {c['C_fit']:.4g}, "
                     f"roundness {c['roundness_initial']:.4f} -> {c['roundness_final']:.4f}; "
                     "flower rho = 1 + 0.3 cos 5phi is strict xfail (not mean-convex)")
    assert ok


@pytest.mark.xfail(strict=True, reason="the flower curve has negative curvature at the inner lobes; the flow is undefined")
def test_criterion_09_flower_hi():
    traj = star_curve_run(FLOWER)
    assert traj.final.t == pytest.approx(2.0), traj.event
    assert es.hi_bound(traj).passed


def test_criterion_10_local_H(criterion):
    cases = {
        "sphere": (sphere_run(2), (0.0, 0.0, 1.0)),
        "cone": (hyperboloid_run(), (0.0, 0.0, 1.0)),
        "flat disk": (flat_disk_run(), (0.0, 0.0, 0.0)),
    }
    ratios, ok = [], True
    for label, (traj, center) in cases.items():
        for r in (1.0, 4.0):
            rep = es.local_H_bound(traj, center, r)
            ok = ok and rep.passed and not rep.constants["empty_initial_intersection"]
            ratios.append(rep.worst_ratio)
    empties = [es.local_H_bound(flat_disk_run(), (0.0, 0.0, -0.5), 0.45),
               es.local_H_bound(sphere_run(2), (0.0, 0.0, 2.05), 1.0)]
    for rep in empties:
        ok = ok and rep.passed and rep.constants["empty_initial_intersection"]
        # the ball must actually be reached later for the empty case to say anything
        ok = ok and max(m for _, m, _ in rep.series) > 0
    criterion(10, ok, f"local H on sphere/cone/flat disk, r in {{1, 4}}: worst measured/envelope "
                      f"{max(ratios):.3f}; empty-intersection cases pass")
    assert ok


def test_criterion_11_comparison_and_innermost(criterion):
    marks = tuple(round(0.03 * i, 12) for i in range(1, 11))
    nested = [run(FlowProblem(RadialSurface.sphere(2, 129, r), fixed(2e-3), 0.3, record_times=marks,
                              record_cadence=10 ** 6)) for r in (1.0, 1.5, 2.0)]
    links = [run(FlowProblem(LinkCurve.geodesic_circle(a, 256), fixed(2e-3), 0.6, record_times=marks,
                             record_cadence=10 ** 6)) for a in (math.pi / 8, math.pi / 6)]
    g = GraphSurface.from_function(2, 201, 10.0, lambda r: np.sqrt(1 + r * r), 1.0)
    cone = run(FlowProblem(g, fixed(2e-3), 0.3, cone=ConeLaw(math.pi / 4, 2), record_times=marks,
                           record_cadence=10 ** 6))
    ball = run(FlowProblem(RadialSurface.sphere(2, 257, 1.0, origin=(0.0, 0.0, 3.0)), fixed(2e-3), 0.3,
                           record_times=marks, record_cadence=10 ** 6))
    reports = {"spheres": es.comparison_monotonicity(nested), "links": es.comparison_monotonicity(links),
               "sphere-in-cone": es.comparison_monotonicity([ball, cone])}

    square = ck.PlanarPolygon(np.array([[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]]))
    times = tuple(round(0.1 * i, 12) for i in range(1, 11))
    family = {}
    for k in (8, 16, 32, 64):
        inner, _ = ck.inner_outer_approx(square, k)
        s = RadialSurface.from_function(1, 256, inner.radial_function)
        family[k] = run(FlowProblem(s, fixed(2e-3), 1.0, record_times=times, record_cadence=10 ** 6))
    reports["innermost family"] = es.comparison_monotonicity([family[k] for k in (8, 16, 32, 64)])
    monotone = True
    for t in times:
        ref = ck.hull_support(state_at(family[64], t).surface.meridian_points())
        d = [ck.hausdorff_distance(ck.hull_support(state_at(family[k], t).surface.meridian_points()), ref)
             for k in (8, 16, 32)]
        monotone = monotone and d[0] > d[1] > d[2]
        if t == 0.5:
            d_half = d
    ok = monotone and all(r.passed and r.constants["skipped"] == 0 for r in reports.values())
    criterion(11, ok, "containment at matched times: " + ", ".join(
        f"{k} {'ok' if r.passed else 'FAIL'}" for k, r in reports.items())
        + f"; Hausdorff to k=64 at t=0.5 for k=8,16,32: " + ", ".join(f"{x:.4f}" for x in d_half))
    assert ok


def test_criterion_12_pancake(criterion):
    s, traj = scenario_traj("pancake")
    ts = np.array([st.t for st in traj.states])
    # the body stays centrally symmetric, so its inradius is min rho about the centre
    inradius = np.array([float(np.min(st.surface.rho)) for st in traj.states])
    pos = ts > 0
    c = float(np.min(inradius[pos] / ts[pos]))
    ok = traj.final.t == pytest.approx(0.2) and c > 0 and bool(np.all(inradius >= c * ts))
    criterion(12, ok, f"pancake R=1, eps=0.005: inradius(t) >= c t on [0, 0.2] with c = {c:.4f}")
    assert ok


def test_criterion_13_ultrafast(criterion):
    grids = [RadialGrid(N, 5.0, 0.5) for N in (181, 361, 721)]
    rep = residual_report("vt_plugin", [vt_plugin_residual(g, 1.0, 3, 0.5) for g in grids],
                          [g.spacing for g in grids], min_order=1.9)
    s, traj = scenario_traj("ultrafast")
    kind, t_ext, _ = traj.event
    ok = rep.passed and kind == "extinction" and abs(t_ext - 1.0) <= 0.05
    criterion(13, ok, f"v^T plug-in residual order {rep.order:.3f}; {kind} at t = {t_ext:.4f} (T = 1)")
    assert ok


def test_criterion_14_convex_toolkit(criterion):
    rng = np.random.default_rng(14)
    x = rng.normal(size=(10_000, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    x[:, 2] = np.abs(x[:, 2])
    x = x[x[:, 2] > 1e-3]
    trip = float(np.max(np.abs(ck.gnomonic_inverse(ck.gnomonic(x)) - x)))
    pairs_ok = all(ck.outer_area_monotonicity(*random_nested_pair(rng)).passed for _ in range(1000))
    seg = ck.GeodesicSegment(np.array([math.sin(0.4), 0.0, math.cos(0.4)]),
                             np.array([-math.sin(0.4), 0.0, math.cos(0.4)]))
    deltas = [0.2, 0.1, 0.05, 0.025, 0.0125]
    P = [ck.segment_envelope_perimeter(seg, d, rays=16384) for d in deltas]
    env_ok = all(a > b for a, b in zip(P, P[1:])) and all(p > 2 * seg.length for p in P)
    C = max((p - 2 * seg.length) / d for p, d in zip(P, deltas))
    ok = trip <= 1e-12 and pairs_ok and env_ok
    criterion(14, ok, f"gnomonic round trip {trip:.1e}; 1000 nested pairs monotone: {pairs_ok}; "
                      f"envelope perimeters decrease to 2L from above, |P - 2L| <= {C:.3f} delta")
    assert ok
