import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imcflab.flowengine import (
    ConeLaw,
    FlowProblem,
    FlowSignal,
    LinkCurve,
    StepControl,
    UltrafastProfile,
    far_field_slope,
    run,
    vt_plugin_residual,
    vt_profile,
)
from imcflab.geomcore import GraphSurface, RadialGrid, RadialSurface


def sphere_radius_error(dt, scheme, n=2, t_end=0.5):
    s = RadialSurface.sphere(n, 65, 1.0)
    traj = run(FlowProblem(s, StepControl(dt_init=dt, dt_max=dt, scheme=scheme), t_end))
    return float(np.max(np.abs(traj.final.surface.rho - math.exp(t_end / n))))


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(dt_init=0.0)
    with pytest.raises(ValueError):
        StepControl(dt_init=1e-2, dt_max=1e-3)
    with pytest.raises(ValueError):
        StepControl(adapt_rule="magic")
    with pytest.raises(ValueError):
        StepControl(newton_tol=1e-3)


def test_bdf2_is_second_order_on_sphere():
    e = [sphere_radius_error(dt, "bdf2") for dt in (0.05, 0.025, 0.0125)]
    orders = [math.log2(a / b) for a, b in zip(e, e[1:])]
    assert min(orders) > 1.8, orders
    assert e[-1] < 1e-4


def test_euler_is_first_order_on_sphere():
    e = [sphere_radius_error(dt, "euler") for dt in (0.05, 0.025)]
    assert 0.8 < math.log2(e[0] / e[1]) < 1.2


@settings(max_examples=10)
@given(st.sampled_from([1, 2, 3]), st.floats(0.3, 3.0))
def test_sphere_grows_exponentially(n, r0):
    s = RadialSurface.sphere(n, 33, r0)
    traj = run(FlowProblem(s, StepControl(dt_init=5e-3, dt_max=5e-3), 0.2))
    assert np.allclose(traj.final.surface.rho, r0 * math.exp(0.2 / n), rtol=1e-4)
    areas = [row["area"] for row in traj.rows]
    assert np.allclose(areas, areas[0] * np.exp(np.array([row["t"] for row in traj.rows])), rtol=1e-4)


def test_zero_horizon_returns_initial_state():
    traj = run(FlowProblem(RadialSurface.sphere(2, 33), StepControl(), 0.0))
    assert len(traj.states) == 1 and traj.final.t == 0.0


def test_record_times_are_hit_exactly():
    marks = (0.05, 0.1234, 0.2)
    traj = run(FlowProblem(RadialSurface.sphere(2, 33), StepControl(dt_init=0.03, dt_max=0.03), 0.25,
                           record_cadence=1000, record_times=marks))
    times = set(round(t, 12) for t in traj.times)
    assert all(round(m, 12) in times for m in marks)
    assert traj.final.t == pytest.approx(0.25)


def link_circle_error(dt, theta0=math.pi / 6, t_end=0.4):
    curve = LinkCurve.geodesic_circle(theta0, 256)
    traj = run(FlowProblem(curve, StepControl(dt_init=dt, dt_max=dt), t_end))
    exact = math.asin(math.sin(theta0) * math.exp(t_end))
    return float(np.max(np.abs(traj.final.surface.polar_angles() - exact)))


def test_link_circle_follows_sine_law():
    e1, e2 = link_circle_error(4e-3), link_circle_error(2e-3)
    assert e1 / e2 > 3.5
    assert e2 < 2e-5


def wobbly_link(m=256):
    t = 2 * np.pi * np.arange(m) / m
    th = 0.4 * (1 + 0.1 * np.cos(2 * t))
    return LinkCurve(np.column_stack([np.sin(th) * np.cos(t), np.sin(th) * np.sin(t), np.cos(th)]), (0, 0, 1))


def test_link_scheme_second_order_through_redistribution():
    lengths = []
    for dt in (4e-3, 2e-3, 2.5e-4):
        traj = run(FlowProblem(wobbly_link(), StepControl(dt_init=dt, dt_max=dt, k_redistribute=20), 0.3))
        lengths.append(traj.final.surface.length())
    e1, e2 = abs(lengths[0] - lengths[2]), abs(lengths[1] - lengths[2])
    assert e1 / e2 > 3.3


def test_link_reaching_hemisphere_signals():
    curve = LinkCurve.geodesic_circle(math.pi / 3, 128)
    traj = run(FlowProblem(curve, StepControl(dt_init=5e-3, dt_max=5e-3), 1.0))
    assert traj.event is not None
    assert traj.event[1] <= -math.log(math.sin(math.pi / 3)) + 1e-2


def test_cone_law():
    law = ConeLaw(math.pi / 4, 2)
    assert law.maximal_time == pytest.approx(math.log(math.sqrt(2)))
    assert law.slope(0.0) == pytest.approx(1.0)
    with pytest.raises(FlowSignal):
        law.slope(law.maximal_time + 1e-9)


def test_graph_flow_needs_cone():
    g = GraphSurface.from_function(2, 41, 6.0, lambda r: np.sqrt(1 + r * r), 1.0)
    with pytest.raises(ValueError):
        run(FlowProblem(g, StepControl(), 0.1))


def test_hyperboloid_stays_convex_and_tracks_cone():
    law = ConeLaw(math.pi / 4, 2)
    g = GraphSurface.from_function(2, 81, 6.0, lambda r: np.sqrt(1 + r * r), 1.0)
    traj = run(FlowProblem(g, StepControl(dt_init=5e-3, dt_max=5e-3), 0.2, cone=law))
    assert traj.event[0] == "completed"
    assert min(row["min_H"] for row in traj.rows) > 0
    assert min(row["min_lambda1"] for row in traj.rows) > 0
    assert traj.final.surface.asymptotic_slope == pytest.approx(law.slope(0.2))
    # the surface moves away from the convex region above it
    u = [s.surface.u[0] for s in traj.states]
    assert all(a > b for a, b in zip(u, u[1:]))


def test_far_field_slope_of_exact_cone():
    grid = RadialGrid(101, 10.0)
    assert far_field_slope(2.0 * grid.nodes + 1.0, grid, 2.0) == pytest.approx(2.0, abs=1e-8)


def test_vt_plugin_residual_is_second_order():
    res = [vt_plugin_residual(RadialGrid(N, 5.0, 0.5), 1.0, 3, 0.0) for N in (181, 361, 721)]
    orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
    assert min(orders) > 1.85 and orders[-1] > 1.9


def ultrafast_error(N, T=1.0, n=3, t_end=0.5):
    grid = RadialGrid(N, 5.0, 0.5)
    prof = UltrafastProfile(grid, vt_profile(grid.nodes, T, n, 0.0), n)
    lo, hi = np.array([0.5]), np.array([5.0])
    bnd = lambda t: (float(vt_profile(lo, T, n, t)[0]), float(vt_profile(hi, T, n, t)[0]))
    traj = run(FlowProblem(prof, StepControl(dt_init=5e-3, dt_max=5e-3), t_end, boundary=bnd))
    exact = vt_profile(grid.nodes, T, n, t_end)
    return float(np.max(np.abs(traj.final.surface.u - exact) / exact))


def test_ultrafast_flow_converges_to_explicit_profile():
    e1, e2 = ultrafast_error(91), ultrafast_error(181)
    assert e1 / e2 > 3.5
    assert e2 < 1e-3


def test_ultrafast_profile_validation():
    grid = RadialGrid(11, 2.0, 0.5)
    with pytest.raises(ValueError):
        UltrafastProfile(grid, -np.ones(11), 3)
    with pytest.raises(ValueError):
        UltrafastProfile(RadialGrid(11, 2.0), np.ones(11), 3)
    assert UltrafastProfile(grid, np.zeros(11), 3, extinct=True).extinct
