import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imcflab import convexkit as ck
from imcflab.geomcore import AngularGrid, GraphSurface

NORTH = np.array([0.0, 0.0, 1.0])


def random_unit(rng, near=None, spread=1.0):
    v = rng.normal(size=3)
    if near is not None:
        v = near + spread * v
    return v / np.linalg.norm(v)


def cap_frame(c):
    a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - (a @ c) * c
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(c, e1)


def inscribed_polygon(c, radius, angles):
    e1, e2 = cap_frame(c)
    pts = [math.cos(radius) * c + math.sin(radius) * (math.cos(t) * e1 + math.sin(t) * e2) for t in angles]
    return ck.SphericalPolygon(np.array([p / np.linalg.norm(p) for p in pts]))


def random_nested_pair(rng):
    c_out = random_unit(rng)
    r_out = rng.uniform(0.2, math.pi / 2)
    kind = rng.integers(3)
    # inner cap centre within the outer cap, radius leaving room
    d = rng.uniform(0, 0.5 * r_out)
    e1, _ = cap_frame(c_out)
    c_in = math.cos(d) * c_out + math.sin(d) * e1
    r_in = rng.uniform(0.05, 0.95) * (r_out - d)
    if kind == 0:
        inner = ck.GeodesicBall(c_in, r_in)
    elif kind == 1:
        m = int(rng.integers(3, 9))
        angles = np.sort(rng.uniform(0, 2 * math.pi, m))
        gaps = np.diff(np.concatenate([angles, angles[:1] + 2 * math.pi]))
        if np.max(gaps) >= math.pi:
            angles = 2 * math.pi * np.arange(m) / m + angles[0]
        inner = inscribed_polygon(c_in, r_in, angles)
    else:
        e1i, _ = cap_frame(c_in)
        a = 0.9 * r_in
        p = math.cos(a) * c_in + math.sin(a) * e1i
        q = math.cos(a) * c_in - math.sin(a) * e1i
        inner = ck.GeodesicSegment(p / np.linalg.norm(p), q / np.linalg.norm(q))
    return inner, ck.GeodesicBall(c_out, r_out)


def test_perimeter_monotone_on_1000_nested_pairs():
    rng = np.random.default_rng(20261014)
    for _ in range(1000):
        inner, outer = random_nested_pair(rng)
        assert ck.link_contains(outer, inner)
        rep = ck.outer_area_monotonicity(inner, outer)
        assert rep.passed, (inner, outer, rep.constants)


def test_not_nested_is_rejected():
    with pytest.raises(ck.NotNested):
        ck.outer_area_monotonicity(ck.GeodesicBall(NORTH, 0.5), ck.GeodesicBall(NORTH, 0.3))


def test_gnomonic_round_trip_10k_points():
    rng = np.random.default_rng(7)
    x = rng.normal(scale=3.0, size=(10_000, 2))
    back = ck.gnomonic(ck.gnomonic_inverse(x))
    assert np.max(np.abs(back - x) / np.maximum(1.0, np.abs(x))) <= 1e-12
    p = ck.gnomonic_inverse(x)
    assert np.allclose(ck.gnomonic_inverse(ck.gnomonic(p)), p, atol=1e-12)


def test_gnomonic_round_trip_uniform_northern_points():
    rng = np.random.default_rng(11)
    p = rng.normal(size=(10_000, 3))
    p /= np.linalg.norm(p, axis=1)[:, None]
    p[:, 2] = np.abs(p[:, 2])
    p = p[p[:, 2] > 1e-3]
    assert np.max(np.abs(ck.gnomonic_inverse(ck.gnomonic(p)) - p)) <= 1e-12


def test_worked_nested_examples():
    small, big = ck.GeodesicBall(NORTH, math.pi / 6), ck.GeodesicBall(NORTH, math.pi / 4)
    rep = ck.outer_area_monotonicity(small, big)
    assert rep.passed
    assert rep.constants["P_inner"] == pytest.approx(math.pi)
    assert rep.constants["P_outer"] == pytest.approx(math.pi * math.sqrt(2))
    seg = ck.GeodesicSegment(np.array([math.sin(0.25), 0, math.cos(0.25)]),
                             np.array([-math.sin(0.25), 0, math.cos(0.25)]))
    rep = ck.outer_area_monotonicity(seg, big)
    assert rep.passed and rep.constants["P_inner"] == pytest.approx(1.0)
    same = ck.outer_area_monotonicity(big, big)
    assert same.passed and same.constants["P_inner"] == same.constants["P_outer"]


def random_link(rng):
    kind = rng.integers(5)
    c = random_unit(rng)
    if kind == 0:
        return ck.GeodesicBall(c, math.pi / 2 if rng.random() < 0.3 else rng.uniform(0.05, math.pi / 2))
    if kind == 1:
        e1, _ = cap_frame(c)
        return ck.Lune(c, e1, rng.uniform(0.1, math.pi))
    if kind == 2:
        return ck.SinglePoint(c)
    if kind == 3:
        e1, _ = cap_frame(c)
        a = rng.uniform(0.05, 1.4)
        return ck.GeodesicSegment(math.cos(a) * c + math.sin(a) * e1, math.cos(a) * c - math.sin(a) * e1)
    m = int(rng.integers(3, 8))
    return inscribed_polygon(c, rng.uniform(0.1, 1.4), 2 * math.pi * np.arange(m) / m)


def test_zero_maximal_time_iff_degenerate_on_random_corpus():
    rng = np.random.default_rng(3)
    for _ in range(300):
        link = random_link(rng)
        T = ck.maximal_time(link)
        assert (T == 0.0) == (ck.classify_degenerate(link) in ("hemisphere", "wedge")), link


def test_gnomonic_chart_domain():
    with pytest.raises(ck.OutOfChart):
        ck.gnomonic([1.0, 0.0, 0.0])


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_gnomonic_round_trip_property(a, b):
    x = np.array([a, b])
    assert np.allclose(ck.gnomonic(ck.gnomonic_inverse(x)), x, rtol=1e-12, atol=1e-12)


@given(st.floats(0.01, math.pi / 2))
def test_maximal_time_zero_iff_hemisphere(radius):
    link = ck.GeodesicBall(NORTH, radius)
    T = ck.maximal_time(link)
    assert (T == 0.0) == (abs(radius - math.pi / 2) <= 1e-12)
    assert T == pytest.approx(-math.log(math.sin(radius)), abs=1e-12)


@given(st.floats(0.05, math.pi))
def test_wedges_have_zero_maximal_time(angle):
    lune = ck.Lune(NORTH, np.array([1.0, 0.0, 0.0]), angle)
    assert ck.maximal_time(lune) == 0.0
    assert ck.classify_degenerate(lune) == "wedge"


def test_degenerate_classification():
    assert ck.classify_degenerate(ck.GeodesicBall(NORTH, math.pi / 2)) == "hemisphere"
    assert ck.classify_degenerate(ck.GeodesicBall(NORTH, 1.0)) == "generic"
    assert ck.maximal_time(ck.SinglePoint(NORTH)) == math.inf


def test_segment_perimeter_doubling():
    seg = ck.GeodesicSegment(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    assert ck.perimeter(seg) == pytest.approx(math.pi)
    assert ck.maximal_time(seg) == pytest.approx(math.log(2.0))


def test_segment_envelope_converges_from_above():
    p = np.array([math.sin(0.4), 0.0, math.cos(0.4)])
    q = np.array([-math.sin(0.4), 0.0, math.cos(0.4)])
    seg = ck.GeodesicSegment(p, q)
    deltas = [0.2, 0.1, 0.05, 0.025, 0.0125]
    vals = [ck.segment_envelope_perimeter(seg, d, rays=16384) for d in deltas]
    for d, v in zip(deltas, vals):
        assert v == pytest.approx(ck.segment_envelope_perimeter_exact(seg.length, d), rel=1e-5)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(v > 2 * seg.length for v in vals)
    assert vals[-1] - 2 * seg.length < 0.1
    # the excess is linear in delta, with constant near 2 pi
    C = max((v - 2 * seg.length) / d for d, v in zip(deltas, vals))
    assert C < 2 * math.pi + 1e-3


def test_tangent_cone_link_of_cone_and_hyperboloid():
    cone = GraphSurface.from_function(2, 201, 10.0, lambda r: r, 1.0)
    assert ck.tangent_cone_link(cone).radius == pytest.approx(math.pi / 4, abs=1e-12)
    hyp = GraphSurface.from_function(2, 201, 10.0, lambda r: np.sqrt(1 + r * r), 1.0)
    assert ck.maximal_time(ck.tangent_cone_link(hyp)) == pytest.approx(math.log(math.sqrt(2)), abs=1e-4)


def test_tangent_cone_missing_for_paraboloid():
    g = GraphSurface.from_function(2, 201, 10.0, lambda r: r * r, 0.0)
    with pytest.raises(ck.NoCone):
        ck.tangent_cone_link(g)


square = ck.PlanarPolygon(np.array([[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]]))


@st.composite
def disks(draw):
    return ck.SupportSamples.disk(draw(st.floats(0.1, 3.0)), 256,
                                  (draw(st.floats(-2, 2)), draw(st.floats(-2, 2))))


@given(disks(), disks(), disks())
def test_hausdorff_is_a_metric(A, B, C):
    dAB, dBA = ck.hausdorff_distance(A, B), ck.hausdorff_distance(B, A)
    assert dAB == pytest.approx(dBA)
    assert ck.hausdorff_distance(A, A) == 0.0
    assert ck.hausdorff_distance(A, C) <= dAB + ck.hausdorff_distance(B, C) + 1e-12


@given(st.floats(0.1, 2), st.floats(0.1, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_hausdorff_of_disks_closed_form(r1, r2, x, y):
    A = ck.SupportSamples.disk(r1, 512)
    B = ck.SupportSamples.disk(r2, 512, (x, y))
    d = ck.hausdorff_distance(A, B)
    exact = abs(r1 - r2) + math.hypot(x, y) if (x, y) != (0, 0) else abs(r1 - r2)
    # sampled directions: exact up to the angular resolution
    assert exact - 1e-3 * (1 + exact) <= d <= exact + 1e-12


@st.composite
def polygons(draw):
    m = draw(st.integers(3, 8))
    r = draw(st.floats(0.2, 2.0))
    cx, cy = draw(st.floats(-1, 1)), draw(st.floats(-1, 1))
    phase = draw(st.floats(0, 2 * math.pi))
    t = phase + 2 * math.pi * np.arange(m) / m
    return ck.PlanarPolygon(np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)]))


@given(polygons(), polygons(), polygons())
def test_hausdorff_metric_on_polygons(A, B, C):
    dAB = ck.hausdorff_distance(A, B)
    assert dAB == ck.hausdorff_distance(B, A)
    assert ck.hausdorff_distance(A, A) == 0.0
    assert ck.hausdorff_distance(A, C) <= dAB + ck.hausdorff_distance(B, C) + 1e-10


def test_hausdorff_exact_for_polygons():
    shifted = ck.PlanarPolygon(square.vertices + np.array([0.5, 0.0]))
    assert ck.hausdorff_distance(square, shifted) == pytest.approx(0.5)


def test_inner_outer_approximants_bracket_and_shrink():
    grid = AngularGrid(1024)
    h = square.support(grid)
    prev = None
    for k in (8, 16, 32):
        inner, outer = ck.inner_outer_approx(square, k)
        assert np.all(inner.h <= h + 1e-12) and np.all(outer.h >= h - 1e-12)
        d = ck.hausdorff_distance(inner, ck.SupportSamples(grid, h))
        if prev is not None:
            assert d < prev
        prev = d


def test_delta_envelope_support_shift():
    env = ck.delta_envelope(square, 0.25)
    assert ck.hausdorff_distance(env, ck.to_support(square, env.grid)) == pytest.approx(0.25)


def test_hull_support_of_square_vertices():
    hs = ck.hull_support(square.vertices, 512)
    assert np.allclose(hs.h, square.support(hs.grid))


def test_radial_function_requires_interior_origin():
    off = ck.SupportSamples.disk(0.5, 256, (2.0, 0.0))
    with pytest.raises(ck.RecenterRequired):
        off.radial_function(np.zeros(3))
