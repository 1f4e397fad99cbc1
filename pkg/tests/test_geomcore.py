import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imcflab.geomcore import (
    AngularGrid,
    Ball,
    GeometryError,
    GraphSurface,
    RadialGrid,
    RadialSurface,
    area,
    arclength_derivative,
    curvature,
    laplace_beltrami,
    sphere_measure,
    support_angle,
)


def test_sphere_measure_values():
    assert sphere_measure(0) == pytest.approx(2.0)
    assert sphere_measure(1) == pytest.approx(2 * math.pi)
    assert sphere_measure(2) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_round_sphere_curvature(n):
    s = RadialSurface.sphere(n, 257, 2.0)
    cd = curvature(s)
    assert np.allclose(cd.H, n / 2.0, atol=1e-10)
    assert np.allclose(cd.lambda1, 0.5, atol=1e-10)
    assert np.allclose(cd.F_dot_nu, 2.0, atol=1e-12)
    cd.check()


def _ellipse_errors(N):
    s = RadialSurface.ellipse(N, 2.0, 1.0)
    cd = curvature(s)
    t = np.linspace(0, 2 * math.pi, 400001)
    perimeter = np.trapezoid(np.hypot(2 * np.sin(t), np.cos(t)), t) if hasattr(np, "trapezoid") else \
        np.trapz(np.hypot(2 * np.sin(t), np.cos(t)), t)
    return abs(cd.H[0] - 2.0), abs(cd.H[N // 4] - 0.25), abs(area(s) - perimeter)


def test_ellipse_curvature_closed_form():
    # kappa = ab / (a^2 sin^2 t + b^2 cos^2 t)^{3/2}: 2 at (2, 0) and 1/4 at (0, 1)
    coarse, fine = _ellipse_errors(1024), _ellipse_errors(2048)
    assert coarse[0] < 2e-4 and coarse[1] < 1e-5
    for c, f in zip(coarse, fine):
        assert c / f > 3.5


def test_sphere_area_n2():
    s = RadialSurface.sphere(2, 513, 1.5)
    assert area(s) == pytest.approx(4 * math.pi * 1.5 ** 2, rel=1e-5)


def test_restricted_area_of_cap():
    # cap of the unit sphere inside the ball of radius r about the north pole
    r = 1.0
    s = RadialSurface.sphere(2, 2049)
    cap = area(s, Ball((0.0, 0.0, 1.0), r))
    h = r * r / 2
    assert cap == pytest.approx(2 * math.pi * h, rel=1e-4)


def test_cone_graph_support_angle_and_zero_curvature():
    g = GraphSurface.from_function(2, 201, 10.0, lambda r: r, 1.0)
    assert support_angle(g, [0, 0, 1]) == pytest.approx(math.pi / 4, abs=1e-12)
    cd = curvature(g)
    # the rulings are straight lines
    assert np.max(np.abs(cd.kappa_meridian[2:-2])) < 1e-10


def test_hyperboloid_mean_curvature():
    g = GraphSurface.from_function(2, 401, 5.0, lambda r: np.sqrt(1 + r * r), 1.0)
    cd = curvature(g)
    r = g.r
    W = np.sqrt(1 + r * r / (1 + r * r))
    exact = (1 / (1 + r * r) ** 1.5) / W ** 3 + (1 / np.sqrt(1 + r * r)) / W
    assert np.max(np.abs(cd.H[1:-3] - exact[1:-3])) < 1e-3


def test_nonconvex_graph_rejected():
    with pytest.raises(GeometryError):
        GraphSurface.from_function(2, 50, 2.0, lambda r: -r * r)


def test_grid_validation():
    with pytest.raises(ValueError):
        AngularGrid(2)
    with pytest.raises(ValueError):
        RadialGrid(10, -1.0)


def test_laplacian_of_height_on_sphere():
    # Delta z = -n z / R^2 on a round sphere of radius R
    n, R = 2, 1.3
    s = RadialSurface.sphere(n, 257, R)
    cd = curvature(s)
    z = cd.position[:, 1]
    lap = laplace_beltrami(s, z, cd)
    assert np.max(np.abs(lap + n * z / R ** 2)) < 1e-3


@given(st.floats(0.2, 5.0), st.integers(1, 3))
def test_sphere_invariants(radius, n):
    s = RadialSurface.sphere(n, 65, radius)
    cd = curvature(s)
    assert np.allclose(cd.H * cd.F_dot_nu, n, atol=1e-8)
    assert np.allclose(cd.normA2, n / radius ** 2, rtol=1e-8)


@given(st.floats(0.0, 0.3), st.integers(1, 4))
def test_star_curves_principal_sum(eps, k):
    s = RadialSurface.from_function(1, 256, lambda p: 1 + eps * np.cos(k * p) / (k * k + 1))
    cd = curvature(s)
    cd.check()
    assert np.allclose(cd.H, cd.principal_sum())


@given(st.floats(0.1, 3.0))
def test_arclength_derivative_of_constant_vanishes(c):
    s = RadialSurface.ellipse(128, 2.0, 1.0)
    assert np.allclose(arclength_derivative(s, np.full(128, c)), 0.0)
