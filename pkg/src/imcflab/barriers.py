"""Closed-form solutions, the pancake barrier and discrete containment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .convexkit import _rotation_to_north
from .flowengine import LinkCurve, UltrafastProfile
from .geomcore import AngularGrid, GraphSurface, RadialGrid, RadialSurface


class Expired(ValueError):
    """The requested time is at or past the variant's terminal time."""


class ConstructionFailure(RuntimeError):
    pass


class Incomparable(ValueError):
    pass


def _check_angle(theta0: float):
    if not 0.0 < theta0 < math.pi / 2:
        raise ValueError("cone and link angles must lie in (0, pi/2)")


@dataclass(frozen=True)
class Sphere:
    r0: float
    center: Optional[tuple] = None
    n: int = 2

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("sphere radius must be positive")

    @property
    def terminal_time(self) -> float:
        return math.inf

    def radius(self, t: float) -> float:
        return self.r0 * math.exp(t / self.n)


@dataclass(frozen=True)
class RoundCone:
    """Cone x_{n+1} - vertex_{n+1} = cot(theta) |x| over the axis e_{n+1}."""

    theta0: float
    vertex: Optional[tuple] = None
    axis: Optional[tuple] = None
    n: int = 2

    def __post_init__(self):
        _check_angle(self.theta0)
        if self.n < 2:
            raise ValueError("round cones need n >= 2")
        if self.axis is not None:
            a = np.asarray(self.axis, dtype=float)
            if a.shape != (self.n + 1,) or np.linalg.norm(a[:-1]) > 1e-12 or a[-1] <= 0:
                raise ValueError("only cones about the axis e_{n+1} are representable as graphs")
        if self.vertex is not None and np.any(np.asarray(self.vertex, dtype=float)[:-1] != 0):
            raise ValueError("the vertex must lie on the symmetry axis")

    @property
    def terminal_time(self) -> float:
        return -(self.n - 1) * math.log(math.sin(self.theta0))

    def theta(self, t: float) -> float:
        return math.asin(min(1.0, math.sin(self.theta0) * math.exp(t / (self.n - 1))))


@dataclass(frozen=True)
class GeodesicBallLink:
    theta0: float
    n: int = 2

    def __post_init__(self):
        _check_angle(self.theta0)
        if self.n != 2:
            raise ValueError("link curves are available on S^2 only")

    @property
    def terminal_time(self) -> float:
        return -(self.n - 1) * math.log(math.sin(self.theta0))

    def theta(self, t: float) -> float:
        return math.asin(min(1.0, math.sin(self.theta0) * math.exp(t / (self.n - 1))))


@dataclass(frozen=True)
class Pancake:
    R: float
    eps: float
    delta_mollify: float
    n: int = 2

    def __post_init__(self):
        if min(self.R, self.eps, self.delta_mollify) <= 0:
            raise ValueError("pancake parameters must be positive")
        if not self.eps < self.R / 100:
            raise ValueError("the pancake needs eps < R/100")

    @property
    def terminal_time(self) -> float:
        return 0.0


@dataclass(frozen=True)
class UltrafastVT:
    T: float
    n: int

    def __post_init__(self):
        if self.T <= 0 or self.n < 2:
            raise ValueError("v^T needs T > 0 and n >= 2")

    @property
    def terminal_time(self) -> float:
        return self.T

    def profile(self, r: np.ndarray, t: float) -> np.ndarray:
        return np.sqrt(2.0 * (self.n - 1) * max(self.T - t, 0.0)) / np.asarray(r, dtype=float)


ExplicitSolution = Union[Sphere, RoundCone, GeodesicBallLink, Pancake, UltrafastVT]


def _expired(t: float, T: float) -> bool:
    return t >= T - 1e-12 * max(1.0, T)


def evaluate(sol: ExplicitSolution, t: float, node_count: Optional[int] = None,
             r_max: float = 10.0, r_min: float = 0.5):
    """Sample the explicit solution at time ``t``.

    Grid sizes default per variant; ``r_max`` and ``r_min`` apply to the
    cone graph and to the ultra-fast profile.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if isinstance(sol, Sphere):
        n_nodes = node_count or 512
        origin = sol.center
        return RadialSurface.sphere(sol.n, n_nodes, sol.radius(t), origin)
    if isinstance(sol, RoundCone):
        if _expired(t, sol.terminal_time):
            raise Expired(f"the cone reaches a half-space at T = {sol.terminal_time:.6g}")
        slope = 1.0 / math.tan(sol.theta(t))
        z0 = 0.0 if sol.vertex is None else float(sol.vertex[-1])
        return GraphSurface.from_function(sol.n, node_count or 201, r_max,
                                          lambda r: z0 + slope * r, slope)
    if isinstance(sol, GeodesicBallLink):
        if _expired(t, sol.terminal_time):
            raise Expired(f"the link reaches the equator at T = {sol.terminal_time:.6g}")
        return LinkCurve.geodesic_circle(sol.theta(t), node_count or 256)
    if isinstance(sol, Pancake):
        if t != 0:
            raise Expired("the pancake is an initial datum only")
        return pancake_initial(sol.R, sol.eps, sol.delta_mollify, sol.n, node_count or 4097)
    if isinstance(sol, UltrafastVT):
        grid = RadialGrid(node_count or 181, r_max, r_min)
        if abs(t - sol.T) <= 1e-12 * max(1.0, sol.T):
            return UltrafastProfile(grid, np.zeros(grid.node_count), sol.n, extinct=True)
        if t > sol.T:
            raise Expired(f"v^T is extinct after T = {sol.T:.6g}")
        return UltrafastProfile(grid, sol.profile(grid.nodes, t), sol.n)
    raise TypeError(f"unknown explicit solution {type(sol).__name__}")


# ---------------------------------------------------------------------------
# pancake

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _bump(s):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s * s, 1e-300)), 0.0)


def _bump_marginal(y: np.ndarray, dim: int) -> np.ndarray:
    """Unnormalised density of one coordinate of the unit bump in R^dim."""
    top = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    rho = 0.5 * top[..., None] * (_GL_X + 1.0)
    vals = _bump(np.sqrt(y[..., None] ** 2 + rho ** 2)) * rho ** (dim - 2)
    return 0.5 * top * np.sum(vals * _GL_W, axis=-1)


def _interval(f, a, b):
    x = 0.5 * (b - a)[..., None] * (_GL_X + 1.0) + a[..., None]
    return 0.5 * (b - a) * np.sum(f(x) * _GL_W, axis=-1)


def smoothed_abs(s: np.ndarray, dim: int) -> np.ndarray:
    """(|.| * eta)(s) for the unit radial bump eta in R^dim, as a function of one coordinate.

    Equals |s| for |s| >= 1 and is strictly larger inside.  The integral is
    split at the kink so that both pieces are smooth for the quadrature.
    """
    s = np.asarray(s, dtype=float)
    out = np.abs(s)
    inside = np.abs(s) < 1.0
    if np.any(inside):
        si = s[inside]
        lo, hi = -np.ones_like(si), np.ones_like(si)
        p = lambda y: _bump_marginal(y, dim)
        left = _interval(lambda y: -(si[:, None] + y) * p(y), lo, -si)
        right = _interval(lambda y: (si[:, None] + y) * p(y), -si, hi)
        z = _interval(p, np.array([-1.0]), np.array([1.0]))[0]
        out[inside] = (left + right) / z
    return out


def pancake_gauge(s: np.ndarray, z: np.ndarray, R: float, eps: float, delta: float, dim: int) -> np.ndarray:
    """Mollified gauge of the slab disk |x'| <= R, |z| <= eps, at width delta.

    The gauge max(A, B), A = |x'|/R, B = |z|/eps, is written as
    (A + B)/2 + |A - B|/2; mollifying linear parts returns them unchanged,
    and the crease term is smoothed across the plane A = B, whose unit
    normal has the gradient norm G of A - B.
    """
    A = np.abs(s) / R
    B = np.abs(z) / eps
    G = math.hypot(1.0 / R, 1.0 / eps)
    d = (A - B) / G
    return 0.5 * (A + B) + 0.5 * G * delta * smoothed_abs(d / delta, dim)


@dataclass(frozen=True, eq=False)
class PancakeConstruction:
    surface: RadialSurface
    delta_used: float
    retries: int
    inner_scale: float

    @property
    def c_measured(self) -> float:
        """c with (1 - c delta) D inside the constructed body."""
        return (1.0 - self.inner_scale) / self.delta_used


def slab_radial(theta: np.ndarray, R: float, eps: float) -> np.ndarray:
    """Radial function of the slab disk in the polar angle from the axis."""
    with np.errstate(divide="ignore"):
        top = np.where(np.abs(np.cos(theta)) > 0, eps / np.abs(np.cos(theta)), np.inf)
        side = np.where(np.sin(theta) > 0, R / np.sin(theta), np.inf)
    return np.minimum(top, side)


def _level_set(theta, R, eps, delta, dim, iters=80):
    hi = slab_radial(theta, R, eps)
    lo = np.zeros_like(hi)
    st, ct = np.sin(theta), np.cos(theta)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = pancake_gauge(mid * st, mid * ct, R, eps, delta, dim) >= 1.0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return hi


def _meridian_convex(surface: RadialSurface) -> bool:
    p = surface.meridian_points()
    full = np.vstack([p, (p[-2:0:-1] * [-1.0, 1.0])])
    e = np.roll(full, -1, 0) - full
    cross = e[:, 0] * np.roll(e, -1, 0)[:, 1] - e[:, 1] * np.roll(e, -1, 0)[:, 0]
    scale = float(np.max(np.linalg.norm(e, axis=1))) ** 2
    # the meridian runs clockwise from the north pole in the (s, z) plane
    return bool(np.all(cross <= 1e-9 * scale))


def pancake_construction(R: float, eps: float, delta: float, n: int = 2, node_count: int = 4097,
                         max_retries: int = 5) -> PancakeConstruction:
    """Smoothed slab disk by the level set {gauge_delta = 1}; see ``pancake_gauge``.

    Post hoc checks: contained in the slab, coincident with the flat faces
    for |x'| <= R/2, and discretely convex.  A failed check halves delta.
    """
    Pancake(R, eps, delta, n)
    if n < 2 or node_count % 2 == 0:
        raise ValueError("pancakes are axisymmetric (n >= 2) on an odd polar grid")
    grid = AngularGrid.polar(node_count)
    theta = grid.nodes
    half = node_count // 2 + 1
    exact = slab_radial(theta, R, eps)
    d = delta
    for attempt in range(max_retries + 1):
        rho_half = _level_set(theta[:half], R, eps, d, n + 1)
        rho = np.concatenate([rho_half, rho_half[-2::-1]])
        s = rho * np.sin(theta)
        faces = s <= R / 2
        ok = (np.all(rho <= exact * (1 + 1e-14))
              and np.allclose(rho[faces], exact[faces], rtol=1e-12, atol=0.0))
        if ok:
            surface = RadialSurface(n, grid, rho)
            if _meridian_convex(surface):
                return PancakeConstruction(surface, d, attempt, float(np.min(rho / exact)))
        d /= 2
    raise ConstructionFailure(f"mollification did not preserve containment after {max_retries} retries")


def pancake_initial(R: float, eps: float, delta_mollify: float, n: int = 2,
                    node_count: int = 4097) -> RadialSurface:
    return pancake_construction(R, eps, delta_mollify, n, node_count).surface


def enclosed_volume(surface: RadialSurface) -> float:
    """Volume of the solid of revolution of the inscribed meridian polygon (n = 2)."""
    if surface.ambient_n != 2:
        raise ValueError("volume by Pappus is implemented for n = 2")
    p = surface.meridian_points()
    a, b = p[:-1], p[1:]
    # each segment with the axis bounds a cone frustum sliver: Pappus for the triangle (0, a, b)
    tri = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    centroid_s = (a[:, 0] + b[:, 0]) / 3.0
    return float(abs(np.sum(2 * math.pi * centroid_s * tri)))


# ---------------------------------------------------------------------------
# containment


@dataclass(frozen=True)
class ContainmentResult:
    passed: bool
    margin: float
    center: tuple
    directions: int


def _planar_outline(surface, center3=None):
    """(closed, vertices) of the planar outline used for ray casting."""
    if isinstance(surface, RadialSurface):
        p = surface.meridian_points()
        if surface.ambient_n == 1:
            return True, p
        return True, np.vstack([p, p[-2:0:-1] * [-1.0, 1.0]])
    if isinstance(surface, GraphSurface):
        p = surface.meridian_points()
        return False, np.vstack([p[:0:-1] * [-1.0, 1.0], p])
    if isinstance(surface, LinkCurve):
        Q = _rotation_to_north(center3)
        x = surface.points @ Q.T
        if np.any(x[:, 2] <= 1e-9):
            raise Incomparable("link leaves the open hemisphere about the common center")
        return True, x[:, :2] / x[:, 2:3]
    raise Incomparable(f"containment is not defined for {type(surface).__name__}")


def _ray_distances(closed: bool, verts: np.ndarray, c: np.ndarray, angles: np.ndarray) -> np.ndarray:
    a = verts if closed else verts[:-1]
    b = np.roll(verts, -1, 0) if closed else verts[1:]
    e = b - a
    pa = a - c
    out = np.empty(len(angles))
    chunk = max(1, 2_000_000 // len(a))
    for i in range(0, len(angles), chunk):
        ang = angles[i:i + chunk]
        d = np.column_stack([np.cos(ang), np.sin(ang)])
        den = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pa[None, :, 0] * e[None, :, 1] - pa[None, :, 1] * e[None, :, 0]) / den
            u = (pa[None, :, 0] * d[:, None, 1] - pa[None, :, 1] * d[:, None, 0]) / den
        hit = (np.abs(den) > 1e-300) & (u >= -1e-12) & (u <= 1 + 1e-12) & (t > 0)
        out[i:i + chunk] = np.min(np.where(hit, t, np.inf), axis=1)
    return out


def _inside(surface, closed, verts, c) -> bool:
    if isinstance(surface, GraphSurface):
        u0 = np.interp(abs(c[0]), surface.r, surface.u)
        return bool(c[1] > u0 and abs(c[0]) <= surface.radial_grid.r_max)
    probe = np.linspace(0.0, 2 * math.pi, 16, endpoint=False)
    return bool(np.all(np.isfinite(_ray_distances(closed, verts, c, probe))))


def _candidate_center(inner):
    if isinstance(inner, RadialSurface):
        if inner.ambient_n == 1:
            return np.array(inner.origin, dtype=float), None
        return np.array([0.0, inner.origin[-1]]), None
    if isinstance(inner, GraphSurface):
        return np.array([0.0, float(inner.u[0]) + 1.0]), None
    if isinstance(inner, LinkCurve):
        return np.zeros(2), inner.center
    raise Incomparable(f"containment is not defined for {type(inner).__name__}")


def containment(inner, outer, tol: float = 0.0, directions: int = 1024) -> ContainmentResult:
    """Whether the region bounded by ``inner`` lies inside the one bounded by ``outer``.

    Both outlines are cast from a common star center (the inner origin, a
    point above a graph's vertex, or the inner link's center in a gnomonic
    chart); the margin is the least outer-minus-inner ray length over the
    sampled directions, which include every vertex direction of both.
    """
    kinds = {type(inner) is LinkCurve, type(outer) is LinkCurve}
    if len(kinds) > 1:
        raise Incomparable("links and hypersurfaces are not comparable")
    if isinstance(inner, (RadialSurface, GraphSurface)) and isinstance(outer, (RadialSurface, GraphSurface)):
        if inner.ambient_n != outer.ambient_n or (inner.ambient_n == 1) != (outer.ambient_n == 1):
            raise Incomparable("surfaces live in different dimensions")
        if isinstance(inner, GraphSurface) and isinstance(outer, RadialSurface):
            return ContainmentResult(False, -math.inf, (0.0, 0.0), 0)
    c, c3 = _candidate_center(inner)
    cin, vin = _planar_outline(inner, c3)
    cout, vout = _planar_outline(outer, c3)
    if not _inside(inner, cin, vin, c):
        raise Incomparable("no common star center found")
    if not _inside(outer, cout, vout, c):
        return ContainmentResult(False, -math.inf, tuple(c), 0)
    upper = math.pi if (isinstance(inner, RadialSurface) and inner.ambient_n >= 2) else None
    if upper is not None:
        # axisymmetric outlines are symmetric: half of the circle suffices
        base = np.linspace(-math.pi / 2, math.pi / 2, directions)
    else:
        base = np.linspace(0.0, 2 * math.pi, directions, endpoint=False)
    verts = np.vstack([vin, vout]) - c
    vdir = np.arctan2(verts[:, 1], verts[:, 0])
    if upper is not None:
        vdir = vdir[np.abs(vdir) <= math.pi / 2 + 1e-12]
    ang = np.unique(np.concatenate([base, vdir]))
    rin = _ray_distances(cin, vin, c, ang)
    rout = _ray_distances(cout, vout, c, ang)
    both_open = np.isinf(rin) & np.isinf(rout)
    gap = np.where(both_open, np.inf, rout - rin)
    margin = float(np.min(gap))
    return ContainmentResult(bool(margin >= -tol), margin, tuple(float(x) for x in c), len(ang))
