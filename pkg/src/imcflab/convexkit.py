"""Convex sets on the sphere and in the plane.

Spherical links (caps, polygons and lunes on S^2, segments, points) with
their perimeters and the induced maximal flow time; extraction of the
tangent cone of a radial graph; the gnomonic chart; planar convex bodies via
support functions with Hausdorff distance, parallel bodies and smooth inner
and outer approximants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .geomcore import AngularGrid, GraphSurface, profile_derivatives, sphere_measure
from .reports import BoundReport

TOL_CONE = 1e-4
TOL_LINK = 1e-9


class InvalidLink(ValueError):
    pass


class NoCone(ValueError):
    pass


class OutOfChart(ValueError):
    pass


class RecenterRequired(ValueError):
    pass


class NotNested(ValueError):
    pass


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise InvalidLink("zero vector")
    return v / nv


def _check_unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise InvalidLink(f"{name} must be a unit vector")
    v = v.copy()
    v.setflags(write=False)
    return v


def angle_between(p, q) -> float:
    """Geodesic distance on the unit sphere, accurate for near and far pairs."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] == 3:
        c = np.linalg.norm(np.cross(p, q), axis=-1)
    else:
        c = np.sqrt(np.maximum(np.sum(p * p, -1) * np.sum(q * q, -1) - np.sum(p * q, -1) ** 2, 0.0))
    return np.arctan2(c, np.sum(p * q, axis=-1))


# ---------------------------------------------------------------------------
# spherical links


@dataclass(frozen=True, eq=False)
class GeodesicBall:
    center: np.ndarray
    radius: float
    ambient_n: int = 2

    def __post_init__(self):
        c = _check_unit(self.center, "center")
        if c.shape != (self.ambient_n + 1,):
            raise InvalidLink("center must lie on S^n")
        if not (0.0 < self.radius <= math.pi / 2 + TOL_LINK):
            raise InvalidLink("ball radius must lie in (0, pi/2]")
        object.__setattr__(self, "center", c)

    @property
    def pole(self) -> np.ndarray:
        return self.center

    def contains(self, x, tol: float = TOL_LINK) -> np.ndarray:
        return angle_between(np.atleast_2d(x), self.center[None, :]) <= self.radius + tol

    def sample(self, m: int = 256) -> np.ndarray:
        return _circle_points(self.center, self.radius, m)


def _polygon_pole(v: np.ndarray) -> np.ndarray:
    # sum of unit edge normals: strictly inside any convex polygon in an open
    # hemisphere, unlike the vertex mean for lopsided vertex sets
    n = np.cross(v, np.roll(v, -1, 0))
    return _unit((n / np.linalg.norm(n, axis=1)[:, None]).sum(axis=0))


@dataclass(frozen=True, eq=False)
class SphericalPolygon:
    """Convex polygon on S^2 with counter-clockwise vertices seen from outside."""

    vertices: np.ndarray
    ambient_n: int = 2

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise InvalidLink("polygons need at least three vertices on S^2")
        if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-12):
            raise InvalidLink("polygon vertices must be unit vectors")
        turn = np.einsum("ij,ij->i", np.cross(v, np.roll(v, -1, 0)), np.roll(v, -2, 0))
        if np.any(turn <= 0):
            raise InvalidLink("polygon vertices must be in strictly convex counter-clockwise position")
        if np.any(v @ _polygon_pole(v) <= TOL_LINK):
            raise InvalidLink("polygon must lie in an open hemisphere")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def pole(self) -> np.ndarray:
        return _polygon_pole(self.vertices)

    def edges(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def contains(self, x, tol: float = TOL_LINK) -> np.ndarray:
        x = np.atleast_2d(x)
        a, b = self.edges()
        side = np.einsum("kj,ij->ik", np.cross(a, b), x)
        return np.all(side >= -tol, axis=1) & (x @ self.pole > 0)

    def sample(self, per_edge: int = 32) -> np.ndarray:
        a, b = self.edges()
        pts = [_arc_points(p, q, per_edge) for p, q in zip(a, b)]
        return np.vstack(pts)


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    p: np.ndarray
    q: np.ndarray
    ambient_n: int = 2

    def __post_init__(self):
        p = _check_unit(self.p, "p")
        q = _check_unit(self.q, "q")
        L = float(angle_between(p, q))
        if not (0.0 < L < math.pi):
            raise InvalidLink("segment length must lie in (0, pi)")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def length(self) -> float:
        return float(angle_between(self.p, self.q))

    @property
    def pole(self) -> np.ndarray:
        return _unit(self.p + self.q)

    def contains(self, x, tol: float = 1e-9) -> np.ndarray:
        x = np.atleast_2d(x)
        return segment_distance(self, x) <= tol

    def sample(self, m: int = 64) -> np.ndarray:
        return _arc_points(self.p, self.q, m, include_end=True)


@dataclass(frozen=True, eq=False)
class SinglePoint:
    point: np.ndarray
    ambient_n: int = 2

    def __post_init__(self):
        object.__setattr__(self, "point", _check_unit(self.point, "point"))

    @property
    def pole(self) -> np.ndarray:
        return self.point

    def contains(self, x, tol: float = 1e-9) -> np.ndarray:
        return angle_between(np.atleast_2d(x), self.point[None, :]) <= tol

    def sample(self, m: int = 1) -> np.ndarray:
        return self.point[None, :]


@dataclass(frozen=True, eq=False)
class Lune:
    """Wedge link on S^2: the region between two half great circles from +-vertex."""

    vertex: np.ndarray
    start: np.ndarray
    angle: float
    ambient_n: int = 2

    def __post_init__(self):
        v = _check_unit(self.vertex, "vertex")
        s = _check_unit(self.start, "start")
        if abs(v @ s) > 1e-12:
            raise InvalidLink("start direction must be orthogonal to the vertex")
        if not (0.0 < self.angle <= math.pi):
            raise InvalidLink("dihedral angle must lie in (0, pi]")
        object.__setattr__(self, "vertex", v)
        object.__setattr__(self, "start", s)

    def _frame(self):
        w = np.cross(self.vertex, self.start)
        return self.start, w

    def _direction(self, phi):
        s, w = self._frame()
        return np.cos(phi) * s + np.sin(phi) * w

    @property
    def pole(self) -> np.ndarray:
        return self._direction(self.angle / 2)

    def contains(self, x, tol: float = TOL_LINK) -> np.ndarray:
        x = np.atleast_2d(x)
        s, w = self._frame()
        phi = np.mod(np.arctan2(x @ w, x @ s), 2 * math.pi)
        planar = np.hypot(x @ w, x @ s)
        return (phi <= self.angle + tol) | (phi >= 2 * math.pi - tol) | (planar <= tol)

    def sample(self, m: int = 64) -> np.ndarray:
        t = np.linspace(0.0, math.pi, m)
        out = []
        for phi in (0.0, self.angle):
            d = self._direction(phi)
            out.append(np.cos(t)[:, None] * self.vertex[None, :] + np.sin(t)[:, None] * d[None, :])
        return np.vstack(out)

    @property
    def antipodal_pair(self):
        return self.vertex, -self.vertex


SphericalConvexSet = Union[GeodesicBall, SphericalPolygon, GeodesicSegment, SinglePoint, Lune]


def _orthonormal_frame(c: np.ndarray):
    a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = _unit(a - (a @ c) * c)
    e2 = np.cross(c, e1)
    return e1, e2


def _circle_points(center: np.ndarray, radius: float, m: int) -> np.ndarray:
    if len(center) != 3:
        raise InvalidLink("boundary sampling is available on S^2 only")
    e1, e2 = _orthonormal_frame(center)
    t = 2 * math.pi * np.arange(m) / m
    ring = np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2
    return math.cos(radius) * center[None, :] + math.sin(radius) * ring


def _arc_points(p, q, m: int, include_end: bool = False) -> np.ndarray:
    L = float(angle_between(p, q))
    s = np.linspace(0.0, 1.0, m + 1 if include_end else m, endpoint=include_end)
    if not include_end:
        s = np.arange(m) / m
    w = np.sin((1 - s) * L)[:, None] * p[None, :] + np.sin(s * L)[:, None] * q[None, :]
    return w / math.sin(L)


def segment_distance(seg: GeodesicSegment, x: np.ndarray) -> np.ndarray:
    """Geodesic distance from points of S^2 to a geodesic segment."""
    x = np.atleast_2d(x)
    m = _unit(np.cross(seg.p, seg.q))
    off = x @ m
    y = x - off[:, None] * m[None, :]
    ny = np.linalg.norm(y, axis=1)
    L = seg.length
    with np.errstate(invalid="ignore", divide="ignore"):
        y = y / ny[:, None]
    on_arc = (ny > 0) & (angle_between(y, seg.p[None, :]) + angle_between(y, seg.q[None, :]) <= L + 1e-12)
    to_ends = np.minimum(angle_between(x, seg.p[None, :]), angle_between(x, seg.q[None, :]))
    to_line = np.arcsin(np.clip(np.abs(off), 0.0, 1.0))
    return np.where(on_arc, to_line, to_ends)


def perimeter(link: SphericalConvexSet) -> float:
    """Boundary measure, doubled for sets with empty interior."""
    if isinstance(link, GeodesicBall):
        n = link.ambient_n
        return sphere_measure(n - 1) * math.sin(link.radius) ** (n - 1)
    if isinstance(link, SphericalPolygon):
        a, b = link.edges()
        return float(np.sum(angle_between(a, b)))
    if isinstance(link, GeodesicSegment):
        return 2.0 * link.length
    if isinstance(link, SinglePoint):
        return 0.0
    if isinstance(link, Lune):
        return 2.0 * math.pi
    raise TypeError(f"unsupported link {type(link).__name__}")


def maximal_time(link: SphericalConvexSet, tol: float = 1e-12) -> float:
    """ln|S^{n-1}| - ln P(link), with +inf for P = 0 and exactly 0 at P = |S^{n-1}|."""
    P = perimeter(link)
    full = sphere_measure(link.ambient_n - 1)
    if P == 0.0:
        return math.inf
    if P > full * (1.0 + tol):
        raise InvalidLink(f"perimeter {P} exceeds |S^(n-1)| = {full}")
    if abs(P - full) <= tol * full:
        return 0.0
    return math.log(full) - math.log(P)


def classify_degenerate(link: SphericalConvexSet, tol: float = 1e-9) -> str:
    if isinstance(link, GeodesicBall) and abs(link.radius - math.pi / 2) <= tol:
        return "hemisphere"
    if isinstance(link, Lune):
        return "wedge"
    if isinstance(link, GeodesicSegment) and link.p @ link.q <= -1.0 + tol:
        return "contains-antipodal"
    return "generic"


def link_contains(outer: SphericalConvexSet, inner: SphericalConvexSet, tol: float = 1e-9) -> bool:
    """Membership sampling of the boundary of ``inner`` against ``outer``."""
    return bool(np.all(outer.contains(inner.sample(), tol)))


def outer_area_monotonicity(inner_link: SphericalConvexSet, outer_link: SphericalConvexSet,
                            tol: float = 1e-12) -> BoundReport:
    if not link_contains(outer_link, inner_link):
        raise NotNested("inner link is not contained in the outer link")
    p_in, p_out = perimeter(inner_link), perimeter(outer_link)
    return BoundReport(
        "outer_area_monotonicity",
        [(0.0, p_in, p_out)],
        constants={"P_inner": p_in, "P_outer": p_out},
        passed=p_in <= p_out + tol,
    )


def tangent_cone_link(surface: GraphSurface, tol_cone: float = TOL_CONE) -> GeodesicBall:
    """Link of the asymptotic cone of a radial graph.

    The far-field slope is extrapolated with the model u_r = alpha + beta / r^2
    from the two outermost node pairs; disagreement beyond ``tol_cone``
    (relative, absolute below unit slope) means there is no linear cone.
    """
    d1, _ = profile_derivatives(surface)
    r = surface.r[-3:]
    s = d1[-3:]

    def extrapolate(i, j):
        a, b = 1.0 / r[i] ** 2, 1.0 / r[j] ** 2
        return (s[i] * b - s[j] * a) / (b - a)

    a1, a2 = extrapolate(0, 1), extrapolate(1, 2)
    alpha = a2
    if abs(a1 - a2) > tol_cone * max(1.0, abs(alpha)) or alpha < -tol_cone:
        raise NoCone(f"outer slope does not settle (estimates {a1:.6g}, {a2:.6g})")
    alpha = max(alpha, 0.0)
    theta0 = math.atan2(1.0, alpha)
    n = surface.ambient_n
    pole = np.zeros(n + 1)
    pole[-1] = 1.0
    return GeodesicBall(pole, theta0, n)


# ---------------------------------------------------------------------------
# gnomonic chart


def gnomonic(point) -> np.ndarray:
    """Chart of the open upper hemisphere onto R^n."""
    p = np.asarray(point, dtype=float)
    if np.any(p[..., -1] <= 0.0):
        raise OutOfChart("gnomonic chart needs x_{n+1} > 0")
    return p[..., :-1] / p[..., -1:]


def gnomonic_inverse(x) -> np.ndarray:
    """(x, 1) / sqrt(1 + |x|^2)."""
    x = np.asarray(x, dtype=float)
    ones = np.ones(x.shape[:-1] + (1,))
    y = np.concatenate([x, ones], axis=-1)
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def _rotation_to_north(c: np.ndarray) -> np.ndarray:
    """Orthogonal matrix Q with Q c = e_3."""
    e1, e2 = _orthonormal_frame(c)
    return np.vstack([e1, e2, c])


def segment_envelope_perimeter(seg: GeodesicSegment, delta: float, rays: int = 4096) -> float:
    """Perimeter of the geodesic delta-neighbourhood of a segment.

    The set is transferred to the gnomonic chart centred at the segment
    midpoint, its boundary is located by bisection along ``rays`` chart rays
    and the resulting spherical polygon is measured edge by edge.
    """
    if not (0.0 < delta < math.pi / 2 - seg.length / 2):
        raise InvalidLink("envelope must stay inside an open hemisphere")
    Q = _rotation_to_north(seg.pole)
    local = GeodesicSegment(Q @ seg.p, Q @ seg.q)
    psi = 2 * math.pi * np.arange(rays) / rays
    dirs = np.column_stack([np.cos(psi), np.sin(psi)])
    lo = np.zeros(rays)
    hi = np.full(rays, math.tan(seg.length / 2 + delta) * 1.01 + 1e-6)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        pts = gnomonic_inverse(mid[:, None] * dirs)
        inside = segment_distance(local, pts) <= delta
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    boundary = gnomonic_inverse(0.5 * (lo + hi)[:, None] * dirs)
    return float(np.sum(angle_between(boundary, np.roll(boundary, -1, axis=0))))


def segment_envelope_perimeter_exact(length: float, delta: float) -> float:
    """Closed form: two parallel arcs and two half circles of radius delta."""
    return 2.0 * length * math.cos(delta) + 2.0 * math.pi * math.sin(delta)


# ---------------------------------------------------------------------------
# planar convex bodies


@dataclass(frozen=True, eq=False)
class PlanarPolygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("planar polygons need at least three 2-d vertices")
        e = np.roll(v, -1, 0) - v
        cross = e[:, 0] * np.roll(e, -1, 0)[:, 1] - e[:, 1] * np.roll(e, -1, 0)[:, 0]
        if np.any(cross <= 0):
            raise ValueError("vertices must be in strictly convex counter-clockwise order")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def support(self, grid: AngularGrid) -> np.ndarray:
        a = grid.nodes
        dirs = np.column_stack([np.cos(a), np.sin(a)])
        return np.max(self.vertices @ dirs.T, axis=0)

    def distance_from(self, x: np.ndarray) -> np.ndarray:
        """Distance from points to the filled polygon (zero inside)."""
        x = np.atleast_2d(x)
        a = self.vertices
        b = np.roll(a, -1, 0)
        e = b - a
        rel = x[:, None, :] - a[None, :, :]
        lam = np.clip(np.einsum("ijk,jk->ij", rel, e) / np.sum(e * e, 1)[None, :], 0.0, 1.0)
        foot = a[None, :, :] + lam[:, :, None] * e[None, :, :]
        d = np.min(np.linalg.norm(x[:, None, :] - foot, axis=2), axis=1)
        side = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
        inside = np.all(side >= 0, axis=1)
        return np.where(inside, 0.0, d)


@dataclass(frozen=True, eq=False)
class SupportSamples:
    """Planar convex body through its support function on a periodic grid."""

    grid: AngularGrid
    h: np.ndarray

    def __post_init__(self):
        if not self.grid.periodic:
            raise ValueError("support samples live on a periodic grid")
        h = np.array(self.h, dtype=float)
        if h.shape != (self.grid.node_count,):
            raise ValueError("one support value per direction is required")
        c = math.cos(self.grid.spacing)
        slack = np.roll(h, 1) + np.roll(h, -1) - 2.0 * c * h
        if np.any(slack < -1e-10 * max(1.0, float(np.max(np.abs(h))))):
            raise ValueError("support samples violate discrete convexity")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def disk(cls, radius: float, node_count: int = 512, center=(0.0, 0.0)):
        g = AngularGrid(node_count)
        a = g.nodes
        return cls(g, radius + center[0] * np.cos(a) + center[1] * np.sin(a))

    @classmethod
    def point(cls, p=(0.0, 0.0), node_count: int = 512):
        return cls.disk(0.0, node_count, p)

    def scaled(self, factor: float) -> "SupportSamples":
        return SupportSamples(self.grid, factor * self.h)

    def radial_function(self, angles: np.ndarray) -> np.ndarray:
        """Radial function about the origin of the intersection of half-planes."""
        if np.min(self.h) <= 0:
            raise RecenterRequired("origin must be interior")
        phi = self.grid.nodes
        c = np.cos(np.asarray(angles)[:, None] - phi[None, :])
        with np.errstate(divide="ignore"):
            ratio = np.where(c > 1e-12, self.h[None, :] / c, np.inf)
        return np.min(ratio, axis=1)


ConvexBodyR = Union[PlanarPolygon, SupportSamples]


def hull_support(points, node_count: int = 1024) -> SupportSamples:
    """Support function of the convex hull of planar points."""
    g = AngularGrid(node_count)
    a = g.nodes
    dirs = np.column_stack([np.cos(a), np.sin(a)])
    return SupportSamples(g, np.max(np.asarray(points, dtype=float) @ dirs.T, axis=0))


def to_support(body: ConvexBodyR, grid: AngularGrid) -> SupportSamples:
    if isinstance(body, SupportSamples):
        if body.grid.node_count != grid.node_count:
            raise ValueError("support samples on different grids cannot be compared")
        return body
    return SupportSamples(grid, body.support(grid))


def hausdorff_distance(A: ConvexBodyR, B: ConvexBodyR) -> float:
    """Exact for polygon pairs, sampled sup |h_A - h_B| otherwise."""
    if isinstance(A, PlanarPolygon) and isinstance(B, PlanarPolygon):
        return float(max(np.max(B.distance_from(A.vertices)), np.max(A.distance_from(B.vertices))))
    grids = [b.grid for b in (A, B) if isinstance(b, SupportSamples)]
    grid = max(grids, key=lambda g: g.node_count)
    hA, hB = to_support(A, grid).h, to_support(B, grid).h
    return float(np.max(np.abs(hA - hB)))


def delta_envelope(body: ConvexBodyR, delta: float, node_count: int = 1024) -> SupportSamples:
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = body.grid if isinstance(body, SupportSamples) else AngularGrid(node_count)
    s = to_support(body, grid)
    return SupportSamples(grid, s.h + delta)


def mollify_support(h: np.ndarray, width: float) -> np.ndarray:
    """Convolution with the periodic heat kernel of standard deviation ``width``."""
    m = np.fft.rfftfreq(len(h), d=1.0 / len(h))
    return np.fft.irfft(np.fft.rfft(h) * np.exp(-0.5 * (m * width) ** 2), n=len(h))


def curvature_radius(h: np.ndarray) -> np.ndarray:
    """h + h'' evaluated spectrally."""
    m = np.fft.rfftfreq(len(h), d=1.0 / len(h))
    return np.fft.irfft(np.fft.rfft(h) * (1.0 - m ** 2), n=len(h))


def inner_outer_approx(body: ConvexBodyR, k: int, node_count: int = 1024,
                       max_halvings: int = 8) -> Tuple[SupportSamples, SupportSamples]:
    """Smooth strictly convex bodies (1 - 1/k) S_k and (1 + 1/k) S_k around ``body``.

    S_k has the support function mollified with kernel width 1/k; the width
    is halved until S_k is strictly convex and the pair brackets the body on
    the sample set.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    grid = body.grid if isinstance(body, SupportSamples) else AngularGrid(node_count)
    h = to_support(body, grid).h
    if np.min(h) <= 0:
        raise RecenterRequired("the origin is not an interior point of the body")
    width = 1.0 / k
    for _ in range(max_halvings + 1):
        hk = mollify_support(h, width)
        inner, outer = (1 - 1.0 / k) * hk, (1 + 1.0 / k) * hk
        # the heat kernel is positive, so h_k + h_k'' > 0 analytically; allow round-off
        roundoff = 1e-15 * len(h) ** 2 * float(np.max(np.abs(hk)))
        convex = np.min(curvature_radius(hk)) > -roundoff
        if convex and np.all(inner <= h + 1e-14) and np.all(outer >= h - 1e-14):
            return SupportSamples(grid, inner), SupportSamples(grid, outer)
        width /= 2
    raise ValueError("could not build a bracketing smooth approximation")
