"""Discrete hypersurfaces and their extrinsic geometry.

Three representations are supported:

* planar closed curves given as a radial function over a periodic polar grid,
* axisymmetric hypersurfaces in R^{n+1} given as a radial profile over the
  polar angle measured from the symmetry axis e_{n+1},
* rotationally symmetric entire graphs x_{n+1} = u(|x|) on a truncated
  radial grid.

Axisymmetric objects are handled in the meridian half-plane with
coordinates (s, z), where s is the distance to the symmetry axis.  All
derivatives are centred second-order differences; the 0/0 revolution terms
on the axis are replaced by their analytic limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

TOL_GEOM = 1e-8
TOL_CONVEX = 1e-10


class GeometryError(ValueError):
    """Raised when a surface violates a representation invariant."""


def sphere_measure(k: int) -> float:
    """Return |S^k|, the k-dimensional measure of the unit sphere in R^{k+1}."""
    if k < 0:
        raise ValueError("sphere dimension must be non-negative")
    m = k + 1
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AngularGrid:
    """Uniform grid in an angular variable.

    Periodic grids cover [0, 2*pi) without repeating the end point;
    non-periodic grids cover [0, extent] including both end points.
    """

    node_count: int
    extent: float = 2.0 * math.pi
    periodic: bool = True

    def __post_init__(self):
        if int(self.node_count) != self.node_count or self.node_count < 16:
            raise GeometryError(f"node_count must be an integer >= 16, got {self.node_count}")
        if self.periodic and not math.isclose(self.extent, 2.0 * math.pi, rel_tol=1e-14):
            raise GeometryError("periodic grids must cover [0, 2*pi)")
        if not self.extent > 0:
            raise GeometryError("extent must be positive")

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.extent / self.node_count
        return self.extent / (self.node_count - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.node_count) * self.spacing

    @classmethod
    def polar(cls, node_count: int) -> "AngularGrid":
        """Non-periodic grid on the polar angle range [0, pi]."""
        return cls(node_count, math.pi, periodic=False)


@dataclass(frozen=True)
class RadialGrid:
    """Radial grid on [r_min, r_max], uniform in its parameter p.

    With ``stretch = c > 0`` the nodes are r = c sinh(p) for uniformly spaced
    p, which resolves features of size c near the axis cheaply. ``spacing`` is
    always the parameter spacing; ``dr`` and ``d2r`` give dr/dp and d2r/dp2.
    """

    node_count: int
    r_max: float
    r_min: float = 0.0
    stretch: float = 0.0

    def __post_init__(self):
        if int(self.node_count) != self.node_count or self.node_count < 3:
            raise GeometryError("radial grids need at least 3 nodes")
        if not (0.0 <= self.r_min < self.r_max):
            raise GeometryError("radial grid needs 0 <= r_min < r_max")
        if self.stretch < 0 or (self.stretch > 0 and self.r_min != 0.0):
            raise GeometryError("stretched grids need stretch > 0 and r_min = 0")

    @property
    def spacing(self) -> float:
        if self.stretch > 0:
            return math.asinh(self.r_max / self.stretch) / (self.node_count - 1)
        return (self.r_max - self.r_min) / (self.node_count - 1)

    @property
    def parameter(self) -> np.ndarray:
        return np.arange(self.node_count) * self.spacing

    @property
    def nodes(self) -> np.ndarray:
        if self.stretch > 0:
            r = self.stretch * np.sinh(self.parameter)
            r[-1] = self.r_max
            return r
        return self.r_min + self.parameter

    @property
    def dr(self) -> np.ndarray:
        if self.stretch > 0:
            return self.stretch * np.cosh(self.parameter)
        return np.ones(self.node_count)

    @property
    def d2r(self) -> np.ndarray:
        if self.stretch > 0:
            return self.stretch * np.sinh(self.parameter)
        return np.zeros(self.node_count)

    @property
    def max_cell(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def to_r(self, d1: np.ndarray, d2: np.ndarray):
        """Convert parameter derivatives to r-derivatives."""
        if self.stretch == 0:
            return d1, d2
        rp, rpp = self.dr, self.d2r
        f1 = d1 / rp
        return f1, (d2 - rpp * f1) / rp ** 2


def graph_derivatives(grid: RadialGrid, u: np.ndarray, right: str = "extrap", right_slope: float = 0.0):
    """u_r and u_rr on a radial grid, even across the axis.

    ``right`` is ``extrap`` (one-sided) or ``slope`` (Neumann ghost imposing
    u_r = right_slope at r_max).
    """
    h = grid.spacing
    slope_p = right_slope * float(grid.dr[-1])
    return grid.to_r(*centered(pad(u, h, "even", right, slope_p), h))


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball used to restrict measurements."""

    center: tuple
    radius: float


@dataclass(frozen=True, eq=False)
class RadialSurface:
    """Star-shaped hypersurface given by its radial function about ``origin``.

    For ``ambient_n == 1`` the grid is periodic in the polar angle of the
    plane.  For ``ambient_n >= 2`` the grid is the polar angle from the axis
    e_{n+1} on [0, pi]; the profile is extended evenly across both poles,
    which encodes the smooth-pole condition d(rho)/d(theta) = 0 there.
    """

    ambient_n: int
    grid: AngularGrid
    rho: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        n = int(self.ambient_n)
        if n < 1:
            raise GeometryError("ambient_n must be >= 1")
        rho = _frozen(self.rho)
        if rho.shape != (self.grid.node_count,):
            raise GeometryError("rho must have one value per grid node")
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0.0):
            raise GeometryError("rho must be positive at every node (star-shapedness)")
        if n == 1 and not self.grid.periodic:
            raise GeometryError("planar curves need a periodic grid")
        if n >= 2 and (self.grid.periodic or not math.isclose(self.grid.extent, math.pi)):
            raise GeometryError("axisymmetric profiles need a non-periodic grid on [0, pi]")
        origin = np.zeros(n + 1) if self.origin is None else np.array(self.origin, dtype=float)
        if origin.shape != (n + 1,):
            raise GeometryError("origin must be a point of R^{n+1}")
        if n >= 2 and np.any(origin[:-1] != 0.0):
            raise GeometryError("axisymmetric surfaces need their origin on the symmetry axis")
        origin.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "origin", origin)

    @property
    def symmetry(self) -> str:
        return "full-curve" if self.ambient_n == 1 else "axisymmetric"

    @property
    def angles(self) -> np.ndarray:
        return self.grid.nodes

    def with_rho(self, rho) -> "RadialSurface":
        return RadialSurface(self.ambient_n, self.grid, rho, self.origin)

    def meridian_points(self) -> np.ndarray:
        """Node positions in the plane (n = 1) or meridian half-plane (s, z)."""
        a = self.angles
        if self.ambient_n == 1:
            pts = np.column_stack([self.rho * np.cos(a), self.rho * np.sin(a)])
            return pts + self.origin[None, :]
        pts = np.column_stack([self.rho * np.sin(a), self.rho * np.cos(a)])
        pts[:, 1] += self.origin[-1]
        # exact zero on the axis avoids signed round-off in s
        pts[0, 0] = 0.0
        pts[-1, 0] = 0.0
        return pts

    @classmethod
    def from_function(cls, ambient_n: int, node_count: int, func: Callable, origin=None):
        grid = AngularGrid(node_count) if ambient_n == 1 else AngularGrid.polar(node_count)
        return cls(ambient_n, grid, func(grid.nodes), origin)

    @classmethod
    def sphere(cls, ambient_n: int, node_count: int, radius: float = 1.0, origin=None):
        return cls.from_function(ambient_n, node_count, lambda a: np.full_like(a, radius), origin)

    @classmethod
    def ellipse(cls, node_count: int, a: float, b: float):
        """Planar ellipse x^2/a^2 + y^2/b^2 = 1 centred at the origin."""
        return cls.from_function(
            1, node_count, lambda p: a * b / np.sqrt((b * np.cos(p)) ** 2 + (a * np.sin(p)) ** 2)
        )


@dataclass(frozen=True, eq=False)
class GraphSurface:
    """Rotationally symmetric entire graph x_{n+1} = u(r), truncated at r_max."""

    ambient_n: int
    radial_grid: RadialGrid
    u: np.ndarray
    asymptotic_slope: float = 0.0

    def __post_init__(self):
        if int(self.ambient_n) < 2:
            raise GeometryError("graph surfaces need ambient_n >= 2")
        if self.radial_grid.r_min != 0.0:
            raise GeometryError("graph grids start on the axis r = 0")
        u = _frozen(self.u)
        if u.shape != (self.radial_grid.node_count,):
            raise GeometryError("u must have one value per grid node")
        if not np.all(np.isfinite(u)):
            raise GeometryError("u must be finite")
        if self.asymptotic_slope < 0:
            raise GeometryError("asymptotic slope must be non-negative")
        slopes = np.diff(u) / np.diff(self.radial_grid.nodes)
        if np.any(np.diff(slopes) < -TOL_CONVEX * max(1.0, float(np.max(np.abs(slopes))))):
            raise GeometryError("graph is not discretely convex")
        object.__setattr__(self, "u", u)

    @property
    def r(self) -> np.ndarray:
        return self.radial_grid.nodes

    def with_u(self, u, asymptotic_slope: Optional[float] = None) -> "GraphSurface":
        slope = self.asymptotic_slope if asymptotic_slope is None else asymptotic_slope
        return GraphSurface(self.ambient_n, self.radial_grid, u, slope)

    def meridian_points(self) -> np.ndarray:
        return np.column_stack([self.r, self.u])

    @classmethod
    def from_function(cls, ambient_n: int, node_count: int, r_max: float, func: Callable,
                      asymptotic_slope: float = 0.0, stretch: float = 0.0):
        grid = RadialGrid(node_count, r_max, 0.0, stretch)
        return cls(ambient_n, grid, func(grid.nodes), asymptotic_slope)


Surface = Union[RadialSurface, GraphSurface]


@dataclass(frozen=True, eq=False)
class CurvatureData:
    """Per-node extrinsic geometry.

    ``nu`` and ``position`` are given in the plane of the curve (n = 1) or in
    the meridian half-plane (s, z).  ``kappa_meridian`` is the curvature of
    the profile curve, ``kappa_rotational`` the (n-1)-fold principal
    curvature of the orbits of the rotation group.
    """

    ambient_n: int
    H: np.ndarray
    normA2: np.ndarray
    lambda1: np.ndarray
    nu: np.ndarray
    F_dot_nu: np.ndarray
    position_norm: np.ndarray
    kappa_meridian: np.ndarray
    kappa_rotational: np.ndarray
    position: np.ndarray
    metric_factor: np.ndarray

    @property
    def lambda_max(self) -> np.ndarray:
        if self.ambient_n == 1:
            return self.kappa_meridian
        return np.maximum(self.kappa_meridian, self.kappa_rotational)

    def principal_sum(self) -> np.ndarray:
        if self.ambient_n == 1:
            return self.kappa_meridian
        return self.kappa_meridian + (self.ambient_n - 1) * self.kappa_rotational

    def check(self, tol: float = TOL_GEOM) -> None:
        """Raise GeometryError if the pointwise invariants fail."""
        n = self.ambient_n
        scale = np.maximum(1.0, np.abs(self.H))
        if np.any(np.abs(self.H - self.principal_sum()) > tol * scale):
            raise GeometryError("H differs from the sum of principal curvatures")
        if np.any(self.normA2 < self.H ** 2 / n - tol * scale ** 2):
            raise GeometryError("|A|^2 < H^2/n")
        if np.any(self.lambda1 > self.H / n + tol * scale) or np.any(
            self.H / n > self.lambda_max + tol * scale
        ):
            raise GeometryError("lambda1 <= H/n <= lambda_max violated")


# ---------------------------------------------------------------------------
# finite differences


def pad(values: np.ndarray, h: float, left: str, right: str, right_slope: float = 0.0):
    """Return ``values`` with one ghost node on each side.

    Modes: ``periodic``, ``even`` (reflection), ``extrap`` (quadratic
    extrapolation, i.e. one-sided second-order first derivative) and
    ``slope`` (Neumann ghost with the prescribed right-end derivative).
    """
    f = np.asarray(values, dtype=float)
    if left == "periodic":
        return np.concatenate([f[-1:], f, f[:1]])
    if left == "even":
        lo = f[1]
    elif left == "extrap":
        lo = 3 * f[0] - 3 * f[1] + f[2]
    else:
        raise ValueError(f"unknown left mode {left!r}")
    if right == "even":
        hi = f[-2]
    elif right == "extrap":
        hi = 3 * f[-1] - 3 * f[-2] + f[-3]
    elif right == "slope":
        hi = f[-2] + 2.0 * h * right_slope
    else:
        raise ValueError(f"unknown right mode {right!r}")
    return np.concatenate([[lo], f, [hi]])


def centered(padded: np.ndarray, h: float):
    """First and second centred differences from a ghost-padded array."""
    d1 = (padded[2:] - padded[:-2]) / (2.0 * h)
    d2 = (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / (h * h)
    return d1, d2


def _radial_modes(surface: RadialSurface):
    return ("periodic", "periodic") if surface.ambient_n == 1 else ("even", "even")


def profile_derivatives(surface: Surface, right_slope: Optional[float] = None):
    """First and second derivatives of the profile function at every node."""
    if isinstance(surface, RadialSurface):
        h = surface.grid.spacing
        lm, rm = _radial_modes(surface)
        return centered(pad(surface.rho, h, lm, rm), h)
    if right_slope is None:
        return graph_derivatives(surface.radial_grid, surface.u)
    return graph_derivatives(surface.radial_grid, surface.u, "slope", right_slope)


def scalar_derivatives(surface: Surface, q: np.ndarray):
    """Centred derivatives of a nodal scalar in the grid parameter.

    Scalars are smooth functions of position, hence even across the poles and
    the graph axis; the graph far end uses one-sided differences.
    """
    if isinstance(surface, RadialSurface):
        h = surface.grid.spacing
        lm, rm = _radial_modes(surface)
        return centered(pad(q, h, lm, rm), h)
    return graph_derivatives(surface.radial_grid, q)


# ---------------------------------------------------------------------------
# curvature


def _radial_curvature(surface: RadialSurface, d1, d2) -> CurvatureData:
    n = surface.ambient_n
    rho = surface.rho
    a = surface.angles
    W = np.sqrt(rho ** 2 + d1 ** 2)
    k_mer = (rho ** 2 + 2.0 * d1 ** 2 - rho * d2) / W ** 3
    pos = surface.meridian_points()
    if n == 1:
        # outward normal (rho e_r - rho' e_phi)/W
        c, s = np.cos(a), np.sin(a)
        nu = np.column_stack([(rho * c + d1 * s) / W, (rho * s - d1 * c) / W])
        k_rot = np.zeros_like(rho)
        H = k_mer.copy()
        normA2 = k_mer ** 2
        lam1 = k_mer.copy()
    else:
        s, c = np.sin(a), np.cos(a)
        s[0] = 0.0
        s[-1] = 0.0
        c[0] = 1.0
        c[-1] = -1.0
        # e_rho = (sin, cos), e_theta = (cos, -sin) in (s, z)
        nu = np.column_stack([(rho * s - d1 * c) / W, (rho * c + d1 * s) / W])
        with np.errstate(divide="ignore", invalid="ignore"):
            k_rot = nu[:, 0] / (rho * s)
        pole_value = (rho - d2) / rho ** 2
        k_rot[0] = pole_value[0]
        k_rot[-1] = pole_value[-1]
        H = k_mer + (n - 1) * k_rot
        normA2 = k_mer ** 2 + (n - 1) * k_rot ** 2
        lam1 = np.minimum(k_mer, k_rot)
    rel = pos - _origin_meridian(surface)[None, :]
    return CurvatureData(
        ambient_n=n,
        H=H,
        normA2=normA2,
        lambda1=lam1,
        nu=nu,
        F_dot_nu=np.einsum("ij,ij->i", rel, nu),
        position_norm=np.hypot(rel[:, 0], rel[:, 1]),
        kappa_meridian=k_mer,
        kappa_rotational=k_rot,
        position=pos,
        metric_factor=W,
    )


def _origin_meridian(surface: RadialSurface) -> np.ndarray:
    if surface.ambient_n == 1:
        return np.array(surface.origin, dtype=float)
    return np.array([0.0, surface.origin[-1]])


def curvature_radial(surface: RadialSurface) -> CurvatureData:
    """Curvature data of a star-shaped curve or axisymmetric hypersurface.

    Parameters
    ----------
    surface : RadialSurface
        Profile with positive radial function.

    Returns
    -------
    CurvatureData
        The meridian curvature is that of a polar curve,
        (rho^2 + 2 rho'^2 - rho rho'') / (rho^2 + rho'^2)^{3/2}; the rotational
        curvature is nu_s / s, replaced on the axis by the limit
        (rho - rho'') / rho^2.  The normal points away from the origin.
    """
    if not isinstance(surface, RadialSurface):
        raise TypeError("curvature_radial expects a RadialSurface")
    d1, d2 = profile_derivatives(surface)
    return _radial_curvature(surface, d1, d2)


def graph_curvature_terms(r: np.ndarray, ur: np.ndarray, urr: np.ndarray, n: int):
    """Meridian and rotational curvature of a radial graph with given derivatives."""
    W = np.sqrt(1.0 + ur ** 2)
    k_mer = urr / W ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        k_rot = ur / (r * W)
    axis = r == 0.0
    k_rot = np.where(axis, urr, k_rot)
    return k_mer, k_rot, W


def curvature_graph(surface: GraphSurface, right_slope: Optional[float] = None) -> CurvatureData:
    """Curvature data of a rotationally symmetric graph.

    H = u_rr / (1 + u_r^2)^{3/2} + (n - 1) u_r / (r sqrt(1 + u_r^2)), with the
    axis value n u_rr(0).  The normal (u_r, -1)/sqrt(1 + u_r^2) points out of
    the epigraph.  ``right_slope`` imposes u_r at r_max through a ghost node;
    otherwise the far end uses one-sided differences.
    """
    if not isinstance(surface, GraphSurface):
        raise TypeError("curvature_graph expects a GraphSurface")
    if surface.radial_grid.node_count < 3:
        raise GeometryError("graph grid needs at least 3 nodes")
    n = surface.ambient_n
    r = surface.r
    ur, urr = profile_derivatives(surface, right_slope)
    k_mer, k_rot, W = graph_curvature_terms(r, ur, urr, n)
    nu = np.column_stack([ur / W, -1.0 / W])
    pos = surface.meridian_points()
    return CurvatureData(
        ambient_n=n,
        H=k_mer + (n - 1) * k_rot,
        normA2=k_mer ** 2 + (n - 1) * k_rot ** 2,
        lambda1=np.minimum(k_mer, k_rot),
        nu=nu,
        F_dot_nu=(r * ur - surface.u) / W,
        position_norm=np.hypot(r, surface.u),
        kappa_meridian=k_mer,
        kappa_rotational=k_rot,
        position=pos,
        metric_factor=W,
    )


def curvature(surface: Surface) -> CurvatureData:
    if isinstance(surface, RadialSurface):
        return curvature_radial(surface)
    return curvature_graph(surface)


# ---------------------------------------------------------------------------
# support angle and area


def support_angle(surface: Surface, axis) -> float:
    """Largest angle between a surface point and ``axis``, seen from the origin.

    The graph vertex node on the axis is skipped when it sits at the origin
    (the angle is undefined there); any other node at the origin is rejected.
    """
    n = surface.ambient_n
    a = np.asarray(axis, dtype=float)
    if a.shape != (n + 1,):
        raise GeometryError("axis must be a vector of R^{n+1}")
    a = a / np.linalg.norm(a)
    pts = surface.meridian_points()
    norm = np.hypot(pts[:, 0], pts[:, 1])
    keep = np.ones(len(norm), dtype=bool)
    if isinstance(surface, GraphSurface) and norm[0] == 0.0:
        keep[0] = False
    if np.any(norm[keep] == 0.0):
        raise GeometryError("a surface node lies at the origin")
    pts, norm = pts[keep], norm[keep]
    if n == 1:
        cosang = (pts @ a) / norm
    else:
        # worst azimuth of the orbit through (s, z)
        lateral = float(np.linalg.norm(a[:-1]))
        cosang = (pts[:, 1] * a[-1] - pts[:, 0] * lateral) / norm
    return float(np.max(np.arccos(np.clip(cosang, -1.0, 1.0))))


def area_density(surface: Surface) -> np.ndarray:
    """Area element per unit grid parameter at every node."""
    n = surface.ambient_n
    d1, _ = profile_derivatives(surface)
    if isinstance(surface, RadialSurface):
        W = np.sqrt(surface.rho ** 2 + d1 ** 2)
        if n == 1:
            return W
        s = surface.rho * np.sin(surface.angles)
        s[0] = s[-1] = 0.0
        return sphere_measure(n - 1) * s ** (n - 1) * W
    dens = sphere_measure(n - 1) * surface.r ** (n - 1) * np.sqrt(1.0 + d1 ** 2)
    return dens * surface.radial_grid.dr


def _trapezoid(f: np.ndarray, h: float, periodic: bool) -> float:
    if periodic:
        return float(h * np.sum(f))
    return float(h * (np.sum(f) - 0.5 * (f[0] + f[-1])))


def area(surface: Surface, restriction: Optional[Ball] = None) -> float:
    """n-dimensional measure by composite trapezoidal quadrature.

    With a ball restriction, cells crossing the sphere are cut at the
    linearly interpolated crossing point.
    """
    dens = area_density(surface)
    periodic = isinstance(surface, RadialSurface) and surface.ambient_n == 1
    h = surface.grid.spacing if isinstance(surface, RadialSurface) else surface.radial_grid.spacing
    if restriction is None:
        return _trapezoid(dens, h, periodic)
    gap = restriction.radius - _distance_to(surface, restriction.center)
    if periodic:
        dens = np.append(dens, dens[0])
        gap = np.append(gap, gap[0])
    total = 0.0
    for i in range(len(dens) - 1):
        g0, g1 = gap[i], gap[i + 1]
        f0, f1 = dens[i], dens[i + 1]
        if g0 >= 0 and g1 >= 0:
            total += 0.5 * h * (f0 + f1)
        elif g0 >= 0 or g1 >= 0:
            lam = g0 / (g0 - g1)
            fc = f0 + lam * (f1 - f0)
            if g0 >= 0:
                total += 0.5 * h * lam * (f0 + fc)
            else:
                total += 0.5 * h * (1.0 - lam) * (fc + f1)
    return float(total)


def _distance_to(surface: Surface, center) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    n = surface.ambient_n
    if c.shape != (n + 1,):
        raise GeometryError("ball centre must be a point of R^{n+1}")
    pts = surface.meridian_points()
    if n == 1:
        return np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    if np.any(c[:-1] != 0.0):
        raise GeometryError("balls must be centred on the symmetry axis")
    return np.hypot(pts[:, 0], pts[:, 1] - c[-1])


def distance_to_point(surface: Surface, center) -> np.ndarray:
    """Euclidean distance from every node to ``center`` (on the axis if n >= 2)."""
    return _distance_to(surface, center)


# ---------------------------------------------------------------------------
# intrinsic operators on scalar fields


def laplace_beltrami(surface: Surface, q: np.ndarray, cd: Optional[CurvatureData] = None) -> np.ndarray:
    """Laplace-Beltrami operator of an invariant nodal scalar.

    For a profile with arc-length factor W and orbit radius s,
    Delta q = (s^{n-1} W)^{-1} d/dp (s^{n-1} q_p / W); on the axis the
    revolution term is replaced by its limit, giving n q_pp / W^2.
    """
    n = surface.ambient_n
    cd = cd if cd is not None else curvature(surface)
    W = cd.metric_factor
    q1, q2 = scalar_derivatives(surface, q)
    W1, _ = scalar_derivatives(surface, W)
    lap = (q2 - q1 * W1 / W) / W ** 2
    if n == 1:
        return lap
    s = cd.position[:, 0]
    s1, _ = scalar_derivatives(surface, s) if isinstance(surface, RadialSurface) else (np.ones_like(s), None)
    with np.errstate(divide="ignore", invalid="ignore"):
        rot = (n - 1) * (s1 / s) * q1 / W ** 2
    axis = s == 0.0
    rot = np.where(axis, (n - 1) * q2 / W ** 2, rot)
    return lap + rot


def arclength_derivative(surface: Surface, q: np.ndarray, cd: Optional[CurvatureData] = None) -> np.ndarray:
    """Derivative of a nodal scalar along the unit profile tangent."""
    cd = cd if cd is not None else curvature(surface)
    q1, _ = scalar_derivatives(surface, q)
    return q1 / cd.metric_factor


def unit_tangent(surface: Surface, cd: Optional[CurvatureData] = None) -> np.ndarray:
    """Unit tangent of the profile in the direction of increasing parameter."""
    cd = cd if cd is not None else curvature(surface)
    pts = cd.position
    if isinstance(surface, GraphSurface):
        t = np.column_stack([np.ones(len(pts)), -cd.nu[:, 0] / cd.nu[:, 1]])
    else:
        # the normal rotated by a quarter turn gives the parameter direction
        if surface.ambient_n == 1:
            t = np.column_stack([-cd.nu[:, 1], cd.nu[:, 0]])
        else:
            t = np.column_stack([cd.nu[:, 1], -cd.nu[:, 0]])
    return t / np.linalg.norm(t, axis=1)[:, None]
