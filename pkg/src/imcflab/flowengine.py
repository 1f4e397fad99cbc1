"""Implicit time integration of inverse mean curvature flow.

Each stepper advances one parametrisation:

* ``step_star``: radial function of a star-shaped curve or axisymmetric
  hypersurface, d(rho)/dt = sqrt(rho^2 + |grad rho|^2) / (rho H),
* ``step_graph``: rotationally symmetric entire graph,
  du/dt = -sqrt(1 + u_r^2) / H, with the far-field slope pinned to the
  evolving asymptotic cone,
* ``step_link``: a closed convex curve on S^2 moving by its outward conormal
  divided by the geodesic curvature,
* ``step_ultrafast``: the radial ultra-fast diffusion u_t = div(u^-2 grad u).

The star, graph and ultra-fast steppers solve the implicit BDF2 (or
backward Euler) equations with a damped Newton iteration; the residuals of
the two geometric flows are multiplied through by H so that data with flat
pieces (H = 0) are admissible on the first step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .geomcore import (
    GeometryError,
    GraphSurface,
    RadialGrid,
    RadialSurface,
    area,
    centered,
    curvature,
    graph_curvature_terms,
    graph_derivatives,
    pad,
    support_angle,
)

logger = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-10


class FlowSignal(Exception):
    """Terminal event raised by a stepper."""

    def __init__(self, kind: str, t: float, message: str = ""):
        super().__init__(f"{kind} at t={t:.6g}: {message}")
        self.kind = kind
        self.t = t
        self.message = message


class NewtonFailure(Exception):
    pass


@dataclass(frozen=True)
class StepControl:
    dt_init: float = 1e-3
    dt_max: float = 1e-2
    newton_tol: float = 1e-10
    newton_max_iters: int = 40
    adapt_rule: str = "fixed"
    target_update: float = 0.01
    ramp_time: float = 0.0
    scheme: str = "bdf2"
    k_redistribute: int = 20

    def __post_init__(self):
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if self.dt_max < self.dt_init:
            raise ValueError("dt_max must be >= dt_init")
        if not (1e-14 < self.newton_tol < 1e-6):
            raise ValueError("newton_tol must lie in (1e-14, 1e-6)")
        if self.adapt_rule not in ("fixed", "cfl"):
            raise ValueError("adapt_rule must be 'fixed' or 'cfl'")
        if self.scheme not in ("bdf2", "euler"):
            raise ValueError("scheme must be 'bdf2' or 'euler'")


@dataclass(frozen=True, eq=False)
class LinkCurve:
    """Closed curve on S^2, nodes ordered counter-clockwise about ``center``."""

    points: np.ndarray
    center: np.ndarray = None
    convex: bool = True

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or len(p) < 16:
            raise ValueError("link curves need at least 16 nodes on S^2")
        if np.any(np.abs(np.linalg.norm(p, axis=1) - 1.0) > 1e-12):
            raise ValueError("link nodes must lie on the unit sphere")
        c = p.mean(axis=0) if self.center is None else np.asarray(self.center, dtype=float)
        c = c / np.linalg.norm(c)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "center", c)

    @classmethod
    def geodesic_circle(cls, radius: float, node_count: int = 256, center=(0.0, 0.0, 1.0)):
        c = np.asarray(center, dtype=float)
        c = c / np.linalg.norm(c)
        a = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = a - (a @ c) * c
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(c, e1)
        t = 2 * math.pi * np.arange(node_count) / node_count
        pts = math.cos(radius) * c + math.sin(radius) * (np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2)
        pts /= np.linalg.norm(pts, axis=1)[:, None]
        return cls(pts, c)

    def edge_lengths(self) -> np.ndarray:
        p, q = self.points, np.roll(self.points, -1, axis=0)
        return np.arctan2(np.linalg.norm(np.cross(p, q), axis=1), np.einsum("ij,ij->i", p, q))

    def length(self) -> float:
        return float(np.sum(self.edge_lengths()))

    def polar_angles(self, center=None) -> np.ndarray:
        c = self.center if center is None else np.asarray(center, dtype=float)
        return np.arctan2(np.linalg.norm(np.cross(self.points, c[None, :]), axis=1), self.points @ c)

    def frame(self):
        """Unit tangents, inward conormals and geodesic curvature at the nodes."""
        X = self.points
        lp = self.edge_lengths()
        lm = np.roll(lp, 1)
        fwd = (np.roll(X, -1, 0) - X) / lp[:, None]
        bwd = (X - np.roll(X, 1, 0)) / lm[:, None]
        T = np.roll(X, -1, 0) - np.roll(X, 1, 0)
        T -= np.einsum("ij,ij->i", T, X)[:, None] * X
        T /= np.linalg.norm(T, axis=1)[:, None]
        N_in = np.cross(X, T)
        Xss = (fwd - bwd) / (0.5 * (lp + lm))[:, None]
        kappa = np.einsum("ij,ij->i", Xss, N_in)
        return T, N_in, kappa


@dataclass(frozen=True, eq=False)
class UltrafastProfile:
    """Radial profile of the ultra-fast analogue; ``extinct`` marks the zero profile."""

    grid: RadialGrid
    u: np.ndarray
    n: int
    extinct: bool = False

    def __post_init__(self):
        if self.grid.r_min <= 0:
            raise ValueError("ultra-fast profiles need r_min > 0")
        u = np.array(self.u, dtype=float)
        if u.shape != (self.grid.node_count,):
            raise ValueError("one value per node is required")
        if self.extinct:
            if np.any(u != 0):
                raise ValueError("an extinct profile is identically zero")
        elif np.any(u <= 0):
            raise ValueError("ultra-fast profiles must be positive")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes


FlowSurface = Union[RadialSurface, GraphSurface, LinkCurve, UltrafastProfile]


@dataclass(frozen=True, eq=False)
class FlowState:
    surface: FlowSurface
    t: float
    step_index: int = 0
    diagnostics: Dict[str, float] = field(default_factory=dict)
    previous: Optional[FlowSurface] = None
    dt_previous: float = 0.0


@dataclass
class Trajectory:
    states: List[FlowState]
    rows: List[Dict[str, float]]
    event: Optional[Tuple[str, float, str]] = None
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


# ---------------------------------------------------------------------------
# Newton machinery


def _colors(n: int, band: int) -> List[np.ndarray]:
    k = 2 * band + 1
    q = n // k
    groups = [np.arange(c, k * q, k) for c in range(k)]
    groups += [np.array([i]) for i in range(k * q, n)]
    return [g for g in groups if len(g)]


def _jacobian(resid: Callable, x: np.ndarray, g0: np.ndarray, periodic: bool, band: int = 1) -> sp.csc_matrix:
    """Finite-difference Jacobian of a banded residual via column colouring."""
    n = len(x)
    rows, cols, vals = [], [], []
    # perturbations follow the local variation of x, so that thin features
    # sitting on a large offset are not swamped, and stay above round-off
    local = np.abs(np.diff(x, prepend=x[-1] if periodic else x[0]))
    local = np.maximum(local, np.abs(np.diff(x, append=x[0] if periodic else x[-1])))
    eps = np.maximum(1e-7 * local, 1e-13 * max(1.0, float(np.max(np.abs(x)))))
    eps = np.maximum(eps, 8 * np.spacing(np.abs(x)))
    for grp in _colors(n, band):
        xp = x.copy()
        xp[grp] += eps[grp]
        eps[grp] = xp[grp] - x[grp]
        dg = resid(xp) - g0
        for off in range(-band, band + 1):
            r = grp + off
            if periodic:
                r = np.mod(r, n)
                keep = np.ones(len(r), dtype=bool)
            else:
                keep = (r >= 0) & (r < n)
            rows.append(r[keep])
            cols.append(grp[keep])
            vals.append(dg[r[keep]] / eps[grp[keep]])
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _norm(g: np.ndarray) -> float:
    if not np.all(np.isfinite(g)):
        return math.inf
    return float(np.max(np.abs(g)))


def newton_solve(resid: Callable, x0: np.ndarray, periodic: bool, tol: float, max_iters: int,
                 lower=None, band: int = 1,
                 jac: Optional[Callable] = None) -> np.ndarray:
    """Damped Newton iteration; the damping is halved until the residual drops.

    ``jac(x)`` supplies the Jacobian; without it a banded finite-difference
    Jacobian is used.
    """
    x = np.array(x0, dtype=float)
    g = resid(x)
    gn = _norm(g)
    if not math.isfinite(gn):
        raise NewtonFailure("initial guess is not admissible")
    for _ in range(max_iters):
        J = jac(x) if jac is not None else _jacobian(resid, x, g, periodic, band)
        try:
            with np.errstate(all="ignore"):
                dx = -spla.spsolve(J, g)
        except Exception as exc:  # singular factorisation
            raise NewtonFailure(str(exc))
        if not np.all(np.isfinite(dx)):
            raise NewtonFailure("singular Jacobian")
        if float(np.max(np.abs(dx))) <= tol * max(1.0, float(np.max(np.abs(x)))):
            xt = x + dx if lower is None else np.maximum(x + dx, lower)
            if math.isfinite(_norm(resid(xt))):
                return xt
        lam = 1.0
        while True:
            xt = x + lam * dx
            if lower is not None:
                xt = np.maximum(xt, lower)
            gt = resid(xt)
            gtn = _norm(gt)
            if gtn < gn or gtn == 0.0:
                break
            lam *= 0.5
            if lam < 1.0 / 1024:
                raise NewtonFailure("line search stalled")
        step = float(np.max(np.abs(xt - x)))
        x, g, gn = xt, gt, gtn
        if step <= tol * max(1.0, float(np.max(np.abs(x)))):
            return x
    raise NewtonFailure("no convergence within the iteration limit")


def _bdf_coefficients(state: FlowState, dt: float, scheme: str):
    if scheme == "euler" or state.previous is None or state.dt_previous <= 0:
        return 1.0, 1.0, 0.0
    w = dt / state.dt_previous
    return (1 + 2 * w) / (1 + w), 1 + w, w * w / (1 + w)


def _history(state: FlowState, values: Callable):
    x_n = values(state.surface)
    x_m = values(state.previous) if state.previous is not None else x_n
    return x_n, x_m


def _predict(state: FlowState, dt: float, values: Callable, fallback: np.ndarray) -> np.ndarray:
    if state.previous is None or state.dt_previous <= 0:
        return fallback
    x_n, x_m = _history(state, values)
    return x_n + (dt / state.dt_previous) * (x_n - x_m)


# ---------------------------------------------------------------------------
# star-shaped flow


def _star_parts(surface: RadialSurface, rho: np.ndarray):
    n = surface.ambient_n
    h = surface.grid.spacing
    mode = "periodic" if n == 1 else "even"
    d1, d2 = centered(pad(rho, h, mode, mode), h)
    W = np.sqrt(rho ** 2 + d1 ** 2)
    k_mer = (rho ** 2 + 2 * d1 ** 2 - rho * d2) / W ** 3
    if n == 1:
        return k_mer, W
    a = surface.angles
    s, c = np.sin(a), np.cos(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        k_rot = (rho * s - d1 * c) / (W * rho * s)
    pole = (rho - d2) / rho ** 2
    k_rot[0], k_rot[-1] = pole[0], pole[-1]
    return k_mer + (n - 1) * k_rot, W


def step_star(state: FlowState, control: StepControl, dt: float) -> FlowState:
    """One implicit step of the radial form of the flow."""
    surf = state.surface
    if not isinstance(surf, RadialSurface):
        raise TypeError("step_star expects a RadialSurface state")
    H0, W0 = _star_parts(surf, surf.rho)
    if state.t > 0 and np.min(H0) <= 0:
        raise FlowSignal("hypothesis-violated", state.t, "mean curvature is not positive")
    # flat faces of C^{1,1} data carry an O(h^2) truncation error in H
    slack = max(1e-8, 10.0 * surf.grid.spacing ** 2)
    if state.t == 0 and np.min(H0) < -slack * max(1.0, float(np.max(np.abs(H0)))):
        raise FlowSignal("hypothesis-violated", state.t, "initial data are not mean-convex")
    a0, a1, a2 = _bdf_coefficients(state, dt, control.scheme)
    rho_n, rho_m = _history(state, lambda s: s.rho)
    periodic = surf.ambient_n == 1

    def resid(rho):
        if np.any(rho <= 0):
            return np.full_like(rho, np.nan)
        H, W = _star_parts(surf, rho)
        return H * rho * (a0 * rho - a1 * rho_n + a2 * rho_m) - dt * W

    L = float(np.max(surf.rho))
    floor = math.sqrt(dt) / L
    guess = rho_n + dt * W0 / (rho_n * np.maximum(H0, floor))
    guess = _predict(state, dt, lambda s: s.rho, guess)
    # the product form also vanishes on a spurious branch with H < 0 and the
    # surface moving inwards; the outward motion dt W / (H rho) > 0 excludes it
    lower = (a1 * rho_n - a2 * rho_m) / a0
    guess = np.maximum(guess, lower)
    rho = newton_solve(resid, guess, periodic, control.newton_tol, control.newton_max_iters, lower=lower)
    H, _ = _star_parts(surf, rho)
    if np.min(H) <= 0:
        raise NewtonFailure("step produced non-positive mean curvature")
    new = surf.with_rho(rho)
    return FlowState(new, state.t + dt, state.step_index + 1, diagnostics(new, surf),
                     previous=surf, dt_previous=dt)


# ---------------------------------------------------------------------------
# graph flow


@dataclass(frozen=True)
class ConeLaw:
    """Evolving round cone: sin theta(t) = sin theta0 * exp(t / (n - 1))."""

    theta0: float
    n: int

    @property
    def maximal_time(self) -> float:
        return -(self.n - 1) * math.log(math.sin(self.theta0))

    def sin_theta(self, t: float) -> float:
        return math.sin(self.theta0) * math.exp(t / (self.n - 1))

    def slope(self, t: float) -> float:
        s = self.sin_theta(t)
        if s >= 1.0:
            raise FlowSignal("maximal-time-reached", t, "evolving cone reached a half-space")
        return math.sqrt(1.0 - s * s) / s


def far_field_slope(u: np.ndarray, grid: RadialGrid, alpha: float) -> float:
    """Slope at r_max from the far-field model u = alpha r + gamma + delta / r.

    ``alpha`` is the slope of the evolving cone; gamma and delta are fitted to
    the last two nodes, and the returned slope is alpha - delta / r_max^2.
    """
    r = grid.nodes
    r1, r2 = r[-2], r[-1]
    delta = (u[-1] - u[-2] - alpha * (r2 - r1)) / (1.0 / r2 - 1.0 / r1)
    return alpha - delta / r2 ** 2


def upwind_weights(surface: GraphSurface, alpha: float):
    """Weights of the backward and forward one-sided slopes at every node.

    Linearising u_t = -W/H gives d(u_t) = D d(u_rr) + b d(u_r) with
    D = 1/(H W)^2; where the cell Peclet number |b| h / D is large the
    centred slope is blended towards the second-order upwind slope, which
    suppresses the odd-even modes of steep, transport-dominated far fields.
    """
    grid, u, n, r = surface.radial_grid, surface.u, surface.ambient_n, surface.r
    ur, urr = graph_derivatives(grid, u, "slope", far_field_slope(u, grid, alpha))
    k_mer, k_rot, W = graph_curvature_terms(r, ur, urr, n)
    H = k_mer + (n - 1) * k_rot
    with np.errstate(divide="ignore", invalid="ignore"):
        dH = (n - 1) / (r * W ** 3) - 3 * ur * urr / W ** 5
        b = -ur / (W * H) + W * dH / H ** 2
        pe = np.abs(b) * grid.spacing * grid.dr * (H * W) ** 2
    ok = np.isfinite(pe) & (H > 0) & (r > 0)
    pe = np.where(ok, pe, 0.0)
    w = pe ** 2 / (pe ** 2 + 4.0)
    back = np.where(ok & (b < 0), w, 0.0)
    fwd = np.where(ok & (b > 0), w, 0.0)
    fwd[-1] = 0.0
    return back, fwd


def _graph_derivs(surface: GraphSurface, u: np.ndarray, alpha: float, weights=None):
    grid = surface.radial_grid
    h = grid.spacing
    edge = far_field_slope(u, grid, alpha)
    padded = pad(u, h, "even", "slope", edge * float(grid.dr[-1]))
    d1, d2 = centered(padded, h)
    if weights is not None:
        back, fwd = weights
        ext = np.concatenate([[u[2]], padded, [0.0]])
        ui, um, umm = ext[2:-2], ext[1:-3], ext[:-4]
        up, upp = ext[3:-1], ext[4:]
        d1 = ((1.0 - back - fwd) * d1 + back * (3 * ui - 4 * um + umm) / (2 * h)
              + fwd * (-3 * ui + 4 * up - upp) / (2 * h))
    ur, urr = grid.to_r(d1, d2)
    if outflow(alpha):
        ur, urr = _outflow_edge(grid, u, alpha, ur, urr)
    return ur, urr


def _graph_parts(surface: GraphSurface, u: np.ndarray, alpha: float, weights=None):
    ur, urr = _graph_derivs(surface, u, alpha, weights)
    k_mer, k_rot, W = graph_curvature_terms(surface.r, ur, urr, surface.ambient_n)
    return k_mer + (surface.ambient_n - 1) * k_rot, W


def _derivative_operators(surface: GraphSurface, alpha: float, weights, band: int = 2):
    """Sparse matrices of the affine maps u -> u_r and u -> u_rr.

    The maps are probed about u = 0: near a steep vertex u carries a large
    offset over tiny variations, and differencing about the actual state
    would lose most digits to cancellation.
    """
    n = len(surface.u)
    zero = np.zeros(n)
    c1, c2 = _graph_derivs(surface, zero, alpha, weights)
    mats = []
    for c in (0, 1):
        rows, cols, vals = [], [], []
        for grp in _colors(n, band):
            e = zero.copy()
            e[grp] = 1.0
            d = _graph_derivs(surface, e, alpha, weights)[c] - (c1, c2)[c]
            for off in range(-band, band + 1):
                r = grp + off
                keep = (r >= 0) & (r < n)
                rows.append(r[keep])
                cols.append(grp[keep])
                vals.append(d[r[keep]])
        mats.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(n, n)))
    return mats[0], mats[1]


def _graph_pointwise_partials(r: np.ndarray, ur: np.ndarray, urr: np.ndarray, n: int):
    """Partial derivatives of H and W with respect to u_r and u_rr."""
    W = np.sqrt(1.0 + ur ** 2)
    axis = r == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rot_r = np.where(axis, 0.0, 1.0 / (r * W ** 3))
    H_r = -3.0 * ur * urr / W ** 5 + (n - 1) * rot_r
    H_rr = 1.0 / W ** 3 + (n - 1) * np.where(axis, 1.0, 0.0)
    return H_r, H_rr, ur / W


def outflow(alpha: float) -> bool:
    """Whether r_max is an outflow boundary for a far field of slope ``alpha``.

    Far out the flow reduces to u_t = -r (u_r + 1/u_r), whose characteristics
    move with speed r (1 - u_r^-2): outwards once the slope exceeds one, and
    then no boundary datum may be imposed.
    """
    return alpha > 1.0


def _outflow_edge(grid: RadialGrid, u: np.ndarray, alpha: float, ur: np.ndarray, urr: np.ndarray):
    """Last-node derivatives without a boundary datum.

    The slope is the backward second-order difference; the curvature is the
    far-field model value 2 delta / r^3 with delta fitted on the two cells
    next to the boundary, so the last node enters only through transport.
    """
    r = grid.nodes
    h = grid.spacing
    ur = ur.copy()
    urr = urr.copy()
    ur[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h * grid.dr[-1])
    r0, r1 = r[-3], r[-2]
    delta = (u[-2] - u[-3] - alpha * (r1 - r0)) / (1.0 / r1 - 1.0 / r0)
    urr[-1] = 2.0 * delta / r[-1] ** 3
    return ur, urr


def step_graph(state: FlowState, control: StepControl, dt: float, cone: ConeLaw) -> FlowState:
    """One implicit step of the graph form with far-field slope matching ``cone``."""
    surf = state.surface
    if not isinstance(surf, GraphSurface):
        raise TypeError("step_graph expects a GraphSurface state")
    t_new = state.t + dt
    if t_new >= cone.maximal_time:
        raise FlowSignal("maximal-time-reached", state.t, "evolving cone reached a half-space")
    slope_new = cone.slope(t_new)
    H0, W0 = _graph_parts(surf, surf.u, cone.slope(state.t))
    a0, a1, a2 = _bdf_coefficients(state, dt, control.scheme)
    u_n, u_m = _history(state, lambda s: s.u)

    weights = upwind_weights(surf, cone.slope(state.t))

    def resid(u):
        H, W = _graph_parts(surf, u, slope_new, weights)
        return H * (a0 * u - a1 * u_n + a2 * u_m) + dt * W

    Dr, Drr = _derivative_operators(surf, slope_new, weights)
    n_amb = surf.ambient_n

    def jac(u):
        ur, urr = _graph_derivs(surf, u, slope_new, weights)
        k_mer, k_rot, _ = graph_curvature_terms(surf.r, ur, urr, n_amb)
        H = k_mer + (n_amb - 1) * k_rot
        H_r, H_rr, W_r = _graph_pointwise_partials(surf.r, ur, urr, n_amb)
        lag = a0 * u - a1 * u_n + a2 * u_m
        return sp.csc_matrix(sp.diags(a0 * H) + sp.diags(lag * H_r + dt * W_r) @ Dr
                             + sp.diags(lag * H_rr) @ Drr)

    floor = math.sqrt(dt) / surf.radial_grid.r_max
    guess = u_n - dt * W0 / np.maximum(H0, floor)
    guess = _predict(state, dt, lambda s: s.u, guess)
    u = newton_solve(resid, guess, False, control.newton_tol, control.newton_max_iters, band=2, jac=jac)
    H, _ = _graph_parts(surf, u, slope_new, weights)
    if np.min(H) <= 0:
        raise NewtonFailure("step produced non-positive mean curvature")
    try:
        new = surf.with_u(u, asymptotic_slope=slope_new)
    except GeometryError as exc:
        raise NewtonFailure(str(exc))
    edge = None if outflow(slope_new) else far_field_slope(u, surf.radial_grid, slope_new)
    return FlowState(new, t_new, state.step_index + 1, diagnostics(new, surf, edge),
                     previous=surf, dt_previous=dt)


# ---------------------------------------------------------------------------
# link flow on S^2


def redistribute(curve: LinkCurve) -> LinkCurve:
    """Resample the nodes uniformly in arc length (periodic cubic spline)."""
    X = curve.points
    seg = curve.edge_lengths()
    s = np.concatenate([[0.0], np.cumsum(seg)])
    closed = np.vstack([X, X[:1]])
    spline = CubicSpline(s, closed, bc_type="periodic", axis=0)
    m = len(X)
    new = spline(s[-1] * np.arange(m) / m)
    new /= np.linalg.norm(new, axis=1)[:, None]
    return LinkCurve(new, curve.center, curve.convex)


def _operator_rows(curve: LinkCurve):
    lp = curve.edge_lengths()
    lm = np.roll(lp, 1)
    mid = 0.5 * (lp + lm)
    return 1.0 / (lp * mid), 1.0 / (lm * mid)


def step_link(state: FlowState, control: StepControl, dt: float, kappa_tol: float = 1e-2) -> FlowState:
    """Semi-implicit BDF2 step of the curve flow on the sphere.

    With the linearisation 1/k_new ~ 2/k - k_new/k^2 and k_new N = X_ss + X,
    about the extrapolated curve X*, the update solves
    (a0 - dt/k^2 D_ss) X_new = a1 X_n - a2 X_{n-1} + dt (X*/k^2 - 2 N/k),
    and the nodes are projected back to the sphere afterwards.
    """
    curve = state.surface
    if not isinstance(curve, LinkCurve):
        raise TypeError("step_link expects a LinkCurve state")
    _, _, kappa_now = curve.frame()
    # a curve whose curvature is below tol everywhere has reached (or just
    # stepped across) a great circle; mixed signs mean convexity was lost
    if np.max(kappa_now) < kappa_tol:
        raise FlowSignal("equator-reached", state.t, "geodesic curvature vanished")
    if np.min(kappa_now) <= 0:
        raise FlowSignal("convexity-lost", state.t, "geodesic curvature is not positive")
    a0, a1, a2 = _bdf_coefficients(state, dt, control.scheme)
    X = curve.points
    Xm = state.previous.points if state.previous is not None else X
    if a2 > 0:
        star = X + (dt / state.dt_previous) * (X - Xm)
        star = LinkCurve(star / np.linalg.norm(star, axis=1)[:, None], curve.center)
    else:
        star = curve
    _, N_in, kappa = star.frame()
    if np.min(kappa) <= 0:
        raise NewtonFailure("extrapolated curve is not convex")
    m = len(X)
    up, lo = _operator_rows(star)
    coef = dt / kappa ** 2
    idx = np.arange(m)
    A = sp.csc_matrix(
        (np.concatenate([a0 + coef * (up + lo), -coef * up, -coef * lo]),
         (np.concatenate([idx, idx, idx]), np.concatenate([idx, (idx + 1) % m, (idx - 1) % m]))),
        shape=(m, m),
    )
    Y = star.points
    rhs = a1 * X - a2 * Xm + dt * (Y / kappa[:, None] ** 2 - 2.0 * N_in / kappa[:, None])
    Xn = spla.splu(A).solve(rhs)
    Xn /= np.linalg.norm(Xn, axis=1)[:, None]
    new = LinkCurve(Xn, curve.center, True)
    previous: Optional[LinkCurve] = curve
    if control.k_redistribute and (state.step_index + 1) % control.k_redistribute == 0:
        # both time levels are resampled from their node 0 so the BDF2 history
        # survives; dropping it costs an Euler step and global first order
        new = redistribute(new)
        previous = redistribute(curve)
    return FlowState(new, state.t + dt, state.step_index + 1, diagnostics(new, curve),
                     previous=previous, dt_previous=dt)


# ---------------------------------------------------------------------------
# ultra-fast diffusion


def ultrafast_operator(r: np.ndarray, u: np.ndarray, n: int, h: float) -> np.ndarray:
    """Centred form of r^{1-n} (r^{n-1} u^{-2} u_r)_r at interior nodes."""
    ur = (u[2:] - u[:-2]) / (2 * h)
    urr = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)
    ui = u[1:-1]
    return (urr - 2.0 * ur ** 2 / ui + (n - 1) * ur / r[1:-1]) / ui ** 2


def vt_profile(r: np.ndarray, T: float, n: int, t: float) -> np.ndarray:
    """Explicit extinction profile sqrt(2 (n-1) (T - t)_+) / r."""
    return math.sqrt(2.0 * (n - 1) * max(T - t, 0.0)) / r


def vt_plugin_residual(grid: RadialGrid, T: float, n: int, t: float) -> float:
    """Max interior residual of the discrete operator applied to the exact v^T."""
    if not 0 <= t < T:
        raise ValueError("the plug-in residual needs 0 <= t < T")
    r = grid.nodes
    v = vt_profile(r, T, n, t)
    c = math.sqrt(2.0 * (n - 1) * (T - t))
    v_t = -(n - 1) / (c * r[1:-1])
    return float(np.max(np.abs(ultrafast_operator(r, v, n, grid.spacing) - v_t)))


def step_ultrafast(state: FlowState, control: StepControl, dt: float,
                   boundary: Callable[[float], Tuple[float, float]]) -> FlowState:
    prof = state.surface
    if not isinstance(prof, UltrafastProfile):
        raise TypeError("step_ultrafast expects an UltrafastProfile state")
    t_new = state.t + dt
    left, right = boundary(t_new)
    if min(left, right) <= POSITIVITY_FLOOR:
        raise FlowSignal("extinction", state.t, "boundary data reached the positivity floor")
    r, h, n = prof.r, prof.grid.spacing, prof.n
    a0, a1, a2 = _bdf_coefficients(state, dt, control.scheme)
    u_n, u_m = _history(state, lambda s: s.u)

    def resid(u):
        if np.any(u <= 0):
            return np.full_like(u, np.nan)
        g = np.empty_like(u)
        g[0] = u[0] - left
        g[-1] = u[-1] - right
        g[1:-1] = (a0 * u[1:-1] - a1 * u_n[1:-1] + a2 * u_m[1:-1]) - dt * ultrafast_operator(r, u, n, h)
        return g

    guess = _predict(state, dt, lambda s: s.u, u_n.copy())
    guess = np.maximum(guess, 0.5 * u_n)
    guess[0], guess[-1] = left, right
    u = newton_solve(resid, guess, False, control.newton_tol, control.newton_max_iters)
    if np.min(u) <= POSITIVITY_FLOOR:
        raise FlowSignal("extinction", state.t, "profile reached the positivity floor")
    new = UltrafastProfile(prof.grid, u, n)
    return FlowState(new, t_new, state.step_index + 1, diagnostics(new, prof),
                     previous=prof, dt_previous=dt)


# ---------------------------------------------------------------------------
# diagnostics


def diagnostics(surface: FlowSurface, previous: Optional[FlowSurface] = None,
                right_slope: Optional[float] = None) -> Dict[str, float]:
    out: Dict[str, float] = {}
    if isinstance(surface, (RadialSurface, GraphSurface)):
        from .geomcore import curvature_graph

        cd = curvature_graph(surface, right_slope) if isinstance(surface, GraphSurface) else curvature(surface)
        values = surface.rho if isinstance(surface, RadialSurface) else surface.u
        axis = np.zeros(surface.ambient_n + 1)
        axis[-1] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / (cd.H * cd.position_norm)
        inv = inv[np.isfinite(inv)]
        out["area"] = area(surface)
        out["min_H"] = float(np.min(cd.H))
        out["max_H"] = float(np.max(cd.H))
        try:
            out["max_theta"] = support_angle(surface, axis)
        except ValueError:
            out["max_theta"] = float("nan")
        out["sup_inv_HF"] = float(np.max(inv)) if len(inv) else float("inf")
        out["min_lambda1"] = float(np.min(cd.lambda1))
    elif isinstance(surface, LinkCurve):
        _, _, kappa = surface.frame()
        values = surface.polar_angles()
        out["area"] = surface.length()
        out["min_H"] = float(np.min(kappa))
        out["max_H"] = float(np.max(kappa))
        out["max_theta"] = float(np.max(values))
        with np.errstate(divide="ignore"):
            out["sup_inv_HF"] = float(np.max(1.0 / kappa))
        out["min_lambda1"] = float(np.min(kappa))
    else:
        values = surface.u
        out["area"] = float("nan")
        out["min_H"] = float("nan")
        out["max_H"] = float("nan")
        out["max_theta"] = float("nan")
        out["sup_inv_HF"] = float("nan")
        out["min_lambda1"] = float("nan")
    out["profile_linf"] = float(np.max(np.abs(values)))
    out["profile_l2"] = float(np.sqrt(np.mean(values ** 2)))
    if previous is not None:
        prev = _values(previous)
        out["update_linf"] = float(np.max(np.abs(values - prev))) if prev.shape == values.shape else float("nan")
    else:
        out["update_linf"] = 0.0
    return out


def _values(surface: FlowSurface) -> np.ndarray:
    if isinstance(surface, RadialSurface):
        return surface.rho
    if isinstance(surface, GraphSurface):
        return surface.u
    if isinstance(surface, LinkCurve):
        return surface.polar_angles()
    return surface.u


CSV_COLUMNS = ["t", "area", "min_H", "max_H", "max_theta", "sup_inv_HF", "min_lambda1",
               "profile_linf", "profile_l2", "update_linf"]


# ---------------------------------------------------------------------------
# driver


@dataclass
class FlowProblem:
    """Everything ``run`` needs: initial surface, controls and horizon."""

    initial: FlowSurface
    control: StepControl = field(default_factory=StepControl)
    t_end: float = 1.0
    record_cadence: int = 1
    cone: Optional[ConeLaw] = None
    boundary: Optional[Callable[[float], Tuple[float, float]]] = None
    max_steps: int = 1_000_000
    name: str = ""
    # steps are shortened to land on these times, which are always recorded
    record_times: Tuple[float, ...] = ()


def _stepper(problem: FlowProblem) -> Callable[[FlowState, float], FlowState]:
    s, c = problem.initial, problem.control
    if isinstance(s, RadialSurface):
        return lambda st, dt: step_star(st, c, dt)
    if isinstance(s, GraphSurface):
        if problem.cone is None:
            raise ValueError("graph flows need the evolving cone of the initial data")
        return lambda st, dt: step_graph(st, c, dt, problem.cone)
    if isinstance(s, LinkCurve):
        return lambda st, dt: step_link(st, c, dt)
    if isinstance(s, UltrafastProfile):
        if problem.boundary is None:
            raise ValueError("ultra-fast flows need boundary data")
        return lambda st, dt: step_ultrafast(st, c, dt, problem.boundary)
    raise TypeError(f"no stepper for {type(s).__name__}")


def _curvature_values(surface: FlowSurface) -> np.ndarray:
    if isinstance(surface, RadialSurface):
        return _star_parts(surface, surface.rho)[0]
    if isinstance(surface, GraphSurface):
        return _graph_parts(surface, surface.u, surface.asymptotic_slope)[0]
    if isinstance(surface, LinkCurve):
        return surface.frame()[2]
    return surface.u


def _relative_update(new: FlowState, old: FlowState) -> float:
    """Largest relative change of the curvature (of u for ultra-fast profiles)."""
    a, b = _curvature_values(new.surface), _curvature_values(old.surface)
    if a.shape != b.shape:
        return 0.0
    floor = 0.1 * max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def run(problem: FlowProblem) -> Trajectory:
    """Integrate from t = 0 to ``t_end`` or to the first terminal event."""
    control = problem.control
    if problem.t_end < 0:
        raise ValueError("t_end must be non-negative")
    step = _stepper(problem)
    right = None
    if isinstance(problem.initial, GraphSurface):
        g0 = problem.initial
        a0 = problem.cone.slope(0.0)
        right = None if outflow(a0) else far_field_slope(g0.u, g0.radial_grid, a0)
    state = FlowState(problem.initial, 0.0, 0, diagnostics(problem.initial, None, right))
    states = [state]
    rows = [dict(t=0.0, **state.diagnostics)]
    traj = Trajectory(states, rows, meta={"name": problem.name})
    dt_nominal = control.dt_init
    # after a rejection the accepted size becomes a ceiling that relaxes slowly
    ceiling = math.inf
    t_end = problem.t_end
    marks = sorted(x for x in problem.record_times if 0 < x < t_end)
    while state.t < t_end - 1e-14 * max(1.0, t_end):
        if state.step_index >= problem.max_steps:
            traj.event = ("step-limit", state.t, "maximum number of steps reached")
            break
        dt = min(dt_nominal, control.dt_max, ceiling)
        if control.ramp_time > 0 and state.t < control.ramp_time:
            dt = min(dt, max(control.dt_init, control.dt_max * math.sqrt(state.t / control.ramp_time)))
        stop = min([x for x in marks if x > state.t + 1e-14 * max(1.0, t_end)] + [t_end])
        remaining = stop - state.t
        if dt >= remaining * (1 - 1e-9) or remaining - dt < 1e-3 * dt:
            dt = remaining
        trial = dt
        try:
            while True:
                try:
                    new = step(state, trial)
                    break
                except NewtonFailure as exc:
                    trial *= 0.5
                    logger.debug("step rejected at t=%g: %s; dt -> %g", state.t, exc, trial)
                    if trial < 1e-12 * control.dt_init:
                        raise FlowSignal("step-failure", state.t, f"time step underflow ({exc})")
        except FlowSignal as sig:
            traj.event = (sig.kind, sig.t, sig.message)
            break
        if trial < dt:
            ceiling = trial
        elif math.isfinite(ceiling):
            ceiling *= 1.25
            if ceiling >= control.dt_max:
                ceiling = math.inf
        if control.adapt_rule == "cfl":
            rel = _relative_update(new, state)
            grow = 2.0 if rel == 0 else min(2.0, max(0.5, control.target_update / rel))
            dt_nominal = min(control.dt_max, trial * grow)
        else:
            dt_nominal = control.dt_init if trial >= dt else min(control.dt_init, 2 * trial)
        state = new
        rows.append(dict(t=state.t, **state.diagnostics))
        hit = any(abs(state.t - x) <= 1e-12 * max(1.0, t_end) for x in marks)
        if hit or state.step_index % problem.record_cadence == 0 or state.t >= t_end - 1e-14 * max(1.0, t_end):
            states.append(state)
    if states[-1] is not state:
        states.append(state)
    if traj.event is None:
        traj.event = ("completed", state.t, "")
    return traj
