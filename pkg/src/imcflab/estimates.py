"""Verification instruments: evolution-identity residuals and measured bounds.

Every instrument consumes finished trajectories and returns a report from
``imcflab.reports``.  Identity residuals apply the heat operator
``box q = d_t q - H^{-2} Delta q`` along the normal motion: the solver's
nodes move radially (star surfaces) or vertically (graphs), so the nodal
time derivative is corrected by the tangential node velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import barriers
from .flowengine import LinkCurve, Trajectory
from .geomcore import (
    GraphSurface,
    RadialSurface,
    arclength_derivative,
    curvature,
    laplace_beltrami,
    support_angle,
    unit_tangent,
)
from .reports import BoundReport, ResidualReport, residual_report

LOCAL_H_CHAIN = 4.0 + 2.0 * math.sqrt(5.0)
IDENTITIES = ("posnorm2", "omega_nu", "omega_pos", "inv_H", "support", "power_rule", "theta")


class HypothesisViolated(ValueError):
    pass


# ---------------------------------------------------------------------------
# evolution identities


def _time_weights(t0: float, t1: float, t2: float):
    """Second-order first-derivative weights on three possibly uneven times."""
    a, b = t1 - t0, t2 - t1
    return -b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b))


def _meridian_omega(surface, omega) -> np.ndarray:
    n = surface.ambient_n
    w = np.zeros(n + 1) if omega is None else np.asarray(omega, dtype=float)
    if omega is None:
        w[-1] = 1.0
    if n == 1:
        return w
    if np.any(w[:-1] != 0):
        raise ValueError("for axisymmetric surfaces omega must be parallel to the axis")
    return np.array([0.0, w[-1]])


def _origin(surface, x0) -> np.ndarray:
    n = surface.ambient_n
    p = np.zeros(n + 1) if x0 is None else np.asarray(x0, dtype=float)
    if n == 1:
        return p
    if np.any(p[:-1] != 0):
        raise ValueError("x0 must lie on the symmetry axis")
    return np.array([0.0, p[-1]])


def _identity_terms(identity_id: str, surface, cd, omega, x0, beta: float):
    """Nodal q, right-hand side and a mask of nodes where the identity is defined."""
    n = surface.ambient_n
    H = cd.H
    a2 = cd.normA2 / H ** 2
    rel = cd.position - x0[None, :]
    nu = cd.nu
    ok = np.ones(len(H), dtype=bool)
    if identity_id == "posnorm2":
        q = np.einsum("ij,ij->i", rel, rel)
        rhs = -2 * n / H ** 2 + 4 * np.einsum("ij,ij->i", rel, nu) / H
    elif identity_id == "omega_nu":
        q = nu @ omega
        rhs = a2 * q
    elif identity_id == "omega_pos":
        q = rel @ omega
        rhs = 2 * (nu @ omega) / H
    elif identity_id == "inv_H":
        q = 1.0 / H
        rhs = a2 * q
    elif identity_id == "support":
        q = np.einsum("ij,ij->i", rel, nu)
        rhs = a2 * q
    elif identity_id == "power_rule":
        f = nu @ omega
        q = np.abs(f) ** beta
        qs = arclength_derivative(surface, q, cd)
        ok = np.abs(f) > 1e-6 * max(1e-300, float(np.max(np.abs(f))))
        with np.errstate(divide="ignore", invalid="ignore"):
            rhs = beta * a2 * q - (beta - 1) / beta * qs ** 2 / (H ** 2 * q)
    elif identity_id == "theta":
        s, z = rel[:, 0], rel[:, 1]
        r = np.hypot(s, z)
        q = np.arctan2(s, z)
        rs = arclength_derivative(surface, r, cd)
        ts = arclength_derivative(surface, q, cd)
        ok = (q > 1e-9) & (q < math.pi - 1e-9) & (r > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            tan_t = np.tan(q)
            grad_bar = (nu[:, 0] * z - nu[:, 1] * s) / r ** 2
            rhs = (-(n - rs ** 2) / (H ** 2 * r ** 2 * tan_t) + ts ** 2 / (H ** 2 * tan_t)
                   + 2 * rs * ts / (H ** 2 * r) + 2 * grad_bar / H)
    else:
        raise ValueError(f"unknown identity {identity_id!r}; expected one of {IDENTITIES}")
    return q, rhs, ok


def _grid_spacing(surface) -> float:
    if isinstance(surface, RadialSurface):
        return surface.grid.spacing
    return surface.radial_grid.spacing


def _default_masks(surface, identity_id: str):
    """Axis distance and edge radius masked for a study whose coarsest level is ``surface``.

    The layers are fixed physical regions so that every refinement level
    compares the same set of points: 2 cells next to the axis for theta, the
    innermost 3 nodes at a graph vertex and the outermost 3 nodes next to the
    truncation radius.
    """
    s = np.abs(curvature(surface).position[:, 0]) * (1 + 1e-9)
    if isinstance(surface, GraphSurface):
        return float(s[2]), float(surface.r[-3]) * (1 - 1e-9)
    if identity_id == "theta" and surface.ambient_n >= 2:
        return float(max(s[2], s[-3])), math.inf
    if identity_id == "theta":
        # planar curves: the axis is the line through x0 along omega
        return float(np.sort(s)[2]), math.inf
    return 0.0, math.inf


def _parameter(surface) -> np.ndarray:
    if isinstance(surface, RadialSurface):
        return surface.grid.nodes
    return surface.radial_grid.parameter


def common_nodes(coarse, fine) -> Optional[np.ndarray]:
    """Mask of the fine-level nodes that are also coarse-level nodes, or None."""
    pc, pf = _parameter(coarse), _parameter(fine)
    scale = max(1.0, float(np.max(np.abs(pc))))
    idx = np.searchsorted(pf, pc)
    idx = np.clip(idx, 0, len(pf) - 1)
    near = [i if abs(pf[i] - x) <= 1e-9 * scale else i - 1 for i, x in zip(idx, pc)]
    if any(j < 0 or abs(pf[j] - x) > 1e-9 * scale for j, x in zip(near, pc)):
        return None
    mask = np.zeros(len(pf), dtype=bool)
    mask[near] = True
    return mask


def identity_residual(traj: Trajectory, identity_id: str, omega=None, x0=None, beta: float = 2.0,
                      window=(0.25, 0.75), axis_distance: float = 0.0,
                      edge_radius: float = math.inf, node_mask: Optional[np.ndarray] = None) -> float:
    """Max residual of one identity over the interior nodes of mid-trajectory states.

    Nodes within ``axis_distance`` of the symmetry axis and graph nodes at
    radius ``edge_radius`` or beyond are skipped; ``node_mask`` restricts
    the nodes further.
    """
    states = traj.states
    if len(states) < 3:
        raise ValueError("identity residuals need at least 3 recorded states")
    t_end = states[-1].t
    worst = 0.0
    used = 0
    for k in range(1, len(states) - 1):
        if not window[0] * t_end <= states[k].t <= window[1] * t_end:
            continue
        prev, cur, nxt = states[k - 1], states[k], states[k + 1]
        sk = cur.surface
        if not isinstance(sk, (RadialSurface, GraphSurface)):
            raise TypeError("identity residuals need hypersurface trajectories")
        w0, w1, w2 = _time_weights(prev.t, cur.t, nxt.t)
        om = _meridian_omega(sk, omega)
        org = _origin(sk, x0)
        cds = [curvature(s.surface) for s in (prev, cur, nxt)]
        qs = [_identity_terms(identity_id, s.surface, c, om, org, beta) for s, c in zip((prev, cur, nxt), cds)]
        q, rhs, ok = qs[1]
        cd = cds[1]
        dq = w0 * qs[0][0] + w1 * q + w2 * qs[2][0]
        vel = w0 * cds[0].position + w1 * cd.position + w2 * cds[2].position
        tangential = np.einsum("ij,ij->i", vel, unit_tangent(sk, cd))
        box = dq - tangential * arclength_derivative(sk, q, cd) - laplace_beltrami(sk, q, cd) / cd.H ** 2
        res = np.abs(box - rhs)
        dist = np.abs(cd.position[:, 0])
        keep = ok & np.isfinite(res) & (dist > axis_distance)
        if node_mask is not None:
            keep &= node_mask
        if isinstance(sk, GraphSurface):
            keep &= sk.r < edge_radius
        if np.any(keep):
            worst = max(worst, float(np.max(res[keep])))
            used += 1
    if used == 0:
        raise ValueError("no recorded states fall inside the residual window")
    return worst


def evolution_residual(trajectories: Sequence[Trajectory], identity_id: str, omega=None, x0=None,
                       beta: float = 2.0, min_order: float = 1.5, **kwargs) -> ResidualReport:
    """Residual study over refinement levels (coarsest first).

    Each trajectory must store every step; the levels should refine space
    and time together.  Masked axis and boundary nodes are noted.
    """
    if len(trajectories) < 3:
        raise ValueError("residual studies need at least 3 refinement levels")
    notes = []
    axis_distance, edge_radius = _default_masks(trajectories[0].states[0].surface, identity_id)
    kwargs.setdefault("axis_distance", axis_distance)
    kwargs.setdefault("edge_radius", edge_radius)
    if kwargs["axis_distance"] > 0:
        notes.append(f"nodes within {kwargs['axis_distance']:.4g} of the symmetry axis masked")
    if math.isfinite(kwargs["edge_radius"]):
        notes.append(f"nodes at radius >= {kwargs['edge_radius']:.4g} masked")
    # pointwise errors are compared on the coarsest grid's nodes when the
    # levels are nested, so that all levels sample the same points
    coarse = trajectories[0].states[0].surface
    masks = [common_nodes(coarse, tr.states[0].surface) for tr in trajectories]
    if all(m is not None for m in masks):
        notes.append("residuals sampled at the coarsest grid's nodes")
    else:
        masks = [None] * len(trajectories)
    res = [identity_residual(tr, identity_id, omega, x0, beta, node_mask=m, **kwargs)
           for tr, m in zip(trajectories, masks)]
    hs = [_grid_spacing(tr.states[0].surface) for tr in trajectories]
    return residual_report(identity_id, res, hs, min_order=min_order, notes=notes)


# ---------------------------------------------------------------------------
# bounds


def area_growth(traj: Trajectory, tol: float = 1e-3) -> BoundReport:
    states = traj.states
    if isinstance(states[0].surface, GraphSurface):
        raise ValueError("area growth needs a compact trajectory")
    a0 = traj.rows[0]["area"]
    series = [(row["t"], row["area"] / a0, math.exp(row["t"])) for row in traj.rows]
    dev = max(abs(math.log(m) - t) for t, m, _ in series)
    rep = BoundReport("area_growth", series, {"initial_area": a0, "max_log_deviation": dev, "tol": tol})
    rep.passed = bool(dev <= tol)
    return rep


@dataclass
class PogorelovQuantities:
    theta: np.ndarray
    c: float
    w: np.ndarray
    varphi_HI: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    eps_HI: Optional[float] = None
    gamma_HI: Optional[float] = None


def cone_constant(theta1: float) -> float:
    """c = (pi - theta1) / (pi - 2 theta1)."""
    if not 0 < theta1 < math.pi / 2:
        raise ValueError("theta1 must lie in (0, pi/2)")
    return (math.pi - theta1) / (math.pi - 2 * theta1)


def _polar(surface, cd):
    pos = cd.position
    if surface.ambient_n == 1:
        return np.arccos(np.clip(pos[:, 1] / np.hypot(pos[:, 0], pos[:, 1]), -1, 1)), np.hypot(pos[:, 0], pos[:, 1])
    r = np.hypot(pos[:, 0], pos[:, 1])
    with np.errstate(invalid="ignore"):
        theta = np.arctan2(np.abs(pos[:, 0]), pos[:, 1])
    return theta, r


def speed_quantities(surface, t: float, theta1: float) -> PogorelovQuantities:
    """w = sec(c theta) t / (H r) at every node away from the origin."""
    cd = curvature(surface)
    theta, r = _polar(surface, cd)
    c = cone_constant(theta1)
    keep = r > 0
    ctheta = c * theta[keep]
    if np.any(ctheta >= math.pi / 2):
        raise HypothesisViolated("c theta reached pi/2; the cone condition fails")
    w = np.full(len(r), np.nan)
    w[keep] = t / (np.cos(ctheta) * cd.H[keep] * r[keep])
    return PogorelovQuantities(theta=theta, c=c, w=w)


def _fit_window(series, t_min):
    picked = [(t, m) for t, m in series if t >= t_min]
    if not picked:
        raise ValueError("no recorded time inside the fit window")
    return picked


def speed_bound(traj: Trajectory, theta1: float, t_min: float = 1e-3, t_max: Optional[float] = None,
                axis=None) -> BoundReport:
    """Fitted envelope C (1 + t^{-1/2}) for sup (H |F|)^{-1}."""
    first = traj.states[0].surface
    n = first.ambient_n
    ax = np.zeros(n + 1)
    ax[-1] = 1.0
    if axis is not None:
        ax = np.asarray(axis, dtype=float)
    limit = math.pi / 2 - theta1
    for st in traj.states:
        ang = support_angle(st.surface, ax)
        if ang > limit + 1e-12:
            raise HypothesisViolated(f"support angle {ang:.6f} exceeds pi/2 - theta1 = {limit:.6f} at t={st.t:.6g}")
    t_max = traj.states[-1].t if t_max is None else t_max
    rows = [r for r in traj.rows if r["t"] <= t_max + 1e-14]
    inside = _fit_window([(r["t"], r["sup_inv_HF"]) for r in rows], t_min)
    C = max(m / (1 + t ** -0.5) for t, m in inside)
    series = [(t, m, C * (1 + t ** -0.5)) for t, m in inside]
    max_w = []
    for st in traj.states:
        if st.t <= 0 or st.t > t_max + 1e-14:
            continue
        pq = speed_quantities(st.surface, st.t, theta1)
        max_w.append((st.t, float(np.nanmax(pq.w))))
    finite_w = all(math.isfinite(v) for _, v in max_w)
    tail = [v for _, v in max_w[len(max_w) // 2:]]
    trend = "non-increasing" if all(b <= a * (1 + 1e-9) for a, b in zip(tail, tail[1:])) else "mixed"
    consts = {"theta1": theta1, "c": cone_constant(theta1), "C_fit": C, "fit_window": [t_min, t_max],
              "max_w": max(v for _, v in max_w) if max_w else float("nan"), "w_tail_trend": trend}
    rep = BoundReport("speed_bound", series, consts)
    rep.passed = bool(math.isfinite(C) and finite_w)
    rep.notes.append(f"max_w over recorded states: {consts['max_w']:.6g} ({trend} in the second half)")
    return rep


def varphi(s, R1: float):
    """s / (2/R1 - s); equals 1 at s = 1/R1."""
    s = np.asarray(s, dtype=float)
    if np.any(s * R1 <= 0) or np.any(s * R1 > 1 + 1e-12):
        raise ValueError("varphi is used for s R1 in (0, 1]")
    return s / (2.0 / R1 - s)


def hi_quantities(surface, R1: float, R2: float, T: float) -> PogorelovQuantities:
    cd = curvature(surface)
    n = surface.ambient_n
    theta, r = _polar(surface, cd)
    top = R2 * math.exp(T / n)
    eps = R1 / (2 * top)
    gamma = eps / (4 * n * top ** 2)
    w_hi = 1.0 / cd.F_dot_nu
    phi = varphi(np.minimum(w_hi, 1.0 / R1), R1)
    Q = phi ** (1 - eps) * np.exp(gamma * cd.position_norm ** 2) / cd.H
    return PogorelovQuantities(theta=theta, c=float("nan"), w=w_hi, varphi_HI=phi, Q=Q,
                               eps_HI=eps, gamma_HI=gamma)


def roundness(surface: RadialSurface) -> float:
    return float(np.max(surface.rho) / np.min(surface.rho))


def hi_bound(traj: Trajectory, R1: Optional[float] = None, R2: Optional[float] = None,
             t_min: float = 1e-3, rtol: float = 1e-4) -> BoundReport:
    """Star-shaped pinching check and fitted 1/H envelope."""
    s0 = traj.states[0].surface
    if not isinstance(s0, RadialSurface):
        raise ValueError("the HI estimate concerns compact star-shaped trajectories")
    n = s0.ambient_n
    cd0 = curvature(s0)
    support0 = cd0.F_dot_nu
    R1 = float(np.min(support0)) if R1 is None else R1
    R2 = float(np.max(support0)) if R2 is None else R2
    if not (R1 > 0 and np.min(support0) >= R1 * (1 - rtol) and np.max(support0) <= R2 * (1 + rtol)):
        raise HypothesisViolated("initial data do not satisfy R1 <= <F, nu> <= R2")
    T = traj.states[-1].t
    pinch_ok = True
    violations = []
    sup_inv_H = []
    tq = []
    rounds = []
    for st in traj.states:
        cd = curvature(st.surface)
        lo, hi = R1 * math.exp(st.t / n), R2 * math.exp(st.t / n)
        sup_F = float(np.max(cd.position_norm))
        min_sup = float(np.min(cd.F_dot_nu))
        if min_sup <= 0:
            pinch_ok = False
            violations.append(f"star-shapedness lost at t={st.t:.6g}")
            break
        if min_sup < lo * (1 - rtol) or sup_F > hi * (1 + rtol) or np.any(cd.F_dot_nu > cd.position_norm * (1 + rtol)):
            pinch_ok = False
            violations.append(f"pinching fails at t={st.t:.6g}: min<F,nu>={min_sup:.8g}, max|F|={sup_F:.8g}")
        sup_inv_H.append((st.t, float(np.max(1.0 / cd.H))))
        rounds.append(roundness(st.surface))
        if st.t > 0:
            q = hi_quantities(st.surface, R1 * math.exp(st.t / n), R2, T)
            tq.append((st.t, st.t * float(np.max(q.Q))))
    shape = lambda t: (R2 / R1) * (1 + t ** -0.5) * R2 * math.exp(t / n)
    inside = _fit_window(sup_inv_H, t_min)
    C = max(m / shape(t) for t, m in inside)
    series = [(t, m, C * shape(t)) for t, m in inside]
    decreasing = all(b <= a * (1 + 1e-9) for a, b in zip(rounds, rounds[1:]))
    consts = {"R1": R1, "R2": R2, "C_fit": C, "pinching": pinch_ok, "roundness_initial": rounds[0],
              "roundness_final": rounds[-1], "roundness_decreasing": decreasing,
              "max_tQ": max((v for _, v in tq), default=float("nan")), "varphi_at_inverse_R1": float(varphi(1 / R1, R1))}
    rep = BoundReport("hi_bound", series, consts, notes=violations)
    rep.passed = bool(pinch_ok and math.isfinite(C))
    return rep


def _ball_sup_H(surface, center, radius: float, with_count: bool = False):
    cd = curvature(surface)
    c = np.asarray(center, dtype=float)
    pos = cd.position
    if surface.ambient_n == 1:
        d = np.hypot(pos[:, 0] - c[0], pos[:, 1] - c[1])
    else:
        if np.any(c[:-1] != 0):
            raise ValueError("balls must be centred on the symmetry axis")
        d = np.hypot(pos[:, 0], pos[:, 1] - c[-1])
    inside = d < radius
    sup = float(np.max(cd.H[inside])) if np.any(inside) else 0.0
    return (sup, int(np.sum(inside))) if with_count else sup


def local_H_bound(traj: Trajectory, center, r: float) -> BoundReport:
    """sup_{B_{r/2}} H against (16/9) max(sup_{M_0 cap B_r} H, (4 + 2 sqrt 5) n / r)."""
    if r <= 0:
        raise ValueError("the ball radius must be positive")
    s0 = traj.states[0].surface
    n = s0.ambient_n
    # emptiness is decided by the nodes, not by H: flat pieces have H = 0
    A, met = _ball_sup_H(s0, center, r, with_count=True)
    envelope = (16.0 / 9.0) * max(A, LOCAL_H_CHAIN * n / r)
    series = [(st.t, _ball_sup_H(st.surface, center, r / 2), envelope) for st in traj.states]
    base = max(A, 1.0 / r)
    C_fit = max(m for _, m, _ in series) / base
    consts = {"r": r, "center": list(np.asarray(center, dtype=float)), "initial_sup_H": A,
              "C_chain": (16.0 / 9.0) * LOCAL_H_CHAIN * n, "C_fit": C_fit,
              "empty_initial_intersection": met == 0}
    rep = BoundReport("local_H_bound", series, consts)
    rep.passed = all(m <= e for _, m, e in series)
    if met == 0:
        rep.notes.append("M_0 does not meet B_r; the envelope reduces to the r^{-1} term")
    return rep


def convexity_report(traj: Trajectory, mode: str = "strict", grid_tol: float = 1e-6) -> BoundReport:
    """min lambda_1 and min H over time.

    ``mode="strict"``: min H > 0 and min lambda_1 > 0 for every t > 0 (data
    inside a strictly supporting round cone).  ``mode="splitting"``: min
    lambda_1 stays within ``grid_tol`` of zero.
    """
    if mode not in ("strict", "splitting"):
        raise ValueError("mode is 'strict' or 'splitting'")
    series = []
    ok = True
    for row in traj.rows:
        t, lam, H = row["t"], row["min_lambda1"], row["min_H"]
        series.append((t, lam, H))
        if t <= 0:
            continue
        if H <= 0:
            ok = False
        if mode == "strict" and lam <= 0:
            ok = False
        if mode == "splitting" and abs(lam) > grid_tol:
            ok = False
    rep = BoundReport("convexity", series, {"mode": mode, "grid_tol": grid_tol},
                      notes=["series columns are (t, min lambda_1, min H)"])
    rep.passed = ok
    return rep


def _spacing(surface) -> float:
    if isinstance(surface, LinkCurve):
        return float(np.max(surface.edge_lengths()))
    pts = surface.meridian_points()
    return float(np.max(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def comparison_monotonicity(trajs: Sequence[Trajectory], factor: float = 10.0,
                            time_tol: float = 1e-9) -> BoundReport:
    """Containment of consecutive trajectories (inner first) at matched recorded times."""
    if len(trajs) < 2:
        raise ValueError("comparison needs at least two trajectories")
    series = []
    notes: List[str] = []
    ok = True
    skipped = []
    for i in range(len(trajs) - 1):
        inner, outer = trajs[i], trajs[i + 1]
        try:
            init = barriers.containment(inner.states[0].surface, outer.states[0].surface)
        except barriers.Incomparable as exc:
            skipped.append(f"pair {i}: {exc}")
            continue
        if not init.passed:
            skipped.append(f"pair {i}: initial data are not nested (margin {init.margin:.3g})")
            continue
        times = {round(st.t / time_tol): st for st in outer.states}
        for st in inner.states:
            other = times.get(round(st.t / time_tol))
            if other is None:
                continue
            tol = factor * max(_spacing(st.surface), _spacing(other.surface))
            res = barriers.containment(st.surface, other.surface, tol=tol)
            series.append((st.t, res.margin, -tol))
            if not res.passed:
                ok = False
                notes.append(f"pair {i}: containment fails at t={st.t:.6g} (margin {res.margin:.3g})")
    notes.extend(f"skipped {s}" for s in skipped)
    rep = BoundReport("comparison", series, {"factor": factor, "pairs": len(trajs) - 1,
                                             "skipped": len(skipped)}, notes=notes)
    rep.passed = bool(ok and series)
    return rep
