"""Scenario-driven batch runner.

Scenario files are a small key/value format with ``[table]`` headers::

    name = "sphere"
    n = 2
    t_end = 1.0

    [initial]
    kind = "sphere"
    r0 = 1.0

    [grid]
    node_count = 512

    [control]
    dt_init = 1e-3
    dt_max = 1e-3

    [verify.explicit_solution]
    tol = 1e-4

Values are JSON literals (numbers, strings, booleans, arrays) or arithmetic
in ``pi`` and ``e``.  Profile expressions are strings in ``phi`` (radial)
or ``r`` (graph).
"""

from __future__ import annotations

import argparse
import ast
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import barriers, convexkit, estimates
from .flowengine import (
    CSV_COLUMNS,
    ConeLaw,
    FlowProblem,
    FlowSignal,
    LinkCurve,
    StepControl,
    Trajectory,
    UltrafastProfile,
    run,
    vt_profile,
    vt_plugin_residual,
)
from .geomcore import GeometryError, GraphSurface, RadialGrid, RadialSurface

EXIT_OK, EXIT_FAIL, EXIT_HYPOTHESIS = 0, 1, 2


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# expressions

_FUNCS: Dict[str, Callable] = {
    "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "abs": np.abs, "arctan": np.arctan, "arcsin": np.arcsin,
    "maximum": np.maximum, "minimum": np.minimum, "where": np.where,
}
_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}
_CMPS = {ast.Gt: np.greater, ast.GtE: np.greater_equal, ast.Lt: np.less, ast.LtE: np.less_equal}


def compile_expression(text: str, variables: Tuple[str, ...] = ()) -> Callable:
    """Whitelisted arithmetic over numpy; raises ScenarioError on anything else."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(f"malformed expression {text!r}") from exc

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return
        if isinstance(node, ast.Name):
            if node.id not in _CONSTS and node.id not in variables:
                raise ScenarioError(f"unknown name {node.id!r} in expression {text!r}")
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPS:
            check(node.left)
            check(node.comparators[0])
            return
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            for a in node.args:
                check(a)
            return
        raise ScenarioError(f"unsupported construct in expression {text!r}")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Compare):
            return _CMPS[type(node.ops[0])](ev(node.left, env), ev(node.comparators[0], env))
        return _FUNCS[node.func.id](*[ev(a, env) for a in node.args])

    def func(*args):
        with np.errstate(divide="ignore", invalid="ignore"):
            return ev(tree, dict(zip(variables, args)))

    return func


def _parse_value(raw: str, line: int):
    raw = raw.strip()
    if not raw:
        raise ScenarioError("missing value", line)
    try:
        value = json.loads(raw)
    except ValueError:
        try:
            value = compile_expression(raw)()
        except ScenarioError as exc:
            raise ScenarioError(f"malformed value {raw!r} ({exc})", line) from None
        value = float(value)
    if isinstance(value, dict) or value is None:
        raise ScenarioError(f"malformed value {raw!r}", line)
    return value


def _strip_comment(text: str) -> str:
    out, quoted = [], False
    for i, ch in enumerate(text):
        if ch == '"' and (i == 0 or text[i - 1] != "\\"):
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def parse_text(text: str) -> Dict[str, Tuple[Any, int]]:
    """Flat mapping ``dotted.key -> (value, line)``; table headers prefix keys."""
    out: Dict[str, Tuple[Any, int]] = {}
    prefix = ""
    tables = set()
    for number, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line)
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]") or body.startswith("[["):
                raise ScenarioError(f"malformed table header {body!r}", number)
            name = body[1:-1].strip()
            if not name or any(not part.replace("_", "").isalnum() for part in name.split(".")):
                raise ScenarioError(f"malformed table name {name!r}", number)
            if name in tables:
                raise ScenarioError(f"duplicate table [{name}]", number)
            tables.add(name)
            out[name + "."] = (None, number)
            prefix = name + "."
            continue
        if "=" not in body:
            raise ScenarioError(f"expected 'key = value', got {body!r}", number)
        key, raw = body.split("=", 1)
        key = key.strip()
        if not key.replace("_", "").isalnum():
            raise ScenarioError(f"malformed key {key!r}", number)
        full = prefix + key
        if full in out:
            raise ScenarioError(f"duplicate key {full!r}", number)
        out[full] = (_parse_value(raw, number), number)
    return out


# ---------------------------------------------------------------------------
# schema

INITIAL_KINDS: Dict[str, Dict[str, tuple]] = {
    "sphere": {"r0": ("pos",)},
    "ellipse": {"a": ("pos",), "b": ("pos",)},
    "radial": {"rho": ("expr", "phi")},
    "graph": {"u": ("expr", "r"), "asymptotic_slope": ("nonneg",)},
    "round_cone": {"theta0": ("angle",), "z0": ("real",)},
    "geodesic_ball_link": {"theta0": ("angle",)},
    "pancake": {"R": ("pos",), "eps": ("pos",), "delta": ("pos",)},
    "ultrafast_vt": {"T": ("pos",)},
    "link_ball": {"radius": ("halfpi",)},
    "link_lune": {"angle": ("lune",)},
}
REQUIRED_INITIAL = {"sphere": ("r0",), "ellipse": ("a", "b"), "radial": ("rho",), "graph": ("u",),
                    "round_cone": ("theta0",), "geodesic_ball_link": ("theta0",),
                    "pancake": ("R", "eps", "delta"), "ultrafast_vt": ("T",), "link_ball": ("radius",),
                    "link_lune": ("angle",)}
GRID_KEYS = {"node_count": ("count",), "r_max": ("pos",), "r_min": ("nonneg",), "stretch": ("nonneg",)}
CONTROL_KEYS = {f.name: f.type for f in fields(StepControl)}
INSTRUMENTS: Dict[str, Dict[str, tuple]] = {
    "explicit_solution": {"tol": ("pos",)},
    "area_growth": {"tol": ("pos",)},
    "speed_bound": {"theta1": ("angle",), "t_min": ("pos",), "t_max_fraction": ("unit",)},
    "hi_bound": {"R1": ("pos",), "R2": ("pos",), "t_min": ("pos",)},
    "local_H_bound": {"center": ("point",), "r": ("pos",)},
    "convexity": {"mode": ("choice", "strict", "splitting")},
    "maximal_time": {"expected": ("nonneg",), "tol": ("pos",)},
    "residual_study": {"identities": ("names",), "levels": ("count",), "min_order": ("pos",)},
    "maximal_time_event": {"tol": ("pos",)},
    "extinction": {"tol": ("pos",)},
    "vt_plugin": {"levels": ("count",), "min_order": ("pos",)},
}
TOP_KEYS = {"name": ("text",), "n": ("count",), "t_end": ("nonneg",), "record_cadence": ("count",),
            "output_dir": ("text",), "max_steps": ("count",)}


def _check(kind: tuple, value, key: str, line: int):
    tag = kind[0]

    def num():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{key} must be a number", line)
        if math.isnan(value):
            raise ScenarioError(f"{key} must not be nan", line)
        return float(value)

    if tag == "text":
        if not isinstance(value, str):
            raise ScenarioError(f"{key} must be a string", line)
        return value
    if tag == "expr":
        if not isinstance(value, str):
            raise ScenarioError(f"{key} must be an expression string", line)
        try:
            compile_expression(value, (kind[1],))
        except ScenarioError as exc:
            raise ScenarioError(str(exc), line) from None
        return value
    if tag == "choice":
        if value not in kind[1:]:
            raise ScenarioError(f"{key} must be one of {list(kind[1:])}", line)
        return value
    if tag == "names":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ScenarioError(f"{key} must be a list of names", line)
        bad = [v for v in value if v not in estimates.IDENTITIES]
        if bad:
            raise ScenarioError(f"{key}: unknown identity {bad[0]!r}", line)
        return list(value)
    if tag == "point":
        if not isinstance(value, list) or not value or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ScenarioError(f"{key} must be a list of numbers", line)
        return [float(v) for v in value]
    if tag == "count":
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ScenarioError(f"{key} must be a positive integer, got {value!r}", line)
        return value
    x = num()
    ok = {"pos": x > 0, "nonneg": x >= 0, "real": math.isfinite(x), "angle": 0 < x < math.pi / 2,
          "halfpi": 0 < x <= math.pi / 2, "lune": 0 < x <= math.pi, "unit": 0 < x <= 1}[tag]
    if not ok:
        ranges = {"pos": "> 0", "nonneg": ">= 0", "real": "finite", "angle": "in (0, pi/2)",
                  "halfpi": "in (0, pi/2]", "lune": "in (0, pi]", "unit": "in (0, 1]"}
        raise ScenarioError(f"range violation: {key} = {x!r} must be {ranges[tag]}", line)
    return x


def _check_control(key: str, value, line: int):
    typ = CONTROL_KEYS[key]
    if typ in ("str", str):
        if not isinstance(value, str):
            raise ScenarioError(f"control.{key} must be a string", line)
        return value
    if typ in ("int", int):
        return _check(("count",), value, f"control.{key}", line)
    return _check(("nonneg",) if key == "ramp_time" else ("pos",), value, f"control.{key}", line)


@dataclass
class Verification:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    n: int
    initial: Dict[str, Any]
    t_end: float = 0.0
    record_cadence: int = 1
    grid: Dict[str, Any] = field(default_factory=dict)
    control: Dict[str, Any] = field(default_factory=dict)
    verifications: List[Verification] = field(default_factory=list)
    output_dir: str = ""
    max_steps: int = 1_000_000

    def step_control(self) -> StepControl:
        return StepControl(**self.control)


def parse_scenario_text(text: str, strict: bool = True) -> Scenario:
    entries = parse_text(text)
    top: Dict[str, Any] = {}
    initial: Dict[str, Any] = {}
    grid: Dict[str, Any] = {}
    control: Dict[str, Any] = {}
    verifs: Dict[str, Verification] = {}
    order: List[str] = []
    lines: Dict[str, int] = {}
    for key, (value, line) in entries.items():
        lines[key] = line
        if key.endswith("."):
            table = key[:-1]
            if table.startswith("verify."):
                name = table[len("verify."):]
                if name not in INSTRUMENTS:
                    raise ScenarioError(f"unknown instrument {name!r} in [verify.{name}]", line)
                verifs[name] = Verification(name)
                order.append(name)
            elif table not in ("initial", "grid", "control"):
                raise ScenarioError(f"unknown table [{table}]", line)
            continue
        head, _, rest = key.rpartition(".")
        if not head:
            if key not in TOP_KEYS:
                if strict:
                    raise ScenarioError(f"unknown key {key!r}", line)
                continue
            top[key] = _check(TOP_KEYS[key], value, key, line)
        elif head == "initial":
            initial[rest] = (value, line)
        elif head == "grid":
            if rest not in GRID_KEYS:
                if strict:
                    raise ScenarioError(f"unknown key grid.{rest}", line)
                continue
            grid[rest] = _check(GRID_KEYS[rest], value, f"grid.{rest}", line)
            if rest == "node_count" and grid[rest] < 3:
                raise ScenarioError("range violation: grid.node_count must be >= 3", line)
        elif head == "control":
            if rest not in CONTROL_KEYS:
                if strict:
                    raise ScenarioError(f"unknown key control.{rest}", line)
                continue
            control[rest] = _check_control(rest, value, line)
        elif head.startswith("verify."):
            name = head[len("verify."):]
            schema = INSTRUMENTS[name]
            if rest not in schema:
                if strict:
                    raise ScenarioError(f"unknown parameter {rest!r} for instrument {name!r}", line)
                continue
            verifs[name].params[rest] = _check(schema[rest], value, f"verify.{name}.{rest}", line)
    for req in ("name", "n"):
        if req not in top:
            raise ScenarioError(f"missing required key {req!r}")
    if "kind" not in initial:
        raise ScenarioError("missing [initial] kind", lines.get("initial."))
    kind, kline = initial.pop("kind")
    if kind not in INITIAL_KINDS:
        raise ScenarioError(f"unknown initial kind {kind!r}", kline)
    init: Dict[str, Any] = {"kind": kind}
    for key, (value, line) in initial.items():
        if key not in INITIAL_KINDS[kind]:
            if strict:
                raise ScenarioError(f"unknown key initial.{key} for kind {kind!r}", line)
            continue
        init[key] = _check(INITIAL_KINDS[kind][key], value, f"initial.{key}", line)
    for req in REQUIRED_INITIAL[kind]:
        if req not in init:
            raise ScenarioError(f"initial kind {kind!r} needs {req!r}", kline)
    try:
        StepControl(**control)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid control: {exc}", lines.get("control.")) from None
    return Scenario(name=top["name"], n=top["n"], initial=init, t_end=top.get("t_end", 0.0),
                    record_cadence=top.get("record_cadence", 1), grid=grid, control=control,
                    verifications=[verifs[k] for k in order], output_dir=top.get("output_dir", ""),
                    max_steps=top.get("max_steps", 1_000_000))


def parse_scenario(path: str, strict: bool = True) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_text(fh.read(), strict)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return json.dumps(value)


def serialize(s: Scenario) -> str:
    out = [f"name = {_format(s.name)}", f"n = {s.n}", f"t_end = {_format(float(s.t_end))}",
           f"record_cadence = {s.record_cadence}", f"max_steps = {s.max_steps}"]
    if s.output_dir:
        out.append(f"output_dir = {_format(s.output_dir)}")
    out += ["", "[initial]"] + [f"{k} = {_format(v)}" for k, v in s.initial.items()]
    if s.grid:
        out += ["", "[grid]"] + [f"{k} = {_format(v)}" for k, v in s.grid.items()]
    if s.control:
        out += ["", "[control]"] + [f"{k} = {_format(v)}" for k, v in s.control.items()]
    for v in s.verifications:
        out += ["", f"[verify.{v.name}]"] + [f"{k} = {_format(x)}" for k, x in v.params.items()]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# execution


class ConstructionError(RuntimeError):
    pass


def _grid(s: Scenario, key: str, default):
    return s.grid.get(key, default)


def build_problem(s: Scenario, refine: int = 0) -> Optional[FlowProblem]:
    """Flow problem for the scenario; ``refine`` halves h (and dt) that many times."""
    ini = s.initial
    kind = ini["kind"]
    control = s.step_control()
    if refine:
        f = 2 ** refine
        control = StepControl(**dict(s.control, dt_init=control.dt_init / f,
                                     dt_max=max(control.dt_max / f, control.dt_init / f)))

    def count(default):
        base = _grid(s, "node_count", default)
        return (base - 1) * 2 ** refine + 1

    cone = None
    boundary = None
    if kind == "sphere":
        surf = RadialSurface.sphere(s.n, count(512), ini["r0"])
    elif kind == "ellipse":
        if s.n != 1:
            raise ScenarioError("ellipses are planar curves (n = 1)")
        surf = RadialSurface.ellipse(count(512), ini["a"], ini["b"])
    elif kind == "radial":
        f = compile_expression(ini["rho"], ("phi",))
        surf = RadialSurface.from_function(s.n, count(512), lambda p: np.broadcast_to(f(p), p.shape).astype(float))
    elif kind in ("graph", "round_cone"):
        if kind == "graph":
            f = compile_expression(ini["u"], ("r",))
            fun = lambda r: np.broadcast_to(f(r), r.shape).astype(float)
            slope = ini.get("asymptotic_slope", 0.0)
        else:
            slope = 1.0 / math.tan(ini["theta0"])
            z0 = ini.get("z0", 0.0)
            fun = lambda r: z0 + slope * r
        surf = GraphSurface.from_function(s.n, count(201), _grid(s, "r_max", 10.0), fun, slope,
                                          stretch=_grid(s, "stretch", 0.0))
        if slope > 0:
            cone = ConeLaw(math.atan2(1.0, slope), s.n)
        else:
            try:
                cone = ConeLaw(convexkit.tangent_cone_link(surf).radius, s.n)
            except convexkit.NoCone as exc:
                raise ConstructionError(str(exc)) from exc
    elif kind == "geodesic_ball_link":
        if s.n != 2:
            raise ScenarioError("link curves live on S^2 (n = 2)")
        surf = LinkCurve.geodesic_circle(ini["theta0"], count(256))
    elif kind == "pancake":
        try:
            surf = barriers.pancake_initial(ini["R"], ini["eps"], ini["delta"], s.n, count(4097))
        except barriers.ConstructionFailure as exc:
            raise ConstructionError(str(exc)) from exc
    elif kind == "ultrafast_vt":
        T = ini["T"]
        r_min, r_max = _grid(s, "r_min", 0.5), _grid(s, "r_max", 5.0)
        grid = RadialGrid(count(181), r_max, r_min)
        surf = UltrafastProfile(grid, vt_profile(grid.nodes, T, s.n, 0.0), s.n)
        lo, hi = np.array([r_min]), np.array([r_max])
        boundary = lambda t: (float(vt_profile(lo, T, s.n, t)[0]), float(vt_profile(hi, T, s.n, t)[0]))
    else:
        return None
    return FlowProblem(surf, control, s.t_end, s.record_cadence, cone, boundary, s.max_steps, s.name)


def _link_literal(s: Scenario):
    ini = s.initial
    north = np.array([0.0, 0.0, 1.0])
    if ini["kind"] == "link_ball":
        return convexkit.GeodesicBall(north, ini["radius"])
    if ini["kind"] == "link_lune":
        return convexkit.Lune(north, np.array([1.0, 0.0, 0.0]), ini["angle"])
    if ini["kind"] == "geodesic_ball_link":
        return convexkit.GeodesicBall(north, ini["theta0"])
    return None


def _instrument(v: Verification, s: Scenario, traj: Optional[Trajectory], refine_levels: Optional[int]):
    """Returns a JSON-able report dict with at least ``pass``."""
    p = v.params
    if v.name == "maximal_time":
        if s.initial["kind"] in ("graph", "round_cone"):
            link = convexkit.tangent_cone_link(traj.states[0].surface if traj else build_problem(s).initial)
        else:
            link = _link_literal(s)
        if link is None:
            raise ScenarioError("maximal_time needs link or cone data")
        T = convexkit.maximal_time(link)
        out = {"bound_id": "maximal_time", "T": T, "classification": convexkit.classify_degenerate(link),
               "perimeter": convexkit.perimeter(link)}
        ok = True
        if "expected" in p:
            ok = abs(T - p["expected"]) <= p.get("tol", 1e-4)
        out["pass"] = ok
        return out
    if traj is None:
        raise ScenarioError(f"instrument {v.name!r} needs a flow")
    if v.name == "explicit_solution":
        return _explicit_check(s, traj, p.get("tol", 1e-4))
    if v.name == "area_growth":
        return estimates.area_growth(traj, p.get("tol", 1e-3)).to_dict()
    if v.name == "speed_bound":
        t_max = None
        if "t_max_fraction" in p and traj.meta.get("cone") is not None:
            t_max = p["t_max_fraction"] * traj.meta["cone"].maximal_time
        return estimates.speed_bound(traj, p.get("theta1", math.pi / 4), p.get("t_min", 1e-3), t_max).to_dict()
    if v.name == "hi_bound":
        return estimates.hi_bound(traj, p.get("R1"), p.get("R2"), p.get("t_min", 1e-3)).to_dict()
    if v.name == "local_H_bound":
        center = p.get("center", [0.0] * (s.n + 1))
        return estimates.local_H_bound(traj, center, p.get("r", 1.0)).to_dict()
    if v.name == "convexity":
        return estimates.convexity_report(traj, p.get("mode", "strict")).to_dict()
    if v.name == "maximal_time_event":
        cone = traj.meta.get("cone")
        T = cone.maximal_time if cone is not None else barriers.GeodesicBallLink(s.initial["theta0"]).terminal_time
        ok = traj.event[0] == "maximal-time-reached" and abs(traj.event[1] - T) <= p.get("tol", 0.02) * T
        return {"bound_id": "maximal_time_event", "T": T, "event": list(traj.event), "pass": ok}
    if v.name == "extinction":
        T = s.initial.get("T")
        ok = traj.event[0] == "extinction" and abs(traj.event[1] - T) <= p.get("tol", 0.05) * T
        return {"bound_id": "extinction", "T": T, "event": list(traj.event), "pass": ok}
    if v.name == "vt_plugin":
        levels = refine_levels or p.get("levels", 3)
        base = _grid(s, "node_count", 181)
        grids = [RadialGrid((base - 1) * 2 ** k + 1, _grid(s, "r_max", 5.0), _grid(s, "r_min", 0.5))
                 for k in range(levels)]
        res = [vt_plugin_residual(g, s.initial["T"], s.n, 0.5 * s.initial["T"]) for g in grids]
        rep = estimates.residual_report("vt_plugin", res, [g.spacing for g in grids], p.get("min_order", 1.9))
        return rep.to_dict()
    if v.name == "residual_study":
        levels = refine_levels or p.get("levels", 3)
        trajs = [traj] + [run(build_problem(s, k)) for k in range(1, levels)]
        out = {"bound_id": "residual_study", "reports": {}}
        ok = True
        for ident in p.get("identities", list(estimates.IDENTITIES)):
            rep = estimates.evolution_residual(trajs, ident, min_order=p.get("min_order", 1.5))
            out["reports"][ident] = rep.to_dict()
            ok = ok and rep.passed
        out["pass"] = ok
        return out
    raise ScenarioError(f"unknown instrument {v.name!r}")


def _explicit_check(s: Scenario, traj: Trajectory, tol: float) -> dict:
    ini = s.initial
    final = traj.final
    if ini["kind"] == "sphere":
        exact = barriers.Sphere(ini["r0"], n=s.n).radius(final.t)
        measured = float(np.max(np.abs(final.surface.rho - exact))) / exact
    elif ini["kind"] == "geodesic_ball_link":
        law = barriers.GeodesicBallLink(ini["theta0"])
        measured = max(abs(math.sin(float(np.mean(st.surface.polar_angles()))) / math.sin(ini["theta0"])
                           - math.exp(st.t)) for st in traj.states)
        exact = law.theta(final.t)
    elif ini["kind"] == "ultrafast_vt":
        sol = barriers.UltrafastVT(ini["T"], s.n)
        picked = [st for st in traj.states if st.t <= 0.9 * ini["T"]][-1]
        measured = float(np.max(np.abs(picked.surface.u / sol.profile(picked.surface.r, picked.t) - 1)))
        exact = picked.t
    else:
        raise ScenarioError(f"no explicit solution for initial kind {ini['kind']!r}")
    return {"bound_id": "explicit_solution", "relative_error": measured, "reference": exact,
            "tol": tol, "pass": bool(measured <= tol)}


def write_csv(traj: Trajectory, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for st in traj.states:
        row = dict(t=st.t, **st.diagnostics)
        w.writerow([repr(float(row.get(c, float("nan")))) for c in CSV_COLUMNS])


def execute(s: Scenario, out_dir: Optional[str] = None, refine: Optional[int] = None,
            strict: bool = False) -> Tuple[int, dict]:
    """Run the flow and instruments; write artifacts; return (exit status, summary)."""
    start = time.perf_counter()
    target = out_dir or s.output_dir or "out"
    target = os.path.join(target, s.name)
    os.makedirs(os.path.join(target, "reports"), exist_ok=True)
    summary: Dict[str, Any] = {"scenario": s.name, "instruments": {}, "constants": {}, "event": None,
                               "warnings": []}
    status = EXIT_OK
    traj = None
    try:
        problem = build_problem(s)
        if problem is not None:
            traj = run(problem)
            traj.meta["cone"] = problem.cone
            summary["event"] = list(traj.event)
            with open(os.path.join(target, "trajectory.csv"), "w", encoding="utf-8") as fh:
                write_csv(traj, fh)
            if traj.event[0] == "hypothesis-violated":
                status = EXIT_HYPOTHESIS
            elif traj.event[0] in ("step-failure", "step-limit"):
                summary["warnings"].append(f"flow ended early: {traj.event[0]} at t={traj.event[1]:.6g}")
        for v in s.verifications:
            try:
                rep = _instrument(v, s, traj, refine)
            except estimates.HypothesisViolated as exc:
                rep = {"bound_id": v.name, "pass": False, "hypothesis_violated": str(exc)}
                status = EXIT_HYPOTHESIS
            with open(os.path.join(target, "reports", f"{v.name}.json"), "w", encoding="utf-8") as fh:
                json.dump(rep, fh, sort_keys=True, indent=2)
            summary["instruments"][v.name] = bool(rep["pass"])
            for key in ("C_fit", "T", "classification"):
                if key in rep.get("constants", rep):
                    summary["constants"][f"{v.name}.{key}"] = rep.get("constants", rep)[key]
            if not rep["pass"] and status == EXIT_OK:
                status = EXIT_FAIL
    except (ConstructionError, barriers.ConstructionFailure, GeometryError, convexkit.NoCone,
            convexkit.InvalidLink) as exc:
        summary["error"] = f"construction failure: {exc}"
        status = EXIT_FAIL
    except FlowSignal as exc:
        summary["event"] = [exc.kind, exc.t, exc.message]
        status = EXIT_HYPOTHESIS if exc.kind == "hypothesis-violated" else EXIT_FAIL
    if strict and summary["warnings"] and status == EXIT_OK:
        status = EXIT_FAIL
    summary["pass"] = status == EXIT_OK
    summary["exit_status"] = status
    summary["wall_time_s"] = round(time.perf_counter() - start, 3)
    with open(os.path.join(target, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, default=float)
    return status, summary


# ---------------------------------------------------------------------------
# oracles


def oracle(name: str) -> dict:
    """Closed-form reference values used by the tests."""
    ts = [0.0, 0.25, 0.5, 1.0]
    if name == "sphere":
        return {"radius_n1": [math.exp(t) for t in ts], "radius_n2": [math.exp(t / 2) for t in ts], "t": ts}
    if name == "cone":
        return {"theta0": math.pi / 4, "n": 2, "T": math.log(math.sqrt(2.0)),
                "link_perimeter": 2 * math.pi * math.sin(math.pi / 4)}
    if name == "link":
        T = math.log(2.0)
        return {"theta0": math.pi / 6, "T": T, "sin_ratio": [math.exp(t) for t in ts if t < T], "t": [t for t in ts if t < T]}
    if name == "ellipse":
        return {"a": 2.0, "b": 1.0, "kappa_at_(a,0)": 2.0, "kappa_at_(0,b)": 0.25}
    if name == "degenerate":
        return {"hemisphere": {"T": 0.0, "classification": "hemisphere"},
                "lune": {"T": 0.0, "classification": "wedge"}}
    if name == "ultrafast":
        return {"T": 1.0, "n": 3, "v_at_r1_t0": math.sqrt(4.0)}
    if name == "speed":
        return {"c_theta1_pi/4": estimates.cone_constant(math.pi / 4),
                "exact_cone_inv_HF_t0_theta_pi/4": math.tan(math.pi / 4)}
    if name == "local_H":
        return {"C_chain_n2": (16 / 9) * estimates.LOCAL_H_CHAIN * 2}
    raise KeyError(f"unknown oracle {name!r}; known: sphere, cone, link, ellipse, degenerate, ultrafast, speed, local_H")


# ---------------------------------------------------------------------------
# entry point


def _run_file(args) -> Tuple[str, int, dict]:
    path, out, refine, strict = args
    try:
        s = parse_scenario(path, strict=True)
    except ScenarioError as exc:
        return os.path.basename(path), EXIT_HYPOTHESIS, {"error": str(exc), "instruments": {}}
    status, summary = execute(s, out, refine, strict)
    return s.name, status, summary


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="imcflab", description="Inverse mean curvature flow lab")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_ver = sub.add_parser("verify", help="run every scenario in a directory and print a table")
    p_ver.add_argument("corpus")
    p_ver.add_argument("--jobs", type=int, default=1)
    for p in (p_run, p_ver):
        p.add_argument("--out", default=None)
        p.add_argument("--refine", type=int, default=None, help="refinement levels for residual studies")
        p.add_argument("--strict", action="store_true", help="fail on warnings")
    p_or = sub.add_parser("oracle", help="print closed-form reference values")
    p_or.add_argument("name")
    args = parser.parse_args(argv)

    if args.command == "oracle":
        try:
            print(json.dumps(oracle(args.name), indent=2, sort_keys=True))
        except KeyError as exc:
            print(exc.args[0], file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK
    if args.refine is not None and args.refine < 3:
        parser.error("--refine needs at least 3 levels")
    if args.command == "run":
        try:
            s = parse_scenario(args.scenario, strict=True)
        except (ScenarioError, OSError) as exc:
            print(f"{args.scenario}: {exc}", file=sys.stderr)
            return EXIT_HYPOTHESIS
        status, summary = execute(s, args.out, args.refine, args.strict)
        print(json.dumps(summary, indent=2, sort_keys=True, default=float))
        return status
    files = sorted(os.path.join(args.corpus, f) for f in os.listdir(args.corpus) if f.endswith(".scn"))
    jobs = [(f, args.out, args.refine, args.strict) for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_file, jobs))
    else:
        results = [_run_file(j) for j in jobs]
    worst = EXIT_OK
    for name, status, summary in results:
        detail = ", ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in summary.get("instruments", {}).items())
        if "error" in summary:
            detail = summary["error"]
        print(f"{name:<28} {'PASS' if status == EXIT_OK else 'FAIL'}  exit={status}  {detail}")
        worst = max(worst, status)
    return worst


if __name__ == "__main__":
    sys.exit(main())
