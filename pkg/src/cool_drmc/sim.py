"""Closed-loop multi-robot world, scenario files and episode metrics."""
from __future__ import annotations

import json
import json.decoder
import json.scanner
import logging
import math
import traceback
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import controller as ctl
from .dpmm import DpmmConfig, LearningStructure, update
from .errors import ScenarioError
from .geometry import (
    Ball, Box, ConvexBody, bodies_clearance, body_from_dict, body_to_dict, boundary_samples, segment_blocked,
    translate,
)

log = logging.getLogger(__name__)

SCHEMA_ID = "cool-drmc/scenario@1"
VARIANTS = ("COOL", "OL", "OFFL", "WUP")


# ---------------------------------------------------------------------------
# scenario types


@dataclass(frozen=True)
class GmmPhase:
    """Ground-truth motion law active on steps start <= t < end."""

    start: int
    end: Optional[int]
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def active(self, t: int) -> bool:
        return self.start <= t and (self.end is None or t < self.end)


@dataclass(frozen=True)
class ObstacleSpec:
    id: str
    body: ConvexBody
    start: np.ndarray
    support: Box  # support of one-step motion
    schedule: Tuple[GmmPhase, ...] = ()
    offline_samples: int = 0

    @property
    def static(self) -> bool:
        return not self.schedule

    def phase(self, t: int) -> Optional[GmmPhase]:
        for p in self.schedule:
            if p.active(t):
                return p
        return self.schedule[-1] if self.schedule else None


@dataclass(frozen=True)
class RobotConfig:
    id: str
    radius: float
    start: np.ndarray
    waypoints: np.ndarray
    speed: float = 1.0
    K: int = 8
    vmax: float = 2.0
    amax: float = 2.0
    q: Tuple[float, float] = (1.0, 0.1)
    rho: float = 0.1
    margin: float = 0.02
    terminal: str = "zero_velocity"
    ref_start: Optional[np.ndarray] = None  # reference origin, defaults to start


@dataclass(frozen=True)
class Scenario:
    name: str
    dt: float
    T: int
    seed: int
    variant: str
    robots: Tuple[RobotConfig, ...]
    obstacles: Tuple[ObstacleSpec, ...]
    M: int = 10
    alpha: Optional[float] = None  # overall confidence, split evenly when set
    alpha_obs: float = 0.9
    alpha_u: float = 0.9
    dpmm_budget: int = 24

    @property
    def dynamic_obstacles(self):
        return [o for o in self.obstacles if not o.static]

    def with_overrides(self, **kw) -> "Scenario":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def reference_path(start, waypoints, speed, n, dt) -> np.ndarray:
    """Constant-speed polyline through the waypoints, holding at the last one.

    Rows are [position, velocity] for steps 0..n-1.
    """
    pts = np.vstack([np.asarray(start, float)[None, :], np.asarray(waypoints, float).reshape(-1, len(start))])
    seg = np.diff(pts, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    total = cum[-1]
    out = np.zeros((n, 2 * pts.shape[1]))
    for i in range(n):
        s = min(i * dt * speed, total)
        j = min(np.searchsorted(cum, s, side="right") - 1, len(lens) - 1) if len(lens) else 0
        if total == 0 or lens[j] == 0:
            out[i, :pts.shape[1]] = pts[-1] if total == 0 else pts[j]
            continue
        a = (s - cum[j]) / lens[j]
        out[i, :pts.shape[1]] = pts[j] + a * seg[j]
        if i * dt * speed < total:
            out[i, pts.shape[1]:] = seg[j] / lens[j] * speed
    return out


def robot_spec(rc: RobotConfig, sc: Scenario) -> ctl.RobotSpec:
    origin = rc.start if rc.ref_start is None else rc.ref_start
    ref = reference_path(origin, rc.waypoints, rc.speed, sc.T + rc.K + 2, sc.dt)
    return ctl.point_robot(rc.id, rc.radius, ref, dt=sc.dt, K=rc.K, vmax=rc.vmax, amax=rc.amax, q=rc.q,
                           rho=rc.rho, margin=rc.margin, terminal=rc.terminal)


def variant_flags(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    return {
        "COOL": dict(learn=True, share=True, propagate=True),
        "OL": dict(learn=True, share=False, propagate=True),
        "OFFL": dict(learn=False, share=False, propagate=True),
        "WUP": dict(learn=True, share=True, propagate=False),
    }[variant]


def controller_config(sc: Scenario) -> ctl.ControllerConfig:
    flags = variant_flags(sc.variant)
    dp = DpmmConfig(budget=sc.dpmm_budget, seed=sc.seed)
    if sc.alpha is not None:
        base = ctl.ControllerConfig.balanced(sc.alpha, len(sc.dynamic_obstacles))
        a_obs, a_u = base.alpha_obs, base.alpha_u
    else:
        a_obs, a_u = sc.alpha_obs, sc.alpha_u
    return ctl.ControllerConfig(M=sc.M, alpha_obs=a_obs, alpha_u=a_u, dpmm=dp, seed=sc.seed, **flags)


# ---------------------------------------------------------------------------
# world


@dataclass
class World:
    t: int
    x: Dict[str, np.ndarray]
    phi: Dict[str, np.ndarray]
    prev_phi: Dict[str, np.ndarray]
    rng: np.random.Generator
    robots: Dict[str, ctl.RobotSpec]
    obstacles: Dict[str, ObstacleSpec]
    seen_prev: Dict[Tuple[str, str], bool] = field(default_factory=dict)


def make_world(sc: Scenario) -> World:
    robots = {rc.id: robot_spec(rc, sc) for rc in sc.robots}
    x = {rc.id: np.concatenate([np.asarray(rc.start, float), np.zeros(2)]) for rc in sc.robots}
    phi = {o.id: np.asarray(o.start, float).copy() for o in sc.obstacles}
    return World(0, x, phi, dict(phi), np.random.default_rng(sc.seed), robots, {o.id: o for o in sc.obstacles})


def sample_motion(spec: ObstacleSpec, t: int, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    """One draw of the scheduled GMM, restricted to the motion support by rejection."""
    ph = spec.phase(t)
    d = spec.start.size
    if ph is None:
        return np.zeros(d)
    w = None
    for _ in range(max_tries):
        j = rng.choice(len(ph.weights), p=ph.weights)
        w = rng.multivariate_normal(ph.means[j], ph.covs[j], method="eigh")
        if np.all(w >= spec.support.lo) and np.all(w <= spec.support.hi):
            return w
    return np.clip(w, spec.support.lo, spec.support.hi)


def _blockers(world: World, skip_robot: str, skip_obstacle: Optional[str]):
    out = []
    for rid, rb in world.robots.items():
        if rid != skip_robot:
            out.append((rb.sys.C @ world.x[rid], rb.body))
    for oid, o in world.obstacles.items():
        if oid != skip_obstacle:
            out.append((world.phi[oid], o.body))
    return out


def observable(world: World, rid: str, oid: str, n: int = 16) -> bool:
    """Some boundary sample of the obstacle has a clear line of sight."""
    y = world.robots[rid].sys.C @ world.x[rid]
    o = world.obstacles[oid]
    blockers = _blockers(world, rid, oid)
    for p in boundary_samples(translate(o.body, world.phi[oid]), n):
        if not segment_blocked(y, p, blockers):
            return True
    return False


def observe(world: World, rid: str) -> Dict[str, Tuple[np.ndarray, Optional[np.ndarray]]]:
    """Observations for one robot: position always, motion only when the
    obstacle was also visible at the previous step. Static bodies are part
    of the known map and always reported."""
    out = {}
    for oid, o in world.obstacles.items():
        if o.static:
            out[oid] = (world.phi[oid].copy(), None)
            continue
        vis = observable(world, rid, oid)
        if vis:
            both = world.t > 0 and world.seen_prev.get((rid, oid), False)
            omega = world.phi[oid] - world.prev_phi[oid] if both else None
            out[oid] = (world.phi[oid].copy(), omega)
    return out


def step_world(world: World, inputs: Dict[str, np.ndarray], observed: Dict[str, Sequence[str]]) -> World:
    for rid, u in inputs.items():
        sys = world.robots[rid].sys
        world.x[rid] = sys.A @ world.x[rid] + sys.B @ np.asarray(u, float)
    world.seen_prev = {(rid, oid): True for rid, ids in observed.items() for oid in ids}
    for oid, o in world.obstacles.items():
        world.prev_phi[oid] = world.phi[oid].copy()
        if not o.static:
            world.phi[oid] = world.phi[oid] + sample_motion(o, world.t, world.rng)
    world.t += 1
    return world


def clearances(world: World) -> List[Tuple[str, str, float]]:
    out = []
    rids = sorted(world.robots)
    for i, a in enumerate(rids):
        ra = world.robots[a]
        ya = ra.sys.C @ world.x[a]
        for b in rids[i + 1:]:
            rb = world.robots[b]
            out.append((a, b, bodies_clearance(ya, ra.body, rb.sys.C @ world.x[b], rb.body)))
        for oid, o in world.obstacles.items():
            out.append((a, oid, bodies_clearance(ya, ra.body, world.phi[oid], o.body)))
    return out


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeResult:
    scenario: str
    variant: str
    seed: int
    traces: List[dict]
    metrics: dict
    messages: List[dict]
    positions: dict
    failed: bool = False
    error: Optional[str] = None

    def summary(self) -> dict:
        return {"scenario": self.scenario, "variant": self.variant, "seed": self.seed, "failed": self.failed,
                "error": self.error, "metrics": self.metrics}

    def trace_lines(self, timing: bool = True) -> str:
        lines = []
        for tr in self.traces:
            rec = {k: tr[k] for k in ("t", "robot", "u", "x", "cost", "solve_ms", "fallbacks", "ndat")}
            rec.update({k: tr[k] for k in ("sources", "infeasible", "n_sdp", "pulls", "observed", "sets", "ref_x") if k in tr})
            if not timing:
                rec["solve_ms"] = {"qp": 0.0, "sdp_total": 0.0}
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def _stable_obstacle_seed(oid: str) -> int:
    return sum((i + 1) * ord(c) for i, c in enumerate(oid))


def run_episode(sc: Scenario) -> EpisodeResult:
    """Simulate one episode; controller exceptions become a failed report."""
    world = make_world(sc)
    cfg = controller_config(sc)
    models = [ctl.ObstacleModel(o.id, o.body, o.support if not o.static else Box(np.zeros(2), np.zeros(2)))
              for o in sc.obstacles]
    offline = {}
    for o in sc.dynamic_obstacles:
        if o.offline_samples > 0:
            rng_seed = [sc.seed, 1, _stable_obstacle_seed(o.id)]
            offline[o.id] = _offline(o, o.offline_samples, cfg.dpmm, rng_seed)
    states = {rid: ctl.initial_state(rb, cfg, models, offline) for rid, rb in world.robots.items()}
    traces, messages = [], []
    pos = {"robots": {rid: [] for rid in world.robots}, "obstacles": {o.id: [] for o in sc.obstacles},
           "refs": {rid: rb.ref_x[:sc.T + 1, :2].tolist() for rid, rb in world.robots.items()},
           "bodies": {**{rid: body_to_dict(rb.body) for rid, rb in world.robots.items()},
                      **{o.id: body_to_dict(o.body) for o in sc.obstacles}}}
    events = []
    min_clear = math.inf
    err = None

    def record():
        nonlocal min_clear
        for rid in world.robots:
            pos["robots"][rid].append((world.robots[rid].sys.C @ world.x[rid]).tolist())
        for oid in world.phi:
            pos["obstacles"][oid].append(world.phi[oid].tolist())
        for a, b, c in clearances(world):
            min_clear = min(min_clear, c)
            if c < -1e-9:
                kind = "robot" if b in world.robots else "obstacle"
                events.append({"t": world.t, "a": a, "b": b, "kind": kind, "clearance": c})

    record()
    try:
        rids = sorted(world.robots)
        for t in range(sc.T):
            obs = {rid: observe(world, rid) for rid in rids}
            committed = {rid: ctl.committed_output(states[rid], world.x[rid]) for rid in rids}
            counts = {rid: {oid: states[rid].ndat(oid) for oid in states[rid].obstacles} for rid in rids}
            payload = {rid: dict(states[rid].structures) for rid in rids}
            for a in rids:
                for b in rids:
                    if a != b:
                        messages.append({"t": t, "kind": "count", "from": a, "to": b})
            inputs = {}
            for rid in rids:
                peers = [ctl.PeerInfo(j, world.robots[j].body, committed[j], counts[j], payload[j])
                         for j in rids if j != rid]
                u, states[rid], tr = ctl.step(states[rid], ctl.ControllerInputs(world.x[rid], obs[rid], peers))
                for oid, src, cnt in tr["pulls"]:
                    messages.append({"t": t, "kind": "pull", "from": src, "to": rid, "obstacle": oid, "count": cnt})
                rx = world.robots[rid].ref_x[min(t, len(world.robots[rid].ref_x) - 1)]
                tr["ref_x"] = rx.tolist()
                tr["ref_y"] = rx[:2].tolist()
                traces.append(tr)
                inputs[rid] = u
            step_world(world, inputs, {rid: [o for o in obs[rid] if not world.obstacles[o].static] for rid in rids})
            record()
    except Exception as exc:  # a failed episode is data, not a crash
        err = f"{type(exc).__name__}: {exc}"
        log.error("episode %s seed %d failed: %s", sc.name, sc.seed, traceback.format_exc())
    metrics = episode_metrics(traces, events, min_clear, sc)
    return EpisodeResult(sc.name, sc.variant, sc.seed, traces, metrics, messages, pos, err is not None, err)


def _offline(spec, n, cfg, seed):
    rng = np.random.default_rng(seed)
    first = replace(spec.schedule[0], start=0, end=None)
    one = replace(spec, schedule=(first,))
    draws = np.array([sample_motion(one, 0, rng) for _ in range(n)])
    return update(LearningStructure((), ()), draws, cfg)


def episode_metrics(traces, events, min_clear, sc: Scenario) -> dict:
    costs = [tr["cost"] for tr in traces]
    errs = [float(np.linalg.norm(np.asarray(tr["x"][:2]) - np.asarray(tr["ref_y"]))) for tr in traces]
    qp = [tr["solve_ms"]["qp"] for tr in traces]
    sdp = [tr["solve_ms"]["sdp_total"] for tr in traces]
    inf = sum(1 for tr in traces if tr["infeasible"])
    rob = sum(1 for e in events if e["kind"] == "robot")
    return {
        "steps": len(traces),
        "avg_cost": float(np.mean(costs)) if costs else 0.0,
        "tracking_err": float(np.mean(errs)) if errs else 0.0,
        "qp_ms": float(np.mean(qp)) if qp else 0.0,
        "sdp_ms": float(np.mean(sdp)) if sdp else 0.0,
        "qp_ms_max": float(np.max(qp)) if qp else 0.0,
        "sdp_ms_max": float(np.max(sdp)) if sdp else 0.0,
        "n_sdp": int(sum(tr["n_sdp"] for tr in traces)),
        "collisions": len(events),
        "robot_collisions": rob,
        "obstacle_collisions": len(events) - rob,
        "collision_free": len(events) == 0,
        "min_clearance": float(min_clear) if math.isfinite(min_clear) else None,
        "infeasible_steps": inf,
        "fallback_rate": inf / len(traces) if traces else 0.0,
        "compressed": any(v["compressed"] for tr in traces for v in tr.get("sets", {}).values()),
        "m_max": max([v["m_max"] for tr in traces for v in tr.get("sets", {}).values()], default=0),
    }


# ---------------------------------------------------------------------------
# scenario files with line-anchored errors


class _Located(dict):
    """dict remembering the source span of its JSON object."""

    span: Tuple[int, int] = (0, 0)
    text: str = ""

    def line_of(self, key=None) -> int:
        s, e = self.span
        pos = s
        if key is not None:
            i = self.text.find(json.dumps(key), s, e)
            if i >= 0:
                pos = i
        return self.text.count("\n", 0, pos) + 1


def _located_loads(text: str):
    dec = json.JSONDecoder()

    def parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
        s, end = s_and_end
        obj, new_end = json.decoder.JSONObject(s_and_end, strict, scan_once, None, None, memo)
        out = _Located(obj)
        out.span = (end - 1, new_end)
        out.text = s
        return out, new_end

    dec.parse_object = parse_object
    dec.scan_once = json.scanner.py_make_scanner(dec)
    return dec.decode(text)


def _line(d, key=None) -> int:
    return d.line_of(key) if isinstance(d, _Located) else 0


def _need(d: _Located, key, kind=None, where=""):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioError(f"{where}missing field {key!r}", _line(d))
    v = d[key]
    if kind is not None and not _is(v, kind):
        raise ScenarioError(f"{where}field {key!r} must be {kind}", _line(d, key))
    return v


def _is(v, kind):
    if kind == "number":
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == "string":
        return isinstance(v, str)
    if kind == "list":
        return isinstance(v, list)
    if kind == "object":
        return isinstance(v, dict)
    return True


def _vec(d, key, dim, where):
    v = _need(d, key, "list", where)
    a = np.asarray(v, dtype=float) if all(_is(x, "number") for x in v) else None
    if a is None or a.shape != (dim,):
        raise ScenarioError(f"{where}field {key!r} must be a list of {dim} numbers", _line(d, key))
    return a


def _body(d, key, where):
    b = _need(d, key, "object", where)
    try:
        body = body_from_dict(b)
        if body.dim != 2:
            raise ValueError("bodies must be planar")
        return body
    except Exception as exc:
        raise ScenarioError(f"{where}bad body: {exc}", _line(b) or _line(d, key))


def scenario_from_dict(d) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a JSON object", 1)
    if d.get("schema") != SCHEMA_ID:
        raise ScenarioError(f"schema must be {SCHEMA_ID!r}", _line(d, "schema"))
    T = _need(d, "T", "int")
    dt = _need(d, "dt", "number")
    if T < 1:
        raise ScenarioError("T must be at least 1", _line(d, "T"))
    if dt <= 0:
        raise ScenarioError("dt must be positive", _line(d, "dt"))
    variant = d.get("variant", "COOL")
    if variant not in VARIANTS:
        raise ScenarioError(f"variant must be one of {VARIANTS}", _line(d, "variant"))
    robots = []
    for i, r in enumerate(_need(d, "robots", "list")):
        where = f"robots[{i}]: "
        if not isinstance(r, dict):
            raise ScenarioError(f"{where}must be an object", _line(d, "robots"))
        rid = _need(r, "id", "string", where)
        wps = _need(r, "waypoints", "list", where)
        wp = np.asarray(wps, dtype=float) if wps else np.zeros((0, 2))
        if wp.ndim != 2 or wp.shape[1] != 2:
            raise ScenarioError(f"{where}waypoints must be a list of 2-vectors", _line(r, "waypoints"))
        kw = {}
        for key in ("speed", "vmax", "amax", "rho", "margin"):
            if key in r:
                kw[key] = float(_need(r, key, "number", where))
        if "K" in r:
            kw["K"] = _need(r, "K", "int", where)
            if kw["K"] < 2:
                raise ScenarioError(f"{where}K must be at least 2", _line(r, "K"))
        if "q" in r:
            kw["q"] = tuple(_vec(r, "q", 2, where))
        if "terminal" in r:
            kw["terminal"] = _need(r, "terminal", "string", where)
            if kw["terminal"] not in ("zero_velocity", "none"):
                raise ScenarioError(f"{where}terminal must be 'zero_velocity' or 'none'", _line(r, "terminal"))
        if "ref_start" in r:
            kw["ref_start"] = _vec(r, "ref_start", 2, where)
        radius = _need(r, "radius", "number", where)
        if radius <= 0:
            raise ScenarioError(f"{where}radius must be positive", _line(r, "radius"))
        robots.append(RobotConfig(rid, float(radius), _vec(r, "start", 2, where), wp, **kw))
    obstacles = []
    for i, o in enumerate(d.get("obstacles", [])):
        where = f"obstacles[{i}]: "
        if not isinstance(o, dict):
            raise ScenarioError(f"{where}must be an object", _line(d, "obstacles"))
        oid = _need(o, "id", "string", where)
        body = _body(o, "body", where)
        start = _vec(o, "start", 2, where)
        sched = []
        for j, p in enumerate(o.get("schedule", [])):
            w2 = f"{where}schedule[{j}]: "
            wts = np.asarray(_need(p, "weights", "list", w2), dtype=float)
            means = np.asarray(_need(p, "means", "list", w2), dtype=float)
            covs = np.asarray(_need(p, "covs", "list", w2), dtype=float)
            m = wts.size
            if means.shape != (m, 2) or covs.shape != (m, 2, 2) or abs(wts.sum() - 1) > 1e-9 or np.any(wts < 0):
                raise ScenarioError(f"{w2}weights/means/covs are inconsistent", _line(p, "weights"))
            if any(np.linalg.eigvalsh(c).min() < -1e-12 for c in covs):
                raise ScenarioError(f"{w2}covariances must be PSD", _line(p, "covs"))
            end = p.get("end")
            sched.append(GmmPhase(int(p.get("start", 0)), None if end is None else int(end), wts, means, covs))
        if sched:
            sup = _need(o, "support", "object", where)
            support = Box(_vec(sup, "lo", 2, where), _vec(sup, "hi", 2, where))
        else:
            support = Box(np.zeros(2), np.zeros(2))
        obstacles.append(ObstacleSpec(oid, body, start, support, tuple(sched), int(o.get("offline_samples", 0))))
    ids = [r.id for r in robots] + [o.id for o in obstacles]
    if len(set(ids)) != len(ids):
        raise ScenarioError("ids must be unique", _line(d, "robots"))
    ctrl = d.get("controller", {})
    kw = {}
    for key, kind in (("M", "int"), ("alpha", "number"), ("alpha_obs", "number"), ("alpha_u", "number"),
                      ("dpmm_budget", "int")):
        if key in ctrl:
            kw[key] = _need(ctrl, key, kind, "controller: ")
    return Scenario(str(d.get("name", "scenario")), float(dt), int(T), int(d.get("seed", 0)), variant,
                    tuple(robots), tuple(obstacles), **kw)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    return parse_scenario(text)


def parse_scenario(text: str) -> Scenario:
    try:
        d = _located_loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return scenario_from_dict(d)


def scenario_to_dict(sc: Scenario) -> dict:
    robots = []
    for r in sc.robots:
        robots.append({"id": r.id, "radius": r.radius, "start": r.start.tolist(), "waypoints": r.waypoints.tolist(),
                       "speed": r.speed, "K": r.K, "vmax": r.vmax, "amax": r.amax, "q": list(r.q), "rho": r.rho,
                       "margin": r.margin, "terminal": r.terminal})
        if r.ref_start is not None:
            robots[-1]["ref_start"] = r.ref_start.tolist()
    obstacles = []
    for o in sc.obstacles:
        rec = {"id": o.id, "body": body_to_dict(o.body), "start": o.start.tolist(),
               "offline_samples": o.offline_samples}
        if o.schedule:
            rec["support"] = {"lo": o.support.lo.tolist(), "hi": o.support.hi.tolist()}
            rec["schedule"] = [{"start": p.start, "end": p.end, "weights": p.weights.tolist(),
                                "means": p.means.tolist(), "covs": p.covs.tolist()} for p in o.schedule]
        obstacles.append(rec)
    ctrl = {"M": sc.M, "alpha_obs": sc.alpha_obs, "alpha_u": sc.alpha_u, "dpmm_budget": sc.dpmm_budget}
    if sc.alpha is not None:
        ctrl["alpha"] = sc.alpha
    return {"schema": SCHEMA_ID, "name": sc.name, "dt": sc.dt, "T": sc.T, "seed": sc.seed, "variant": sc.variant,
            "controller": ctrl, "robots": robots, "obstacles": obstacles}


def builtin_scenario(name: str) -> Scenario:
    """Load a scenario shipped with the package by file stem."""
    return load_scenario(builtin_path(name))


def builtin_path(name: str) -> str:
    from pathlib import Path

    return str(Path(__file__).parent / "scenarios" / f"{name}.json")
