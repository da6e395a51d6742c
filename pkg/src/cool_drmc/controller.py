"""Per-robot receding-horizon step with collaborative learning.

One call to ``step`` runs, in order: structure adoption from peers, the
online learning update, ambiguity construction/propagation/compression,
inter-robot and robot-obstacle hyperplanes (with their fallback chains)
and the condensed QP. Everything a controller remembers between steps
lives in ``ControllerState``.
"""
from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ambiguity as amb
from . import conic
from .dpmm import DpmmConfig, LearningStructure, extract_mixture, merge_select, update
from .errors import CoolDrmcError, ConstraintConflict
from .geometry import Box, ConvexBody, Hyperplane, bounding_box, closest_point, support_function, translate

log = logging.getLogger(__name__)


@dataclass
class RobotSpec:
    id: str
    body: ConvexBody
    sys: conic.LTI
    x_box: Tuple[np.ndarray, np.ndarray]
    u_box: Tuple[np.ndarray, np.ndarray]
    K: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    r: float
    ref_x: np.ndarray  # (T_ref, nx); held at the last row beyond its end
    ref_u: np.ndarray  # (T_ref, nu)
    vel_idx: Tuple[int, ...] = ()  # velocity states, zero at the end of the horizon
    terminal: str = "zero_velocity"  # or "none" (no terminal rows)

    def ref_window(self, t: int):
        n = self.ref_x.shape[0]
        idx = np.minimum(np.arange(t, t + self.K + 1), n - 1)
        iu = np.minimum(np.arange(t, t + self.K), self.ref_u.shape[0] - 1)
        return self.ref_x[idx], self.ref_u[iu]


def double_integrator(dt: float, d: int = 2) -> conic.LTI:
    """Position/velocity point mass with acceleration input; output is position."""
    I, Z = np.eye(d), np.zeros((d, d))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([0.5 * dt * dt * I, dt * I])
    C = np.hstack([I, Z])
    return conic.LTI(A, B, C)


def point_robot(id, radius, ref_x, dt=0.2, K=8, vmax=2.0, amax=2.0, q=(1.0, 0.1), rho=0.1, margin=0.02,
                ref_u=None, pos_box=(-1e3, 1e3), terminal="zero_velocity") -> RobotSpec:
    """Disc robot with double-integrator dynamics in the plane."""
    from .geometry import Ball

    sys = double_integrator(dt)
    ref_x = np.asarray(ref_x, float)
    if ref_u is None:
        ref_u = np.zeros((ref_x.shape[0], 2))
    Q = np.diag([q[0], q[0], q[1], q[1]])
    x_lo = np.array([pos_box[0], pos_box[0], -vmax, -vmax])
    x_hi = np.array([pos_box[1], pos_box[1], vmax, vmax])
    return RobotSpec(id=id, body=Ball(np.zeros(2), radius), sys=sys, x_box=(x_lo, x_hi),
                     u_box=(-amax * np.ones(2), amax * np.ones(2)), K=K, Q=Q, R=rho * np.eye(2), P=Q,
                     r=margin, ref_x=ref_x, ref_u=np.asarray(ref_u, float), vel_idx=(2, 3),
                     terminal=terminal)


@dataclass(frozen=True)
class ObstacleModel:
    """What a controller knows a priori about an obstacle."""

    id: str
    body: ConvexBody
    w_support: Box  # support of the one-step motion

    @property
    def static(self) -> bool:
        return bool(np.all(self.w_support.hi - self.w_support.lo <= 1e-12))


@dataclass(frozen=True)
class ControllerConfig:
    M: int = 10
    alpha_obs: float = 0.9  # per-obstacle set confidence, split as chi * prod(alpha_comp)
    alpha_u: float = 0.9
    dpmm: DpmmConfig = DpmmConfig(budget=24)
    share: bool = True  # pull structures from peers
    learn: bool = True  # update structures online
    propagate: bool = True  # False reuses the one-step set for every step
    sdp_tol: float = 1e-7
    reach_shortcut: bool = True
    seed: int = 0

    @staticmethod
    def balanced(alpha: float, n_obstacles: int, **kw) -> "ControllerConfig":
        """Split an overall confidence evenly: prod alpha_l * alpha_u^L = alpha."""
        a = alpha ** (1.0 / (2 * max(n_obstacles, 1)))
        return ControllerConfig(alpha_obs=a, alpha_u=a, **kw)


@dataclass
class ControllerState:
    robot: RobotSpec
    cfg: ControllerConfig
    obstacles: Dict[str, ObstacleModel]
    t: int = 0
    committed: Optional[np.ndarray] = None  # (K+1, d)
    plan: Optional[np.ndarray] = None  # (K+1, nx) last optimal states
    structures: Dict[str, LearningStructure] = field(default_factory=dict)
    last_seen: Dict[str, Tuple[int, np.ndarray]] = field(default_factory=dict)
    set_cache: Dict[Tuple[str, int, int], amb.MixtureAmbiguitySet] = field(default_factory=dict)
    plane_cache: Dict[Tuple[str, int, int], Hyperplane] = field(default_factory=dict)

    def ndat(self, oid: str) -> int:
        s = self.structures.get(oid)
        return 0 if s is None else s.ndat


@dataclass
class PeerInfo:
    id: str
    body: ConvexBody
    committed: np.ndarray
    counts: Dict[str, int]
    structures: Dict[str, LearningStructure]


@dataclass
class ControllerInputs:
    x: np.ndarray
    observations: Dict[str, Tuple[np.ndarray, Optional[np.ndarray]]]  # id -> (position, motion sample)
    peers: List[PeerInfo] = field(default_factory=list)


def initial_state(robot: RobotSpec, cfg: ControllerConfig, obstacles: Sequence[ObstacleModel],
                  offline: Optional[Dict[str, LearningStructure]] = None) -> ControllerState:
    st = ControllerState(robot, cfg, {o.id: o for o in obstacles})
    for oid, s in (offline or {}).items():
        st.structures[oid] = s
    return st


# ---------------------------------------------------------------------------
# committed trajectories


def commit(prev_states: Optional[np.ndarray], sys: conic.LTI, ref_states: Optional[np.ndarray] = None) -> np.ndarray:
    """Shift the previous optimal plan by one step and extend it with the
    zero-input terminal law; without a plan, use the reference outputs."""
    if prev_states is None:
        return (sys.C @ np.asarray(ref_states).T).T
    xs = np.asarray(prev_states)
    ext = sys.A @ xs[-1]
    return (sys.C @ np.vstack([xs[1:], ext]).T).T


# ---------------------------------------------------------------------------
# hyperplanes


def _sup_at(y, body, h):
    return float(np.dot(y, h)) + support_function(body, h)


def inter_robot_plane(yi, Ri, yj, Rj) -> Optional[Hyperplane]:
    diff = np.asarray(yj, float) - np.asarray(yi, float)
    nrm = np.linalg.norm(diff)
    if nrm < 1e-9:
        return None
    h = diff / nrm
    g = 0.5 * (_sup_at(yj, Rj, -h) - _sup_at(yi, Ri, h))
    return Hyperplane(h, g)


def inter_robot_valid(plane: Hyperplane, yi, Ri, yj, Rj, r, tol=1e-9) -> bool:
    a = _sup_at(yi, Ri, plane.h) + plane.g + 0.5 * r
    b = _sup_at(yj, Rj, -plane.h) - plane.g + 0.5 * r
    return a <= tol and b <= tol


def inter_robot_hyperplane(id_i, yi, Ri, id_j, yj, Rj, r, cached: Optional[Hyperplane] = None):
    """Mirrored separating plane between two committed bodies.

    Returns (plane, source) with source in {"direct", "cache", "invalid", "axis"}.
    """
    plane = inter_robot_plane(yi, Ri, yj, Rj)
    if plane is not None and inter_robot_valid(plane, yi, Ri, yj, Rj, r):
        return plane, "direct"
    if cached is not None:
        return cached, "cache"
    if plane is not None:
        return plane, "invalid"
    d = np.asarray(yi).size
    h = np.zeros(d)
    h[0] = 1.0 if str(id_i) < str(id_j) else -1.0
    log.warning("coincident committed points for robots %s and %s; using an axis plane", id_i, id_j)
    g = 0.5 * (_sup_at(yj, Rj, -h) - _sup_at(yi, Ri, h))
    return Hyperplane(h, g), "axis"


def obstacle_plane_valid(plane: Hyperplane, y, R, r, tol=1e-9) -> bool:
    return _sup_at(y, R, plane.h) + plane.g + r <= tol


def support_separation(y, tube: ConvexBody, O: ConvexBody, toward=None) -> Hyperplane:
    """Deterministic plane between a committed point and the whole support tube."""
    c = bounding_box(tube).center if toward is None else np.asarray(toward, float)
    diff = c - np.asarray(y, float)
    nrm = np.linalg.norm(diff)
    h = diff / nrm if nrm > 1e-9 else np.eye(diff.size)[0]
    return Hyperplane(h, support_function(tube, -h) + support_function(O, -h))


def output_reach_boxes(sys: conic.LTI, x0, u_box, K) -> List[Box]:
    """Interval hull of outputs y(1..K) reachable from x0 under the input box."""
    lo, hi = (np.asarray(v, float) for v in u_box)
    uc, ur = np.tile(0.5 * (lo + hi), K), np.tile(0.5 * (hi - lo), K)
    Phi, Gam = conic.prediction_matrices(sys, K)
    nx = sys.nx
    boxes = []
    for k in range(K):
        blk = slice(k * nx, (k + 1) * nx)
        G = sys.C @ Gam[blk]
        center = sys.C @ (Phi[blk] @ x0) + G @ uc
        rad = np.abs(G) @ ur
        boxes.append(Box(center - rad, center + rad))
    return boxes


def robot_obstacle_hyperplane(y, R, r, O: ConvexBody, aset: Optional[amb.MixtureAmbiguitySet], tube: ConvexBody,
                              alpha_u: float, cached: Optional[Hyperplane] = None, terminal: bool = False,
                              reach: Optional[Box] = None, tol: float = 1e-7, toward=None):
    """Risk-bounded separating plane for one obstacle at one step.

    Returns (plane, source, sdp_ms, valid). Sources: "sdp", "skip" (support
    plane provably inactive over the reachable set), "cache", "support".
    """
    sdp_ms = 0.0
    if aset is not None:
        toward = aset.mean_com
        diff = toward - np.asarray(y, float)
        nrm = np.linalg.norm(diff)
        h = diff / nrm if nrm > 1e-9 else np.eye(diff.size)[0]
        if reach is not None:
            sup = Hyperplane(h, support_function(tube, -h) + support_function(O, -h))
            if support_function(reach, h) + support_function(R, h) + sup.g + r < 0:
                # the looser risk-bounded plane would be inactive too
                return sup, "skip", 0.0, obstacle_plane_valid(sup, y, R, r)
        t0 = time.perf_counter()
        g, rep = conic.min_bias(aset, h, O, alpha_u, tol)
        sdp_ms = 1e3 * (time.perf_counter() - t0)
        if rep.status == "Optimal" and math.isfinite(g):
            plane = Hyperplane(h, g)
            if obstacle_plane_valid(plane, y, R, r):
                return plane, "sdp", sdp_ms, True
    if cached is not None and not terminal:
        return cached, "cache", sdp_ms, obstacle_plane_valid(cached, y, R, r)
    if aset is not None:
        toward = aset.mean_com
    plane = support_separation(y, tube, O, toward)
    return plane, "support", sdp_ms, obstacle_plane_valid(plane, y, R, r)


# ---------------------------------------------------------------------------
# ambiguity pipeline with a small shared memo


_SET_MEMO: "OrderedDict[tuple, tuple]" = OrderedDict()
_SET_MEMO_SIZE = 256


def ambiguity_sets(structure: LearningStructure, phi, obs: ObstacleModel, K: int, cfg: ControllerConfig):
    """Compressed position sets for steps 1..K from the current structure.

    Returns (sets by k, info) where info lists component counts before
    compression, whether compression ran, and the fallback flag.
    """
    phi = np.asarray(phi, float)
    key = (structure.digest(), phi.tobytes(), obs.w_support.lo.tobytes(), obs.w_support.hi.tobytes(), K,
           cfg.M, cfg.alpha_obs, cfg.alpha_u, cfg.propagate, cfg.dpmm, cfg.seed)
    hit = _SET_MEMO.get(key)
    if hit is not None:
        _SET_MEMO.move_to_end(key)
        return hit
    est = extract_mixture(structure, cfg.dpmm)
    chi = math.sqrt(cfg.alpha_obs)
    conf = amb.ConfidenceConfig(chi=chi, alpha_comp=(cfg.alpha_obs / chi) ** (1.0 / est.m), alpha_u=cfg.alpha_u)
    base = amb.build_ambiguity(est, obs.w_support, conf)
    sets, info = {}, {"m": {}, "compressed": {}, "fallback": base.fallback}
    one = None
    for k in range(1, K + 1):
        if not cfg.propagate and one is not None:
            sets[k] = one
            continue
        kk = k if cfg.propagate else 1
        support_k = amb.propagate_support(phi, obs.w_support, kk)
        pk = amb.propagate(base, phi, kk, support_k)
        info["m"][k] = pk.m
        if pk.m > cfg.M:
            groups = amb.cluster_components(pk.components, cfg.M, seed=cfg.seed)
            sk = amb.compress(pk, groups)
            info["compressed"][k] = True
        else:
            sk = pk.explicit()
            info["compressed"][k] = False
        sets[k] = sk
        if not cfg.propagate:
            one = sk
    out = (sets, info)
    _SET_MEMO[key] = out
    if len(_SET_MEMO) > _SET_MEMO_SIZE:
        _SET_MEMO.popitem(last=False)
    return out


# ---------------------------------------------------------------------------
# braking fallback


def braking_input(robot: RobotSpec, x) -> np.ndarray:
    """Saturated input driving the velocity states toward zero."""
    sys = robot.sys
    lo, hi = robot.u_box
    if not robot.vel_idx:
        return np.clip(np.zeros(sys.nu), lo, hi)
    vi = list(robot.vel_idx)
    Bv = sys.B[vi]
    target = -(sys.A @ x)[vi]
    u = np.linalg.lstsq(Bv, target, rcond=None)[0]
    return np.clip(u, lo, hi)


def braking_plan(robot: RobotSpec, x) -> np.ndarray:
    xs = [np.asarray(x, float)]
    for _ in range(robot.K):
        xs.append(robot.sys.A @ xs[-1] + robot.sys.B @ braking_input(robot, xs[-1]))
    return np.array(xs)


# ---------------------------------------------------------------------------
# the step


def stage_cost(robot: RobotSpec, x, u, t) -> float:
    rx, ru = robot.ref_window(t)
    e = np.asarray(x) - rx[0]
    v = np.asarray(u) - ru[0]
    return float(e @ robot.Q @ e + v @ robot.R @ v)


def committed_output(state: ControllerState, x) -> np.ndarray:
    """Committed outputs for the coming step, anchored at the measured output."""
    rb = state.robot
    rx, _ = rb.ref_window(state.t)
    out = commit(state.plan, rb.sys, rx)
    out[0] = rb.sys.C @ np.asarray(x, float)
    return out


def _evict(cache: dict, t: int, keep: int):
    for key in [k for k in cache if k[1] < t - keep]:
        del cache[key]


def step(state: ControllerState, inp: ControllerInputs):
    """Advance one controller by one time step.

    Returns (u, new_state, trace). The state object is updated in place and
    also returned.
    """
    rb, cfg = state.robot, state.cfg
    t, K = state.t, rb.K
    x = np.asarray(inp.x, dtype=float)
    trace = {"t": t, "robot": rb.id, "fallbacks": [], "sources": {}, "pulls": [], "observed": sorted(inp.observations)}
    rx, ru = rb.ref_window(t)
    state.committed = committed_output(state, x)

    # structure exchange and learning
    for oid in sorted(inp.observations):
        if cfg.share:
            counts = [p.counts.get(oid, 0) for p in inp.peers]
            j = merge_select(state.ndat(oid), counts)
            if j is not None:
                state.structures[oid] = inp.peers[j].structures[oid]
                trace["pulls"].append([oid, inp.peers[j].id, counts[j]])
        phi, omega = inp.observations[oid]
        if cfg.learn and omega is not None:
            s = state.structures.get(oid, LearningStructure((), ()))
            state.structures[oid] = update(s, omega, cfg.dpmm)
        state.last_seen[oid] = (t, np.asarray(phi, float))

    t_sdp = 0.0
    n_sdp = 0
    reach = output_reach_boxes(rb.sys, x, rb.u_box, K) if cfg.reach_shortcut else [None] * K
    rows: List[Tuple[int, np.ndarray, float]] = []
    src_count: Dict[str, int] = {}

    def note(src):
        src_count[src] = src_count.get(src, 0) + 1

    # inter-robot planes
    for peer in inp.peers:
        for k in range(1, K + 1):
            cached = state.plane_cache.get((f"rob:{peer.id}", t - 1, k + 1))
            plane, src = inter_robot_hyperplane(rb.id, state.committed[k], rb.body, peer.id, peer.committed[k],
                                                peer.body, rb.r, cached)
            note("rob_" + src)
            if src in ("invalid", "axis"):
                trace["fallbacks"].append(f"rob:{peer.id}:{k}:{src}")
            state.plane_cache[(f"rob:{peer.id}", t, k)] = plane
            rows.append((k, plane.h, support_function(rb.body, plane.h) + plane.g + 0.5 * rb.r))

    # obstacle planes
    for oid in sorted(state.obstacles):
        obs = state.obstacles[oid]
        seen = state.last_seen.get(oid)
        sets = None
        if seen is not None and seen[0] == t and state.ndat(oid) > 0 and not obs.static:
            try:
                sets, info = ambiguity_sets(state.structures[oid], seen[1], obs, K, cfg)
                trace.setdefault("sets", {})[oid] = {
                    "m_max": max(info["m"].values()) if info["m"] else 0,
                    "compressed": any(info["compressed"].values()), "fallback": bool(info["fallback"]),
                }
                for k, s in sets.items():
                    state.set_cache[(oid, t, k)] = s
            except CoolDrmcError as exc:
                trace["fallbacks"].append(f"obs:{oid}:sets:{type(exc).__name__}")
                sets = None
        trace.setdefault("set_from", {})[oid] = None if seen is None else seen[0]
        for k in range(1, K + 1):
            aset = None
            if seen is not None:
                lag = t - seen[0]
                tube = amb.propagate_support(seen[1], obs.w_support, k + lag)
                if not obs.static:
                    aset = state.set_cache.get((oid, seen[0], k + lag))
            else:
                tube = None
            if tube is None:
                # never seen: nothing is known about its position
                note("obs_unknown")
                continue
            terminal = k == K
            cached = None if obs.static else state.plane_cache.get((f"obs:{oid}", t - 1, k + 1))
            toward = None
            if obs.static:
                # aim at the nearest point of a known static body
                near = closest_point(translate(obs.body, seen[1]), state.committed[k])
                if np.linalg.norm(near - state.committed[k]) > 1e-9:
                    toward = near
            plane, src, ms, ok = robot_obstacle_hyperplane(
                state.committed[k], rb.body, rb.r, obs.body, aset, tube, cfg.alpha_u, cached, terminal,
                reach[k - 1], cfg.sdp_tol, toward)
            if ms > 0:
                t_sdp += ms
                n_sdp += 1
            note("obs_" + src)
            if not ok:
                trace["fallbacks"].append(f"obs:{oid}:{k}:{src}:conflict")
            state.plane_cache[(f"obs:{oid}", t, k)] = plane
            rows.append((k, plane.h, support_function(rb.body, plane.h) + plane.g + rb.r))

    # QP
    term = None
    if rb.vel_idx and rb.terminal == "zero_velocity":
        G = np.zeros((len(rb.vel_idx), rb.sys.nx))
        for i, j in enumerate(rb.vel_idx):
            G[i, j] = 1.0
        term = (G, np.zeros(len(rb.vel_idx)))
    qp = conic.assemble_mpc_qp(rb.sys, x, rx, ru, rb.Q, rb.R, rb.P, rb.x_box, rb.u_box, rows, terminal_eq=term)
    rep = conic.solve(qp.prog, 1e-8)
    infeasible = rep.status != "Optimal"
    if infeasible:
        u = braking_input(rb, x)
        state.plan = braking_plan(rb, x)
        trace["fallbacks"].append(f"qp:{rep.status}:brake")
    else:
        u = np.asarray(rep.x[:rb.sys.nu], dtype=float)
        state.plan = qp.states(rep.x)
    _evict(state.set_cache, t, K)
    _evict(state.plane_cache, t, 1)
    trace.update({
        "u": u.tolist(), "x": x.tolist(), "cost": stage_cost(rb, x, u, t),
        "solve_ms": {"qp": rep.wall_ms, "sdp_total": t_sdp}, "n_sdp": n_sdp,
        "ndat": {oid: state.ndat(oid) for oid in sorted(state.obstacles)},
        "sources": src_count, "infeasible": infeasible, "committed": state.committed.tolist(),
    })
    state.t = t + 1
    return u, state, trace
