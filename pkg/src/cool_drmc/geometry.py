"""Convex bodies, support functions and segment/body intersection tests.

Bodies are immutable. A body is always expressed in its own frame; a
placed body is a (position, body) pair, i.e. the Minkowski sum a + C.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog

from .errors import UnboundedBody

_TIE = 1e-12


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        if not self.radius >= 0:
            raise ValueError("ball radius must be non-negative")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in dimension")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def as_polytope(self) -> "Polytope":
        d = self.dim
        E = np.vstack([np.eye(d), -np.eye(d)])
        f = np.concatenate([self.hi, -self.lo])
        return Polytope(E, f)


@dataclass(frozen=True)
class Polytope:
    """{x | E x <= f}. Vertices are enumerated once at construction."""

    E: np.ndarray
    f: np.ndarray
    vertices: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if E.shape[0] != f.size:
            raise ValueError("E and f row counts differ")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "f", f)
        _check_bounded(E, f)
        object.__setattr__(self, "vertices", _enumerate_vertices(E, f))

    @property
    def dim(self):
        return self.E.shape[1]

    @property
    def center(self):
        return self.vertices.mean(axis=0)


ConvexBody = Union[Ball, Box, Polytope]


@dataclass(frozen=True)
class Hyperplane:
    """Affine function y -> y.h + g with unit normal h."""

    h: np.ndarray
    g: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if abs(np.linalg.norm(h) - 1.0) > 1e-9:
            raise ValueError("hyperplane normal must be a unit vector")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", float(self.g))

    def value(self, y):
        return float(np.dot(y, self.h) + self.g)

    def flipped(self) -> "Hyperplane":
        return Hyperplane(-self.h, -self.g)


def _check_bounded(E, f):
    d = E.shape[1]
    for i in range(d):
        for sign in (1.0, -1.0):
            c = np.zeros(d)
            c[i] = -sign
            res = linprog(c, A_ub=E, b_ub=f, bounds=[(None, None)] * d, method="highs")
            if res.status == 2:
                raise UnboundedBody("polytope is empty")
            if res.status == 3 or not np.isfinite(res.fun):
                raise UnboundedBody("polytope is unbounded")


def _enumerate_vertices(E, f):
    # d is 2 or 3 and q is small, so brute force over active sets is fine
    q, d = E.shape
    verts = []
    scale = 1.0 + np.abs(f).max()
    for rows in itertools.combinations(range(q), d):
        A = E[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, f[list(rows)])
        if np.all(E @ x <= f + 1e-9 * scale):
            verts.append(x)
    if not verts:
        raise UnboundedBody("polytope has no vertices")
    V = np.unique(np.round(np.array(verts), 12), axis=0)
    return V


def translate(body: ConvexBody, a) -> ConvexBody:
    """Return a + body."""
    a = np.asarray(a, dtype=float)
    if isinstance(body, Ball):
        return Ball(body.center + a, body.radius)
    if isinstance(body, Box):
        return Box(body.lo + a, body.hi + a)
    return Polytope(body.E, body.f + body.E @ a)


def scale_body(body: ConvexBody, s: float) -> ConvexBody:
    """Return s * body for s >= 0 (the s-fold Minkowski sum of a convex body)."""
    if isinstance(body, Ball):
        return Ball(s * body.center, s * body.radius)
    if isinstance(body, Box):
        return Box(s * body.lo, s * body.hi)
    if s == 0:
        c = np.zeros(body.dim)
        return Box(c, c)
    return Polytope(body.E, s * body.f)


def bounding_box(body: ConvexBody) -> Box:
    if isinstance(body, Box):
        return body
    if isinstance(body, Ball):
        return Box(body.center - body.radius, body.center + body.radius)
    return Box(body.vertices.min(axis=0), body.vertices.max(axis=0))


def minkowski_box(a: Box, b: Box) -> Box:
    return Box(a.lo + b.lo, a.hi + b.hi)


def support_function(body: ConvexBody, h) -> float:
    """max over y in body of y.h"""
    h = np.asarray(h, dtype=float)
    if isinstance(body, Ball):
        return float(body.center @ h + body.radius * np.linalg.norm(h))
    if isinstance(body, Box):
        return float(np.sum(np.maximum(body.lo * h, body.hi * h)))
    return float(np.max(body.vertices @ h))


def support_point(body: ConvexBody, h) -> np.ndarray:
    """An argmax of y.h over the body; ties go to the lexicographically smallest vertex."""
    h = np.asarray(h, dtype=float)
    if isinstance(body, Ball):
        n = np.linalg.norm(h)
        if n == 0:
            return body.center.copy()
        return body.center + body.radius * h / n
    if isinstance(body, Box):
        return np.where(h > 0, body.hi, body.lo)
    vals = body.vertices @ h
    best = vals.max()
    cand = body.vertices[vals >= best - _TIE * (1 + abs(best))]
    order = np.lexsort(cand.T[::-1])
    return cand[order[0]].copy()


def contains(body: ConvexBody, y, tol=1e-12) -> bool:
    y = np.asarray(y, dtype=float)
    if isinstance(body, Ball):
        return bool(np.linalg.norm(y - body.center) <= body.radius + tol)
    if isinstance(body, Box):
        return bool(np.all(y >= body.lo - tol) and np.all(y <= body.hi + tol))
    return bool(np.all(body.E @ y <= body.f + tol))


def closest_point(body: ConvexBody, y) -> np.ndarray:
    """Euclidean projection of y onto the body (exact for balls and boxes)."""
    y = np.asarray(y, dtype=float)
    if isinstance(body, Ball):
        v = y - body.center
        n = np.linalg.norm(v)
        if n <= body.radius:
            return y.copy()
        return body.center + body.radius * v / n
    if isinstance(body, Box):
        return np.clip(y, body.lo, body.hi)
    return _project_polytope(body, y)


def _project_polytope(body: Polytope, y):
    # small dense QP by active-set over vertex hull is overkill; use scipy SLSQP
    from scipy.optimize import minimize

    cons = {"type": "ineq", "fun": lambda x: body.f - body.E @ x, "jac": lambda x: -body.E}
    x0 = body.center
    res = minimize(lambda x: 0.5 * np.sum((x - y) ** 2), x0, jac=lambda x: x - y,
                   constraints=[cons], method="SLSQP", options={"ftol": 1e-12, "maxiter": 200})
    return res.x


def _ray_exit(body: ConvexBody, origin, direction) -> float:
    """Largest t with origin + t*direction in the body (origin assumed inside)."""
    if isinstance(body, Ball):
        v = origin - body.center
        b = v @ direction
        c = v @ v - body.radius**2
        return float(-b + np.sqrt(max(b * b - c, 0.0)))
    if isinstance(body, Box):
        body = body.as_polytope()
    Ed = body.E @ direction
    slack = body.f - body.E @ origin
    mask = Ed > 1e-15
    if not np.any(mask):
        return 0.0
    return float(np.min(slack[mask] / Ed[mask]))


def sample_directions(d: int, n: int) -> np.ndarray:
    if d == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    # Fibonacci sphere
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5**0.5) * i
    return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])


def boundary_samples(body: ConvexBody, n: int = 16) -> np.ndarray:
    """n boundary points along rays from the body's center."""
    c = body.center
    dirs = sample_directions(body.dim, n)
    return np.array([c + _ray_exit(body, c, u) * u for u in dirs])


def _segment_hits_ball(a, b, center, radius):
    d = b - a
    dd = d @ d
    t = np.clip((center - a) @ d / dd, 0.0, 1.0)
    dist = np.linalg.norm(a + t * d - center)
    if dist >= radius:
        return False
    # distance strictly below the radius means a neighbourhood of the closest
    # point is inside, so some interior point of the segment is inside too
    return True


def _segment_hits_box(a, b, lo, hi):
    d = b - a
    t0, t1 = 0.0, 1.0
    for i in range(a.size):
        if abs(d[i]) < 1e-15:
            if a[i] < lo[i] or a[i] > hi[i]:
                return False
            continue
        ta = (lo[i] - a[i]) / d[i]
        tb = (hi[i] - a[i]) / d[i]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    # touching the segment only at an endpoint does not count
    return t1 > 0.0 and t0 < 1.0 and (t1 > t0 or 0.0 < t0 < 1.0)


_POLY_T = np.arange(1, 65) / 65.0


def segment_blocked(a, b, blockers: Sequence[Tuple[np.ndarray, ConvexBody]]) -> bool:
    """True iff the open segment (a, b) meets any translated blocker."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for pos, body in blockers:
        pos = np.asarray(pos, dtype=float)
        if isinstance(body, Ball):
            hit = _segment_hits_ball(a, b, body.center + pos, body.radius)
        elif isinstance(body, Box):
            hit = _segment_hits_box(a, b, body.lo + pos, body.hi + pos)
        else:
            pts = a[None, :] + _POLY_T[:, None] * (b - a)[None, :]
            hit = bool(np.any(np.all(pts @ body.E.T <= body.f + body.E @ pos, axis=1)))
        if hit:
            return True
    return False


def bodies_clearance(pa, A: ConvexBody, pb, B: ConvexBody) -> float:
    """Signed separation between pa+A and pb+B for ball/box pairs.

    Positive values are gaps; negative values indicate overlap (a lower bound
    on the penetration depth for box/box, exact for ball/ball).
    """
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    if isinstance(A, Ball) and isinstance(B, Ball):
        return float(np.linalg.norm(pa + A.center - pb - B.center) - A.radius - B.radius)
    if isinstance(A, Box) and isinstance(B, Ball):
        A, B, pa, pb = B, A, pb, pa
    if isinstance(A, Ball) and isinstance(B, Box):
        c = pa + A.center
        lo, hi = B.lo + pb, B.hi + pb
        q = np.clip(c, lo, hi)
        gap = np.linalg.norm(c - q)
        if gap > 0:
            return float(gap - A.radius)
        inside = np.minimum(c - lo, hi - c).min()
        return float(-inside - A.radius)
    A = bounding_box(A) if not isinstance(A, Box) else A
    B = bounding_box(B) if not isinstance(B, Box) else B
    lo1, hi1 = A.lo + pa, A.hi + pa
    lo2, hi2 = B.lo + pb, B.hi + pb
    sep = np.maximum(lo2 - hi1, lo1 - hi2)
    if np.all(sep <= 0):
        return float(sep.max())
    return float(np.linalg.norm(np.maximum(sep, 0)))


def body_to_dict(body: ConvexBody) -> dict:
    if isinstance(body, Ball):
        return {"type": "ball", "center": body.center.tolist(), "radius": body.radius}
    if isinstance(body, Box):
        return {"type": "box", "lo": body.lo.tolist(), "hi": body.hi.tolist()}
    return {"type": "polytope", "E": body.E.tolist(), "f": body.f.tolist()}


def body_from_dict(d: dict) -> ConvexBody:
    kind = d["type"]
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "polytope":
        return Polytope(d["E"], d["f"])
    raise ValueError(f"unknown body type {kind!r}")
