"""Conic programs: container, Clarabel bridge, DR-CVaR hyperplane SDP and
the condensed receding-horizon QP.

A program is

    minimize    0.5 x'Px + c'x + offset
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                x[nonneg] >= 0
                F0_b + sum_i x_i F_ib  PSD   for every block b
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

import clarabel

from .ambiguity import MixtureAmbiguitySet
from .errors import MalformedSet
from .geometry import Box, ConvexBody, Polytope, support_function

SQRT2 = math.sqrt(2.0)


@dataclass
class Rows:
    """Sparse affine rows in triplet form."""

    m: int = 0
    r: list = field(default_factory=list)
    c: list = field(default_factory=list)
    v: list = field(default_factory=list)
    b: list = field(default_factory=list)

    def add(self, coeffs: Dict[int, float], rhs: float) -> int:
        for j, a in coeffs.items():
            if a != 0.0:
                self.r.append(self.m)
                self.c.append(int(j))
                self.v.append(float(a))
        self.b.append(float(rhs))
        self.m += 1
        return self.m - 1

    def matrix(self, n) -> sp.csc_matrix:
        return sp.csc_matrix((self.v, (self.r, self.c)), shape=(self.m, n))

    def to_dict(self):
        return {"m": self.m, "r": self.r, "c": self.c, "v": self.v, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["m"], list(d["r"]), list(d["c"]), list(d["v"]), list(d["b"]))


@dataclass
class PsdBlock:
    """Symmetric affine matrix map; entries are stored for the lower triangle."""

    size: int
    const: Dict[Tuple[int, int], float] = field(default_factory=dict)
    terms: List[Tuple[int, int, int, float]] = field(default_factory=list)  # (i, j, var, coef)

    def add(self, i, j, var, coef):
        if i < j:
            i, j = j, i
        if coef != 0.0:
            self.terms.append((i, j, int(var), float(coef)))

    def add_const(self, i, j, val):
        if i < j:
            i, j = j, i
        self.const[(i, j)] = self.const.get((i, j), 0.0) + float(val)

    def evaluate(self, x) -> np.ndarray:
        M = np.zeros((self.size, self.size))
        for (i, j), v in self.const.items():
            M[i, j] += v
        for i, j, k, a in self.terms:
            M[i, j] += a * x[k]
        return M + np.tril(M, -1).T

    def to_dict(self):
        return {"size": self.size, "const": [[i, j, v] for (i, j), v in sorted(self.const.items())],
                "terms": [list(t) for t in self.terms]}

    @classmethod
    def from_dict(cls, d):
        b = cls(d["size"])
        b.const = {(int(i), int(j)): float(v) for i, j, v in d["const"]}
        b.terms = [(int(i), int(j), int(k), float(a)) for i, j, k, a in d["terms"]]
        return b


@dataclass
class ConicProgram:
    n: int = 0
    c: list = field(default_factory=list)
    offset: float = 0.0
    P: Optional[np.ndarray] = None  # dense symmetric, QPs only
    eq: Rows = field(default_factory=Rows)
    ineq: Rows = field(default_factory=Rows)
    nonneg: list = field(default_factory=list)
    psd: List[PsdBlock] = field(default_factory=list)
    names: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    # building helpers
    def var(self, name: str, size: int = 1) -> np.ndarray:
        if name in self.names:
            raise MalformedSet(f"duplicate variable {name}")
        start = self.n
        self.n += size
        self.c.extend([0.0] * size)
        self.names[name] = (start, self.n)
        return np.arange(start, self.n)

    def sym_var(self, name: str, d: int) -> np.ndarray:
        """Symmetric matrix variable; returns a d x d index table."""
        idx = self.var(name, d * (d + 1) // 2)
        T = np.zeros((d, d), dtype=int)
        k = 0
        for j in range(d):
            for i in range(j, d):
                T[i, j] = T[j, i] = idx[k]
                k += 1
        return T

    def value(self, x, name):
        a, b = self.names[name]
        return np.asarray(x[a:b])

    def census(self) -> dict:
        return {"vars": self.n, "eq": self.eq.m, "ineq": self.ineq.m, "nonneg": len(self.nonneg),
                "psd": sorted(b.size for b in self.psd)}

    def to_dict(self) -> dict:
        return {
            "n": self.n, "c": list(self.c), "offset": self.offset,
            "P": None if self.P is None else np.asarray(self.P).tolist(),
            "eq": self.eq.to_dict(), "ineq": self.ineq.to_dict(), "nonneg": list(self.nonneg),
            "psd": [b.to_dict() for b in self.psd], "names": {k: list(v) for k, v in self.names.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "ConicProgram":
        return cls(
            n=d["n"], c=list(d["c"]), offset=d["offset"], P=None if d["P"] is None else np.array(d["P"], dtype=float),
            eq=Rows.from_dict(d["eq"]), ineq=Rows.from_dict(d["ineq"]), nonneg=list(d["nonneg"]),
            psd=[PsdBlock.from_dict(b) for b in d["psd"]], names={k: tuple(v) for k, v in d["names"].items()},
        )

    @classmethod
    def from_json(cls, s) -> "ConicProgram":
        return cls.from_dict(json.loads(s))

    def objective(self, x) -> float:
        x = np.asarray(x)
        val = float(np.dot(self.c, x)) + self.offset
        if self.P is not None:
            val += 0.5 * float(x @ self.P @ x)
        return val

    def violation(self, x) -> float:
        """Largest constraint violation, relative to max(1, |b|, |x|)."""
        x = np.asarray(x)
        worst = 0.0
        scale = max(1.0, float(np.abs(x).max(initial=0.0)))
        if self.eq.m:
            res = self.eq.matrix(self.n) @ x - np.array(self.eq.b)
            scale = max(scale, float(np.abs(self.eq.b).max()))
            worst = max(worst, float(np.abs(res).max()))
        if self.ineq.m:
            res = self.ineq.matrix(self.n) @ x - np.array(self.ineq.b)
            scale = max(scale, float(np.abs(self.ineq.b).max()))
            worst = max(worst, float(res.max(initial=0.0)))
        if self.nonneg:
            worst = max(worst, float(-x[self.nonneg].min(initial=0.0)))
        for b in self.psd:
            worst = max(worst, float(-np.linalg.eigvalsh(b.evaluate(x)).min()))
        return max(worst, 0.0) / scale

    def check(self):
        if len(self.c) != self.n:
            raise MalformedSet("objective length mismatch")
        for rows in (self.eq, self.ineq):
            if rows.c and max(rows.c) >= self.n:
                raise MalformedSet("row references unknown variable")
        for b in self.psd:
            if any(k >= self.n or i >= b.size for i, _, k, _ in b.terms):
                raise MalformedSet("PSD block references unknown variable")


@dataclass
class SolveReport:
    status: str
    objective: float
    x: np.ndarray
    max_violation: float
    iterations: int
    wall_ms: float
    dual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rows: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def key(self):
        """Everything except the wall time, for determinism checks."""
        return (self.status, repr(self.objective), self.x.tobytes(), repr(self.max_violation), self.iterations,
                self.dual.tobytes())

    def __eq__(self, other):
        return isinstance(other, SolveReport) and self.key() == other.key()


_STATUS = {
    "Solved": "Optimal", "AlmostSolved": "Optimal",
    "PrimalInfeasible": "Infeasible", "AlmostPrimalInfeasible": "Infeasible",
    "MaxIterations": "MaxIter", "MaxTime": "MaxIter",
}


def _psd_rows(block: PsdBlock, n):
    """Clarabel's scaled upper-triangle, column-major svec of b - A x."""
    s = block.size
    pos = {}
    k = 0
    for j in range(s):
        for i in range(j + 1):
            pos[(j, i)] = k  # keyed by (lower row, lower col)
            k += 1
    r, c, v = [], [], []
    for i, j, var, a in block.terms:
        w = 1.0 if i == j else SQRT2
        r.append(pos[(i, j)])
        c.append(var)
        v.append(-a * w)
    b = np.zeros(k)
    for (i, j), val in block.const.items():
        b[pos[(i, j)]] += val * (1.0 if i == j else SQRT2)
    A = sp.csc_matrix((v, (r, c)), shape=(k, n))
    A.sum_duplicates()
    return A, b


def solve(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> SolveReport:
    """Solve with Clarabel's interior-point method; never raises on solver trouble."""
    prog.check()
    n = prog.n
    blocks_A, blocks_b, cones, rows = [], [], [], {}
    at = 0
    if prog.eq.m:
        blocks_A.append(prog.eq.matrix(n))
        blocks_b.append(np.array(prog.eq.b))
        cones.append(clarabel.ZeroConeT(prog.eq.m))
        rows["eq"] = (at, at + prog.eq.m)
        at += prog.eq.m
    nn = prog.ineq.m + len(prog.nonneg)
    if nn:
        parts = []
        if prog.ineq.m:
            parts.append(prog.ineq.matrix(n))
        if prog.nonneg:
            k = len(prog.nonneg)
            parts.append(sp.csc_matrix((-np.ones(k), (np.arange(k), prog.nonneg)), shape=(k, n)))
        blocks_A.append(sp.vstack(parts, format="csc"))
        blocks_b.append(np.concatenate([np.array(prog.ineq.b, dtype=float), np.zeros(len(prog.nonneg))]))
        cones.append(clarabel.NonnegativeConeT(nn))
        rows["ineq"] = (at, at + prog.ineq.m)
        rows["nonneg"] = (at + prog.ineq.m, at + nn)
        at += nn
    for bi, blk in enumerate(prog.psd):
        A, b = _psd_rows(blk, n)
        blocks_A.append(A)
        blocks_b.append(b)
        cones.append(clarabel.PSDTriangleConeT(blk.size))
        rows[f"psd{bi}"] = (at, at + b.size)
        at += b.size
    A = sp.vstack(blocks_A, format="csc") if blocks_A else sp.csc_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    P = sp.csc_matrix((n, n)) if prog.P is None else sp.triu(sp.csc_matrix(prog.P), format="csc")
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = tol
    st.tol_gap_rel = tol
    st.tol_feas = tol
    st.max_iter = max_iter
    st.max_threads = 1
    t0 = time.perf_counter()
    try:
        sol = clarabel.DefaultSolver(P, np.array(prog.c, dtype=float), A, b, cones, st).solve()
    except Exception:  # solver panics must not escape
        wall = 1e3 * (time.perf_counter() - t0)
        return SolveReport("NumericalFailure", math.nan, np.full(n, math.nan), math.inf, 0, wall)
    wall = 1e3 * (time.perf_counter() - t0)
    x = np.array(sol.x, dtype=float)
    status = _STATUS.get(str(sol.status).split(".")[-1], "NumericalFailure")
    viol = prog.violation(x) if np.all(np.isfinite(x)) else math.inf
    if status == "Optimal" and not viol <= 10 * tol:
        status = "NumericalFailure"
    obj = prog.objective(x) if status == "Optimal" else math.nan
    return SolveReport(status, obj, x, viol, int(sol.iterations), wall, np.array(sol.z, dtype=float), rows)


# ---------------------------------------------------------------------------
# DR-CVaR separating-hyperplane SDP


def _support_rows(body: ConvexBody):
    if isinstance(body, Box):
        d = body.lo.size
        return np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([body.hi, -body.lo])
    if isinstance(body, Polytope):
        return body.E, body.f
    raise MalformedSet("support set must be a box or polytope")


def assemble_drcvar_sdp(aset: MixtureAmbiguitySet, h, obstacle: ConvexBody, alpha_u: float,
                        reg: float = 1e-6) -> ConicProgram:
    """Minimal bias g such that the worst-case CVaR of the obstacle-side loss
    -phi'h + S_O(-h) - g over the set is non-positive."""
    if not 0.0 < alpha_u < 1.0:
        raise MalformedSet("alpha_u must lie in (0, 1)")
    h = np.asarray(h, dtype=float)
    d = h.size
    aset = aset.explicit()
    if any(c.mu.size != d for c in aset.components) or obstacle.dim != d:
        raise MalformedSet("set, obstacle and h dimensions disagree")
    so = support_function(obstacle, -h)
    P = ConicProgram()
    g = P.var("g")[0]
    z = P.var("z")[0]
    th = P.var("vartheta")[0]
    zeta = P.var("zeta")[0]
    P.c[g] = 1.0
    P.nonneg.append(int(zeta))
    cf = 1.0 / (1.0 - alpha_u)
    epi = {z: 1.0, th: cf, zeta: cf * aset.theta}
    for n_, comp in enumerate(aset.components):
        if comp.mu.size != d:
            raise MalformedSet("set dimension does not match h")
        E, f = _support_rows(comp.support)
        q = E.shape[0]
        mu = comp.mu
        # only degenerate covariances are regularized
        bump = reg if np.linalg.eigvalsh(comp.sigma).min() <= 1e-12 else 0.0
        Sig = comp.sigma + bump * np.eye(d)
        Phi = comp.phi + bump * np.eye(d)
        r1 = P.var(f"r1_{n_}")[0]
        r2 = P.var(f"r2_{n_}")[0]
        s = P.var(f"s_{n_}")[0]
        tau = P.var(f"tau_{n_}")[0]
        Lam = P.sym_var(f"Lambda_{n_}", d)
        xi = P.var(f"xi_{n_}", d)
        Om = P.sym_var(f"Omega_{n_}", d)
        eta = P.var(f"eta_{n_}", q)
        lam = P.var(f"lambda_{n_}", q)
        P.nonneg.extend([int(r1), int(r2)] + eta.tolist() + lam.tolist())
        epi[r1] = epi.get(r1, 0.0) + cf * aset.weights[n_]
        epi[r2] = epi.get(r2, 0.0) - cf * aset.weights[n_]
        P.eq.add({zeta: 1.0, r1: -1.0, r2: -1.0}, 0.0)
        # dual moment row, written as (...) - r1 + r2 - vartheta <= 0
        row: Dict[int, float] = {tau: comp.beta, s: 1.0, r1: -1.0, r2: 1.0, th: -1.0}
        for i in range(d):
            row[xi[i]] = row.get(xi[i], 0.0) - 2.0 * mu[i]
            for j in range(d):
                row[Om[i, j]] = row.get(Om[i, j], 0.0) - mu[i] * mu[j] + Phi[i, j]
                row[Lam[i, j]] = row.get(Lam[i, j], 0.0) + Sig[i, j]
        P.ineq.add(row, 0.0)
        for mult, with_h in ((eta, True), (lam, False)):
            B = PsdBlock(d + 1)
            for i in range(d):
                for j in range(i + 1):
                    B.add(i, j, Om[i, j], 1.0)
                # off-diagonal column: 0.5 E'mult - xi + 0.5 h - Omega mu
                for r in range(q):
                    B.add(d, i, mult[r], 0.5 * E[r, i])
                B.add(d, i, xi[i], -1.0)
                for j in range(d):
                    B.add(d, i, Om[i, j], -mu[j])
                if with_h:
                    B.add_const(d, i, 0.5 * h[i])
            B.add(d, d, s, 1.0)
            for r in range(q):
                B.add(d, d, mult[r], -f[r])
            if with_h:
                B.add(d, d, g, 1.0)
                B.add(d, d, z, 1.0)
                B.add_const(d, d, -so)
            _merge_terms(B)
            P.psd.append(B)
        B = PsdBlock(d + 1)
        for i in range(d):
            for j in range(i + 1):
                B.add(i, j, Lam[i, j], 1.0)
            B.add(d, i, xi[i], 1.0)
        B.add(d, d, tau, 1.0)
        P.psd.append(B)
        B = PsdBlock(d)
        for i in range(d):
            for j in range(i + 1):
                B.add(i, j, Om[i, j], 1.0)
        P.psd.append(B)
    P.ineq.add(epi, 0.0)
    return P


def _merge_terms(B: PsdBlock):
    acc: Dict[Tuple[int, int, int], float] = {}
    order = []
    for i, j, k, a in B.terms:
        key = (i, j, k)
        if key not in acc:
            order.append(key)
            acc[key] = 0.0
        acc[key] += a
    B.terms = [(i, j, k, acc[(i, j, k)]) for (i, j, k) in order if acc[(i, j, k)] != 0.0]


_DUMP = {"dir": None, "count": 0}


def set_dump_dir(path: Optional[str]):
    """Write every hyperplane program solved from now on to ``path`` (None stops)."""
    _DUMP["dir"] = path
    _DUMP["count"] = 0
    if path:
        os.makedirs(path, exist_ok=True)


def min_bias(aset: MixtureAmbiguitySet, h, obstacle: ConvexBody, alpha_u: float, tol: float = 1e-8):
    """Smallest bias g meeting the worst-case CVaR constraint.

    Solved in coordinates centred on the mean CoM with redundant moment
    bounds trimmed to the support, which keeps the program well scaled for
    both tiny and vacuous covariances; g is shifted back.
    """
    h = np.asarray(h, dtype=float)
    c = aset.mean_com
    if c.shape != h.shape:
        raise MalformedSet("set dimension does not match h")
    prog = assemble_drcvar_sdp(aset.shifted(-c).trimmed(), h, obstacle, alpha_u)
    if _DUMP["dir"]:
        write_sdpa(prog, os.path.join(_DUMP["dir"], f"sdp_{_DUMP['count']:06d}.dat-s"))
        _DUMP["count"] += 1
    rep = solve(prog, tol)
    g = float(prog.value(rep.x, "g")[0]) - float(h @ c) if rep.status == "Optimal" else math.nan
    return g, rep


def empirical_cvar(losses, alpha: float) -> float:
    """Sample CVaR: mean of the worst (1-alpha) tail, Rockafellar-Uryasev form."""
    x = np.sort(np.asarray(losses, dtype=float))
    zq = np.quantile(x, alpha, method="inverted_cdf")
    return float(zq + np.mean(np.maximum(x - zq, 0.0)) / (1.0 - alpha))


# ---------------------------------------------------------------------------
# receding-horizon QP


@dataclass(frozen=True)
class LTI:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]


def prediction_matrices(sys: LTI, K: int):
    """x_k = Phi_k x0 + Gam_k u, stacked for k = 1..K."""
    nx, nu = sys.nx, sys.nu
    Phi = np.zeros((K * nx, nx))
    Gam = np.zeros((K * nx, K * nu))
    Ak = np.eye(nx)
    powers = [np.eye(nx)]
    for k in range(K):
        Ak = sys.A @ Ak
        powers.append(Ak)
        Phi[k * nx:(k + 1) * nx] = Ak
    for k in range(K):
        for j in range(k + 1):
            Gam[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = powers[k - j] @ sys.B
    return Phi, Gam


@dataclass
class QpData:
    prog: ConicProgram
    Phi: np.ndarray
    Gam: np.ndarray
    x0: np.ndarray
    hp_rows: List[int]

    def states(self, u) -> np.ndarray:
        """Predicted states x_0..x_K as a (K+1, nx) array."""
        nx = self.x0.size
        xs = (self.Phi @ self.x0 + self.Gam @ np.asarray(u)).reshape(-1, nx)
        return np.vstack([self.x0, xs])


def assemble_mpc_qp(sys: LTI, x0, ref_x, ref_u, Q, R, Pt, x_box=None, u_box=None,
                    hyperplanes: Sequence[Tuple[int, np.ndarray, float]] = (), terminal_eq=None,
                    terminal_ineq=None) -> QpData:
    """Condensed QP over inputs u_0..u_{K-1}.

    ref_x: (K+1, nx) state references for steps 0..K; ref_u: (K, nu).
    hyperplanes: (k, h, const) meaning (C x_k)'h + const <= 0 for 1 <= k <= K.
    terminal_eq/terminal_ineq: (G, g) rows on x_K (G x_K = g, G x_K <= g).
    Stage costs are squared weighted norms.
    """
    x0 = np.asarray(x0, dtype=float)
    ref_x = np.asarray(ref_x, dtype=float)
    ref_u = np.asarray(ref_u, dtype=float)
    K = ref_u.shape[0]
    nx, nu = sys.nx, sys.nu
    if ref_x.shape != (K + 1, nx) or ref_u.shape != (K, nu) or x0.shape != (nx,):
        raise MalformedSet("reference or state dimension mismatch")
    Phi, Gam = prediction_matrices(sys, K)
    Qb = np.zeros((K * nx, K * nx))
    for k in range(K - 1):
        Qb[k * nx:(k + 1) * nx, k * nx:(k + 1) * nx] = Q
    Qb[(K - 1) * nx:, (K - 1) * nx:] = Pt
    Rb = np.kron(np.eye(K), R)
    free = Phi @ x0 - ref_x[1:].ravel()
    H = 2.0 * (Gam.T @ Qb @ Gam + Rb)
    c = 2.0 * (Gam.T @ Qb @ free - Rb @ ref_u.ravel())
    e0 = x0 - ref_x[0]
    offset = float(free @ Qb @ free + ref_u.ravel() @ Rb @ ref_u.ravel() + e0 @ Q @ e0)
    prog = ConicProgram()
    prog.var("u", K * nu)
    prog.c = c.tolist()
    prog.P = 0.5 * (H + H.T)
    prog.offset = offset

    def add_state_row(k, a, rhs):
        # a' x_k <= rhs, for 1 <= k <= K
        blk = slice((k - 1) * nx, k * nx)
        coef = a @ Gam[blk]
        return prog.ineq.add({j: coef[j] for j in range(K * nu)}, rhs - a @ (Phi[blk] @ x0))

    if u_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in u_box)
        for k in range(K):
            for i in range(nu):
                if np.isfinite(hi[i]):
                    prog.ineq.add({k * nu + i: 1.0}, hi[i])
                if np.isfinite(lo[i]):
                    prog.ineq.add({k * nu + i: -1.0}, -lo[i])
    if x_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in x_box)
        for k in range(1, K + 1):
            for i in range(nx):
                e = np.zeros(nx)
                e[i] = 1.0
                if np.isfinite(hi[i]):
                    add_state_row(k, e, hi[i])
                if np.isfinite(lo[i]):
                    add_state_row(k, -e, -lo[i])
    hp_rows = []
    for k, h, const in hyperplanes:
        if not 1 <= k <= K:
            raise MalformedSet("hyperplane step outside the horizon")
        hp_rows.append(add_state_row(k, sys.C.T @ np.asarray(h, dtype=float), -float(const)))
    blkK = slice((K - 1) * nx, K * nx)
    if terminal_ineq is not None:
        G, gv = terminal_ineq
        for a, rhs in zip(np.atleast_2d(G), np.atleast_1d(gv)):
            add_state_row(K, np.asarray(a, dtype=float), float(rhs))
    if terminal_eq is not None:
        G, gv = terminal_eq
        for a, rhs in zip(np.atleast_2d(G), np.atleast_1d(gv)):
            coef = np.asarray(a, dtype=float) @ Gam[blkK]
            prog.eq.add({j: coef[j] for j in range(K * nu)}, float(rhs) - a @ (Phi[blkK] @ x0))
    return QpData(prog, Phi, Gam, x0, hp_rows)


# ---------------------------------------------------------------------------
# SDPA sparse export


def write_sdpa(prog: ConicProgram, path: str):
    """Write the program in SDPA sparse format (.dat-s).

    SDPA form: minimize c'x s.t. sum_i x_i F_i - F_0 PSD. Linear rows and
    sign constraints go into one diagonal block; equalities become two rows.
    Quadratic objectives are not representable and are rejected.
    """
    if prog.P is not None:
        raise MalformedSet("SDPA export supports linear objectives only")
    n = prog.n
    lin = []  # (coeff dict, rhs) meaning sum a_i x_i - rhs >= 0
    A = prog.eq.matrix(n).tocsr()
    for r in range(prog.eq.m):
        row = A.getrow(r)
        co = dict(zip(row.indices.tolist(), row.data.tolist()))
        lin.append((co, prog.eq.b[r]))
        lin.append(({k: -v for k, v in co.items()}, -prog.eq.b[r]))
    A = prog.ineq.matrix(n).tocsr()
    for r in range(prog.ineq.m):
        row = A.getrow(r)
        lin.append(({k: -v for k, v in zip(row.indices.tolist(), row.data.tolist())}, -prog.ineq.b[r]))
    for j in prog.nonneg:
        lin.append(({j: 1.0}, 0.0))
    blocks = [b.size for b in prog.psd]
    struct = blocks + ([-len(lin)] if lin else [])
    entries = []  # (mat, block, i, j, val), 1-based, upper triangle
    for bi, b in enumerate(prog.psd, start=1):
        for (i, j), v in sorted(b.const.items()):
            if v != 0.0:
                entries.append((0, bi, j + 1, i + 1, -v))
        for i, j, k, a in b.terms:
            entries.append((k + 1, bi, j + 1, i + 1, a))
    lb = len(prog.psd) + 1
    for r, (co, rhs) in enumerate(lin, start=1):
        if rhs != 0.0:
            entries.append((0, lb, r, r, rhs))
        for k, a in co.items():
            entries.append((k + 1, lb, r, r, a))
    merged: Dict[Tuple[int, int, int, int], float] = {}
    for m, bl, i, j, v in entries:
        merged[(m, bl, i, j)] = merged.get((m, bl, i, j), 0.0) + v
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"{n}\n{len(struct)}\n")
        fh.write(" ".join(str(s) for s in struct) + "\n")
        fh.write(" ".join(repr(float(v)) for v in prog.c) + "\n")
        for (m, bl, i, j), v in sorted(merged.items()):
            if v != 0.0:
                fh.write(f"{m} {bl} {i} {j} {v!r}\n")


def qp_kkt_residual(prog: ConicProgram, rep: SolveReport) -> float:
    """Largest KKT residual (stationarity, dual sign, complementarity) of a
    program without PSD blocks, using the solver's multipliers."""
    if prog.psd:
        raise MalformedSet("KKT check covers linear constraints only")
    x = rep.x
    z = rep.dual
    n = prog.n
    grad = np.array(prog.c, dtype=float)
    if prog.P is not None:
        grad = grad + prog.P @ x
    res = []
    if prog.eq.m:
        a, b = rep.rows["eq"]
        grad = grad + prog.eq.matrix(n).T @ z[a:b]
    if prog.ineq.m:
        a, b = rep.rows["ineq"]
        zi = z[a:b]
        grad = grad + prog.ineq.matrix(n).T @ zi
        slack = np.array(prog.ineq.b) - prog.ineq.matrix(n) @ x
        res.append(float(np.abs(zi * slack).max()))
        res.append(float(max(0.0, -zi.min())))
    if prog.nonneg:
        a, b = rep.rows["nonneg"]
        zn = z[a:b]
        np.subtract.at(grad, prog.nonneg, zn)
        res.append(float(np.abs(zn * x[prog.nonneg]).max()))
        res.append(float(max(0.0, -zn.min())))
    res.append(float(np.abs(grad).max()))
    return max(res)
