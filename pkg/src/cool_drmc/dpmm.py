"""Online variational inference for a Dirichlet process Gaussian mixture.

A learning structure summarizes everything seen so far as clumps
(mean, covariance, count) plus raw singlets. One call to ``update``
runs a model-building phase (truncated stick-breaking VB with a
Normal-Wishart prior, clumps constrained to a shared assignment) and a
compression phase that splits partitions top-down until the memory
budget is reached. Both phases are deterministic.
"""
from __future__ import annotations

import hashlib
import math
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln, multigammaln

from .errors import EmptyStructure, InvalidObservation

_LOG2PI = math.log(2 * math.pi)
_LOGPI = math.log(math.pi)


@dataclass(frozen=True)
class Clump:
    mu: np.ndarray
    sigma: np.ndarray  # covariance of the summarized points (1/N normalization)
    n: int

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(-1))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if int(self.n) < 1:
            raise ValueError("clump count must be positive")
        object.__setattr__(self, "n", int(self.n))


@dataclass(frozen=True)
class LearningStructure:
    clumps: tuple = ()
    singlets: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "clumps", tuple(self.clumps))
        object.__setattr__(
            self, "singlets", tuple(np.asarray(s, dtype=float).reshape(-1) for s in self.singlets)
        )

    @property
    def ndat(self) -> int:
        return sum(c.n for c in self.clumps) + len(self.singlets)

    @property
    def size(self) -> int:
        return len(self.clumps) + len(self.singlets)

    @property
    def dim(self) -> Optional[int]:
        if self.clumps:
            return self.clumps[0].mu.size
        if self.singlets:
            return self.singlets[0].size
        return None

    def to_dict(self) -> dict:
        return {
            "clumps": [{"mu": c.mu.tolist(), "sigma": c.sigma.tolist(), "n": c.n} for c in self.clumps],
            "singlets": [s.tolist() for s in self.singlets],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "LearningStructure":
        clumps = [Clump(c["mu"], c["sigma"], c["n"]) for c in d.get("clumps", [])]
        return cls(clumps, d.get("singlets", []))

    @classmethod
    def from_json(cls, s: str) -> "LearningStructure":
        return cls.from_dict(json.loads(s))

    def digest(self) -> str:
        h = hashlib.sha1()
        for c in self.clumps:
            h.update(c.mu.tobytes())
            h.update(c.sigma.tobytes())
            h.update(str(c.n).encode())
        h.update(b"|")
        for s in self.singlets:
            h.update(s.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, LearningStructure):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self):
        return hash(self.digest())


@dataclass(frozen=True)
class DpmmConfig:
    """Hyperparameters for the DP mixture.

    ``m0=None`` centres the Normal-Wishart prior on the pooled mean of the
    data being modelled; ``nu0=None`` means d+2 and ``psi0=None`` means 0.01*I.
    """

    alpha: float = 1.0
    m0: Optional[tuple] = None
    kappa0: float = 0.01
    nu0: Optional[float] = None
    psi0: Optional[tuple] = None
    budget: int = 64
    t_max: int = 20
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0 or not self.kappa0 > 0:
            raise ValueError("alpha and kappa0 must be positive")
        if self.budget < 1 or self.t_max < 1:
            raise ValueError("budget and t_max must be at least 1")


@dataclass(frozen=True)
class Component:
    weight: float
    n: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class MixtureEstimate:
    components: tuple
    ndat: int

    @property
    def m(self):
        return len(self.components)

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])


# ---------------------------------------------------------------------------
# units: the atoms of inference (clumps and singlets), as stacked arrays


@dataclass
class _Units:
    n: np.ndarray  # (U,)
    xbar: np.ndarray  # (U, d)
    scatter: np.ndarray  # (U, d, d), n * covariance

    @property
    def size(self):
        return self.n.size


def _units_of(structure: LearningStructure, extra: Sequence[np.ndarray] = ()) -> _Units:
    d = structure.dim
    if d is None:
        d = len(extra[0])
    ns, xs, cs = [], [], []
    for c in structure.clumps:
        ns.append(c.n)
        xs.append(c.mu)
        cs.append(c.n * c.sigma)
    for s in list(structure.singlets) + [np.asarray(e, float) for e in extra]:
        ns.append(1)
        xs.append(s)
        cs.append(np.zeros((d, d)))
    return _Units(np.array(ns, dtype=float), np.array(xs).reshape(-1, d), np.array(cs).reshape(-1, d, d))


@dataclass
class _Prior:
    m0: np.ndarray
    kappa0: float
    nu0: float
    W0inv: np.ndarray
    alpha: float
    logB0: float
    logdet_W0inv: float


def _prior_for(units: _Units, cfg: DpmmConfig) -> _Prior:
    d = units.xbar.shape[1]
    if cfg.m0 is not None:
        m0 = np.asarray(cfg.m0, dtype=float)
    else:
        m0 = (units.n @ units.xbar) / units.n.sum()
    nu0 = float(cfg.nu0) if cfg.nu0 is not None else d + 2.0
    psi0 = np.asarray(cfg.psi0, dtype=float) if cfg.psi0 is not None else 0.01 * np.eye(d)
    _, ld = np.linalg.slogdet(psi0)
    return _Prior(m0, cfg.kappa0, nu0, psi0, cfg.alpha, _log_wishart_B(-ld, nu0, d), ld)


def _log_wishart_B(logdetW, nu, d):
    # ln B(W, nu) for the Wishart normalizer
    return -0.5 * nu * logdetW - 0.5 * nu * d * np.log(2) - multigammaln(0.5 * nu, d)


@dataclass
class _Posterior:
    Nk: np.ndarray
    m: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    W: np.ndarray
    elogdet: np.ndarray
    elogpi: np.ndarray
    kl: float


def _m_step(u: _Units, r: np.ndarray, p: _Prior) -> _Posterior:
    d = u.xbar.shape[1]
    K = r.shape[1]
    rn = r * u.n[:, None]
    Nk = rn.sum(axis=0)
    sx = rn.T @ u.xbar
    safe = np.maximum(Nk, 1e-300)
    xk = sx / safe[:, None]
    diff = u.xbar[:, None, :] - xk[None, :, :]
    Sk = np.einsum("uki,ukj->kij", diff * rn[:, :, None], diff) + np.tensordot(r, u.scatter, axes=(0, 0))
    kappa = p.kappa0 + Nk
    m = (p.kappa0 * p.m0[None, :] + sx) / kappa[:, None]
    nu = p.nu0 + Nk
    dm = xk - p.m0[None, :]
    Winv = p.W0inv[None] + Sk + ((p.kappa0 * Nk / kappa)[:, None, None] * np.einsum("ki,kj->kij", dm, dm))
    Winv = 0.5 * (Winv + np.transpose(Winv, (0, 2, 1)))
    W = np.linalg.inv(Winv)
    _, ldWinv = np.linalg.slogdet(Winv)
    ldW = -ldWinv
    i = np.arange(1, d + 1)
    elogdet = digamma(0.5 * (nu[:, None] + 1 - i[None, :])).sum(axis=1) + d * np.log(2) + ldW

    # stick-breaking; the last stick is fixed at one
    tail = np.concatenate([np.cumsum(Nk[::-1])[::-1][1:], [0.0]])
    a = 1.0 + Nk[:-1]
    b = p.alpha + tail[:-1]
    dab = digamma(a + b)
    elogv = np.concatenate([digamma(a) - dab, [0.0]])
    elog1v = digamma(b) - dab
    elogpi = elogv + np.concatenate([[0.0], np.cumsum(elog1v)])

    kl_beta = np.sum(
        -np.log(p.alpha) + gammaln(a + b) - gammaln(a) - gammaln(b)
        + (a - 1) * digamma(a) + (b - p.alpha) * digamma(b) + (1 + p.alpha - a - b) * dab
    )
    dmm = m - p.m0[None, :]
    quad = np.einsum("ki,kij,kj->k", dmm, W, dmm)
    trW0W = np.einsum("ij,kji->k", p.W0inv, W)
    logB = _log_wishart_B(ldW, nu, d)
    kl_nw = (
        0.5 * d * np.log(kappa / p.kappa0) - 0.5 * d + 0.5 * d * p.kappa0 / kappa
        + 0.5 * p.kappa0 * nu * quad + logB - p.logB0
        + 0.5 * (nu - p.nu0) * elogdet - 0.5 * nu * d + 0.5 * nu * trW0W
    )
    return _Posterior(Nk, m, kappa, nu, W, elogdet, elogpi, float(kl_beta + kl_nw.sum()))


def _log_rho(u: _Units, q: _Posterior) -> np.ndarray:
    d = u.xbar.shape[1]
    per_point = q.elogpi + 0.5 * q.elogdet - 0.5 * d * _LOG2PI - 0.5 * d / q.kappa
    diff = u.xbar[:, None, :] - q.m[None, :, :]
    maha = np.einsum("uki,kij,ukj->uk", diff, q.W, diff)
    trWC = np.einsum("kij,uji->uk", q.W, u.scatter)
    return u.n[:, None] * per_point[None, :] - 0.5 * q.nu[None, :] * (u.n[:, None] * maha + trWC)


def _coordinate_ascent(u: _Units, r: np.ndarray, p: _Prior, cfg: DpmmConfig, trace=None):
    F_old = None
    for _ in range(cfg.max_iter):
        q = _m_step(u, r, p)
        lr = _log_rho(u, q)
        mx = lr.max(axis=1, keepdims=True)
        e = np.exp(lr - mx)
        se = e.sum(axis=1, keepdims=True)
        r = e / se
        lse = (mx + np.log(se))[:, 0]
        F = float(lse.sum() - q.kl)
        if trace is not None:
            trace.append(F)
        if F_old is not None and abs(F - F_old) <= cfg.tol * abs(F_old):
            break
        F_old = F
    return r, F


def _two_means(x: np.ndarray, w: np.ndarray, iters: int = 20) -> np.ndarray:
    """Weighted 2-means, initialized by the sign of the principal projection."""
    mu = (w @ x) / w.sum()
    xc = x - mu
    cov = (xc * w[:, None]).T @ xc / w.sum()
    evals, evecs = np.linalg.eigh(cov)
    proj = xc @ evecs[:, -1]
    lab = proj > 0
    if lab.all() or not lab.any():
        # no spread along the axis: split by position in the list
        lab = np.arange(x.shape[0]) >= x.shape[0] // 2
    for _ in range(iters):
        c1 = (w[~lab] @ x[~lab]) / w[~lab].sum()
        c2 = (w[lab] @ x[lab]) / w[lab].sum()
        new = np.sum((x - c2) ** 2, axis=1) < np.sum((x - c1) ** 2, axis=1)
        if new.all() or not new.any() or np.array_equal(new, lab):
            break
        lab = new
    return lab


def _whiten(x, w, scatter):
    mu = (w @ x) / w.sum()
    xc = x - mu
    cov = ((xc * w[:, None]).T @ xc + scatter.sum(axis=0)) / w.sum()
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = 1.0 / np.sqrt(np.maximum(evals, 1e-12 * max(evals.max(), 1e-300)))
    return xc @ evecs * scale[None, :]


def _split_proposal(u: _Units, idx: np.ndarray) -> np.ndarray:
    xs = _whiten(u.xbar[idx], u.n[idx], u.scatter[idx])
    return _two_means(xs, u.n[idx])


def _sort_columns(r, u):
    Nk = (r * u.n[:, None]).sum(axis=0)
    order = np.argsort(-Nk, kind="stable")
    return r[:, order]


def _model_build(u: _Units, cfg: DpmmConfig, trace=None):
    """Greedy split search around coordinate-ascent VB; returns (r, F)."""
    p = _prior_for(u, cfg)
    U = u.size
    r, F = _coordinate_ascent(u, np.ones((U, 1)), p, cfg, trace)
    while r.shape[1] < cfg.t_max:
        z = np.argmax(r, axis=1)
        best = None
        for k in range(r.shape[1]):
            idx = np.flatnonzero(z == k)
            if idx.size < 2:
                continue
            lab = _split_proposal(u, idx)
            r2 = np.concatenate([r, np.zeros((U, 1))], axis=1)
            moved = idx[lab]
            r2[moved] = 0.0
            r2[moved, -1] = 1.0
            r2[idx[~lab]] = 0.0
            r2[idx[~lab], k] = 1.0
            r2 = _sort_columns(r2, u)
            sub = [] if trace is not None else None
            r2, F2 = _coordinate_ascent(u, r2, p, cfg, sub)
            if best is None or F2 > best[1]:
                best = (r2, F2, sub)
        if best is None or not best[1] > F + 1e-9 * (1.0 + abs(F)):
            break
        r, F = best[0], best[1]
        if trace is not None:
            trace.extend(best[2])
    # drop components that hold no unit
    z = np.argmax(r, axis=1)
    keep = np.unique(z)
    return r[:, keep], F


_BUILD_CACHE: "OrderedDict[str, tuple]" = OrderedDict()
_CACHE_SIZE = 512


def _cached_build(u: _Units, cfg: DpmmConfig):
    h = hashlib.sha1()
    h.update(u.n.tobytes())
    h.update(u.xbar.tobytes())
    h.update(u.scatter.tobytes())
    h.update(repr(cfg).encode())
    key = h.hexdigest()
    hit = _BUILD_CACHE.get(key)
    if hit is not None:
        _BUILD_CACHE.move_to_end(key)
        return hit
    out = _model_build(u, cfg)
    _BUILD_CACHE[key] = out
    if len(_BUILD_CACHE) > _CACHE_SIZE:
        _BUILD_CACHE.popitem(last=False)
    return out


# ---------------------------------------------------------------------------
# compression phase


def _group_stats(u: _Units, idx):
    n = u.n[idx]
    N = n.sum()
    mu = (n @ u.xbar[idx]) / N
    diff = u.xbar[idx] - mu
    S = u.scatter[idx].sum(axis=0) + (diff * n[:, None]).T @ diff
    return N, mu, 0.5 * (S + S.T)


def _lmvgamma(a, d):
    return 0.25 * d * (d - 1) * _LOGPI + sum(math.lgamma(a - 0.5 * j) for j in range(d))


def _log_marginal(N, xbar, S, p: _Prior):
    # NIW evidence of a group given its sufficient statistics
    d = xbar.size
    kN = p.kappa0 + N
    nuN = p.nu0 + N
    dm = xbar - p.m0
    psiN = p.W0inv + S + (p.kappa0 * N / kN) * np.outer(dm, dm)
    if d == 2:
        ldN = math.log(psiN[0, 0] * psiN[1, 1] - psiN[0, 1] * psiN[1, 0])
    else:
        ldN = np.linalg.slogdet(psiN)[1]
    return (
        -0.5 * N * d * _LOGPI + _lmvgamma(0.5 * nuN, d) - _lmvgamma(0.5 * p.nu0, d)
        + 0.5 * p.nu0 * p.logdet_W0inv - 0.5 * nuN * ldN + 0.5 * d * math.log(p.kappa0 / kN)
    )


def _split_gain(u: _Units, idx, p: _Prior):
    lab = _split_proposal(u, idx)
    a, b = idx[~lab], idx[lab]
    Na, ma, Sa = _group_stats(u, a)
    Nb, mb, Sb = _group_stats(u, b)
    N, m, S = _group_stats(u, idx)
    gain = (
        _log_marginal(Na, ma, Sa, p) + _log_marginal(Nb, mb, Sb, p) - _log_marginal(N, m, S, p)
        + math.log(p.alpha) + math.lgamma(Na) + math.lgamma(Nb) - math.lgamma(N)
    )
    return float(gain), a, b


def _compress(u: _Units, z: np.ndarray, cfg: DpmmConfig) -> LearningStructure:
    if u.size <= cfg.budget:
        parts = [np.array([i]) for i in range(u.size)]
    else:
        p = _prior_for(u, cfg)
        parts = [np.flatnonzero(z == k) for k in np.unique(z)]
        if len(parts) > cfg.budget:
            # more components than the budget allows: split top-down from one group
            parts = [np.arange(u.size)]
        gains = [None] * len(parts)
        while len(parts) < cfg.budget:
            best = None
            for i, idx in enumerate(parts):
                if idx.size < 2:
                    continue
                if gains[i] is None:
                    gains[i] = _split_gain(u, idx, p)
                if best is None or gains[i][0] > gains[best][0]:
                    best = i
            if best is None:
                break
            _, a, b = gains[best]
            parts[best] = a
            gains[best] = None
            parts.insert(best + 1, b)
            gains.insert(best + 1, None)
    clumps, singlets = [], []
    for idx in parts:
        if idx.size == 1 and u.n[idx[0]] == 1:
            singlets.append(u.xbar[idx[0]].copy())
            continue
        N, mu, S = _group_stats(u, idx)
        clumps.append(Clump(mu, S / N, int(round(N))))
    return LearningStructure(clumps, singlets)


# ---------------------------------------------------------------------------
# public operations


def update(structure: LearningStructure, observation, cfg: DpmmConfig = DpmmConfig()) -> LearningStructure:
    """Absorb one (or a batch of) observation(s) into the learning structure.

    Args:
        structure: current learning structure.
        observation: a point in R^d, or an (n, d) array of points.
        cfg: hyperparameters.

    Returns:
        The new learning structure; its count grows by the number of points.
    """
    obs = np.asarray(observation, dtype=float)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.size == 0 or not np.all(np.isfinite(obs)):
        raise InvalidObservation("observation must be finite")
    d = structure.dim
    if d is not None and obs.shape[1] != d:
        raise InvalidObservation(f"observation has dimension {obs.shape[1]}, expected {d}")
    u = _units_of(structure, list(obs))
    if u.size == 1:
        return LearningStructure((), (obs[0].copy(),))
    if u.size <= cfg.budget:
        # nothing to summarize; the model is only needed for extraction
        return _compress(u, np.zeros(u.size, dtype=int), cfg)
    r, _ = _cached_build(u, cfg)
    return _compress(u, np.argmax(r, axis=1), cfg)


def free_energy_trace(structure: LearningStructure, cfg: DpmmConfig = DpmmConfig()) -> List[float]:
    """Free energy after every coordinate-ascent sweep of a model-building run.

    Sweeps from successive split attempts are concatenated, so the list is
    monotone only within each run; see ``model_build_runs``.
    """
    return model_build_runs(structure, cfg)[-1]


def model_build_runs(structure: LearningStructure, cfg: DpmmConfig = DpmmConfig()):
    """Per-run free-energy traces of the model-building phase (for diagnostics)."""
    u = _units_of(structure)
    p = _prior_for(u, cfg)
    runs = []
    U = u.size
    t = []
    r, F = _coordinate_ascent(u, np.ones((U, 1)), p, cfg, t)
    runs.append(t)
    while r.shape[1] < cfg.t_max:
        z = np.argmax(r, axis=1)
        best = None
        for k in range(r.shape[1]):
            idx = np.flatnonzero(z == k)
            if idx.size < 2:
                continue
            lab = _split_proposal(u, idx)
            r2 = np.concatenate([r, np.zeros((U, 1))], axis=1)
            r2[idx[lab]] = 0.0
            r2[idx[lab], -1] = 1.0
            r2[idx[~lab]] = 0.0
            r2[idx[~lab], k] = 1.0
            t = []
            r2, F2 = _coordinate_ascent(u, _sort_columns(r2, u), p, cfg, t)
            runs.append(t)
            if best is None or F2 > best[1]:
                best = (r2, F2)
        if best is None or not best[1] > F + 1e-9 * (1.0 + abs(F)):
            break
        r, F = best
    return runs


def extract_mixture(structure: LearningStructure, cfg: DpmmConfig = DpmmConfig()) -> MixtureEstimate:
    """Moment estimates per mixture component, weights from data counts."""
    if structure.ndat == 0:
        raise EmptyStructure("learning structure holds no data")
    u = _units_of(structure)
    if u.size == 1:
        z = np.zeros(1, dtype=int)
    else:
        r, _ = _cached_build(u, cfg)
        z = np.argmax(r, axis=1)
    # order components by first appearance in the structure
    labels = []
    for k in z:
        if k not in labels:
            labels.append(k)
    total = u.n.sum()
    d = u.xbar.shape[1]
    comps = []
    for k in labels:
        N, mu, S = _group_stats(u, np.flatnonzero(z == k))
        cov = S / N + 1e-6 * np.eye(d)
        comps.append(Component(float(N / total), int(round(N)), mu, 0.5 * (cov + cov.T)))
    return MixtureEstimate(tuple(comps), int(round(total)))


def merge_select(local_count: int, remote_counts: Sequence[int]) -> Optional[int]:
    """Index of the strictly largest remote count above the local one, else None."""
    best = None
    best_n = local_count
    for i, n in enumerate(remote_counts):
        if n > best_n:
            best, best_n = i, n
    return best
