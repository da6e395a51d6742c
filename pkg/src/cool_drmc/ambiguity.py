"""Moment-based mixture ambiguity sets.

Construction from a mixture estimate with finite-sample radii, k-step
propagation by multinomial convolution, clustering of basic sets under
the Gaussian 2-Wasserstein distance, and safe compression of grouped
basic sets into one set with an explicit second-moment bound.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .dpmm import MixtureEstimate
from .errors import (
    EmptyEstimate, InsufficientData, InsufficientN, InvalidGrouping, InvalidRadius, MalformedSet,
    NotPSD, TooManyCompositions,
)
from .geometry import Box, ConvexBody, Polytope, bounding_box, minkowski_box, scale_body, translate

MAX_COMPOSITIONS = 10**6


@dataclass(frozen=True)
class BasicAmbiguitySet:
    """Distributions on ``support`` whose mean lies in the beta-ellipsoid
    around ``mu`` (shape ``sigma``) and whose second moment about ``mu``
    is bounded by ``eps * sigma`` (scaled form) or by ``phi`` (explicit form).
    """

    support: ConvexBody
    mu: np.ndarray
    sigma: np.ndarray
    beta: float
    eps: Optional[float] = None
    phi: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.eps is None) == (self.phi is None):
            raise MalformedSet("exactly one of eps and phi must be given")
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if self.phi is not None:
            object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))

    @property
    def second_moment(self) -> np.ndarray:
        return self.eps * self.sigma if self.phi is None else self.phi

    def explicit(self) -> "BasicAmbiguitySet":
        if self.phi is not None:
            return self
        return BasicAmbiguitySet(self.support, self.mu, self.sigma, self.beta, phi=self.eps * self.sigma)

    def contains_moments(self, mean, second, tol=1e-9) -> bool:
        """Check the two moment constraints for a distribution with the given
        mean and second moment about ``self.mu``."""
        a = np.asarray(mean) - self.mu
        maha = float(a @ np.linalg.solve(self.sigma, a))
        if maha > self.beta * (1 + tol) + tol:
            return False
        gap = self.second_moment - second
        scale = max(1.0, np.abs(self.second_moment).max())
        return bool(np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() >= -tol * scale)


@dataclass(frozen=True)
class MixtureAmbiguitySet:
    weights: np.ndarray
    theta: float
    components: tuple
    fallback: bool = False  # True when some component uses the conservative parameterization

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        if w.size != len(self.components) or w.size == 0:
            raise MalformedSet("weights and components disagree")
        if abs(w.sum() - 1.0) > 1e-9:
            raise MalformedSet("weights must sum to one")
        if not 0.0 <= self.theta <= 2.0:
            raise MalformedSet("theta must lie in [0, 2]")

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def mean_com(self) -> np.ndarray:
        return sum(w * c.mu for w, c in zip(self.weights, self.components))

    def explicit(self) -> "MixtureAmbiguitySet":
        return replace(self, components=tuple(c.explicit() for c in self.components))

    def trimmed(self) -> "MixtureAmbiguitySet":
        """Equivalent set with redundant moment bounds cut back to the support.

        On the support every deviation satisfies (w-mu)(w-mu)' <= R^2 sigma
        with R the whitened support radius, so beta above R^2, or a bound
        phi above R^2 sigma, constrains nothing. Trimming keeps the set and
        improves the conditioning of the conic program.
        """
        comps = []
        for c in self.components:
            c = c.explicit()
            try:
                r2 = whitened_radius(c.support, c.mu, c.sigma) ** 2
            except (MalformedSet, np.linalg.LinAlgError):
                comps.append(c)
                continue
            cap = r2 * c.sigma
            phi = cap if np.linalg.eigvalsh(c.phi - cap).min() >= 0 else c.phi
            comps.append(replace(c, beta=min(c.beta, r2), phi=phi))
        return replace(self, components=tuple(comps))

    def shifted(self, a) -> "MixtureAmbiguitySet":
        """The same set for the translated variable omega + a."""
        from .geometry import translate

        a = np.asarray(a, dtype=float)
        comps = tuple(replace(c, support=translate(c.support, a), mu=c.mu + a) for c in self.components)
        return replace(self, components=comps)

    def to_dict(self) -> dict:
        from .geometry import body_to_dict

        return {
            "weights": self.weights.tolist(),
            "theta": self.theta,
            "fallback": self.fallback,
            "components": [
                {
                    "support": body_to_dict(c.support), "mu": c.mu.tolist(), "sigma": c.sigma.tolist(),
                    "beta": c.beta, "eps": c.eps, "phi": None if c.phi is None else c.phi.tolist(),
                }
                for c in self.components
            ],
        }


@dataclass(frozen=True)
class ConfidenceConfig:
    """chi: weight-simplex confidence; alpha_comp: per-component moment
    confidence; alpha_u: DR-CVaR level."""

    chi: float = 0.95
    alpha_comp: float = 0.95
    alpha_u: float = 0.95

    def __post_init__(self):
        for v in (self.chi, self.alpha_comp, self.alpha_u):
            if not 0.0 < v < 1.0:
                raise ValueError("confidence levels must lie in (0, 1)")


# ---------------------------------------------------------------------------
# finite-sample parameters


def finite_sample_theta(m: int, chi: float, total_n: int) -> float:
    """TV radius of the weight confidence region."""
    if total_n < 2:
        raise InsufficientData("need at least two observations")
    th = 2.0 * math.sqrt((m * math.log(2.0) - math.log(1.0 - chi)) / (2.0 * (total_n - 1)))
    return min(max(th, 0.0), 2.0)


def finite_sample_beta_eps(n: int, r_hat: float, alpha_comp: float, d: int = 2) -> Tuple[float, float]:
    """Mean-ellipsoid and second-moment radii for one component.

    Raises InsufficientN when the sample-size condition fails or any
    intermediate quantity leaves its domain.
    """
    if n < 2 or not r_hat > 0:
        raise InsufficientN("need n >= 2 and a positive whitened support radius")
    a_hat = 1.0 - math.sqrt(alpha_comp)
    l1 = math.log(1.0 / a_hat)
    l4 = math.log(4.0 / a_hat)
    c1 = (r_hat**2 + 2.0) ** 2 * (2.0 + math.sqrt(2.0 * l1))
    gap = math.sqrt(r_hat + 4.0) - r_hat
    c2 = math.inf if gap == 0 else (8.0 + math.sqrt(32.0 * l4)) ** 2 / gap**4
    if not n > max(c1, c2):
        raise InsufficientN(f"n={n} below the sample-size bound {max(c1, c2):.4g}")
    base = 1.0 - (r_hat**2 + 2.0) * (2.0 + math.sqrt(2.0 * l4)) / math.sqrt(n)
    if base <= 0:
        raise InsufficientN("whitened radius inflation undefined")
    r_bar = r_hat / math.sqrt(base)
    rad = 1.0 - d / r_bar**4
    if rad < 0:
        raise InsufficientN("negative radicand in the moment bound")
    t_mean = (r_bar**2 / math.sqrt(n)) * (math.sqrt(rad) + math.sqrt(l1))
    t_cov = (r_bar**2 / n) * (2.0 + math.sqrt(2.0 * l1)) ** 2
    denom = 1.0 - t_mean - t_cov
    if denom <= 0:
        raise InsufficientN("non-positive denominator")
    return t_cov / denom, (1.0 + t_cov) / denom


def whitened_radius(support: ConvexBody, mu, sigma) -> float:
    """sup over the support of ||sigma^{-1/2} (w - mu)||, attained at a vertex."""
    if isinstance(support, Box):
        lo, hi = support.lo, support.hi
        verts = np.array(list(itertools.product(*zip(lo, hi))))
    elif isinstance(support, Polytope):
        verts = support.vertices
    else:
        raise MalformedSet("support must be a box or polytope")
    diff = verts - np.asarray(mu)[None, :]
    sol = np.linalg.solve(sigma, diff.T)
    return float(np.sqrt(np.max(np.sum(diff.T * sol, axis=0))))


def build_ambiguity(est: MixtureEstimate, support: ConvexBody, cfg: ConfidenceConfig) -> MixtureAmbiguitySet:
    """One basic set per mixture component plus the weight TV radius."""
    if est is None or est.m == 0:
        raise EmptyEstimate("mixture estimate has no components")
    d = est.components[0].mean.size
    theta = finite_sample_theta(est.m, cfg.chi, max(est.ndat, 2)) if est.ndat >= 2 else 2.0
    comps = []
    fallback = False
    for c in est.components:
        r_hat = whitened_radius(support, c.mean, c.cov)
        try:
            beta, eps = finite_sample_beta_eps(c.n, r_hat, cfg.alpha_comp, d)
        except InsufficientN:
            # smallest mean ellipsoid that covers the whole support
            beta, eps = r_hat**2, r_hat**2 + 1.0
            fallback = True
        comps.append(BasicAmbiguitySet(support, c.mean, c.cov, beta, eps=eps))
    return MixtureAmbiguitySet(np.array([c.weight for c in est.components]), theta, comps, fallback)


# ---------------------------------------------------------------------------
# propagation


def enumerate_compositions(m: int, k: int) -> List[Tuple[int, ...]]:
    """All non-negative integer m-vectors summing to k, lexicographic order."""
    if m < 1 or k < 0:
        raise ValueError("need m >= 1 and k >= 0")
    if math.comb(k + m - 1, m - 1) > MAX_COMPOSITIONS:
        raise TooManyCompositions(f"C({k + m - 1},{m - 1}) exceeds {MAX_COMPOSITIONS}")
    out = []

    def rec(prefix, left, slots):
        if slots == 1:
            out.append(tuple(prefix + [left]))
            return
        for v in range(left + 1):
            rec(prefix + [v], left - v, slots - 1)

    rec([], k, m)
    return out


_COMP_CACHE = {}


def _composition_table(m, k):
    key = (m, k)
    hit = _COMP_CACHE.get(key)
    if hit is None:
        ks = np.array(enumerate_compositions(m, k), dtype=float).reshape(-1, m)
        logcoef = math.lgamma(k + 1) - np.sum([[math.lgamma(v + 1) for v in row] for row in ks], axis=1)
        hit = (ks, logcoef)
        _COMP_CACHE[key] = hit
    return hit


def propagate_theta(theta: float, k: int) -> float:
    return min(k * theta * (1.0 + 2.0 * theta) ** (k - 1), 2.0)


def propagate(base: MixtureAmbiguitySet, phi, k: int, support_k: ConvexBody) -> MixtureAmbiguitySet:
    """k-step position ambiguity set starting from position ``phi``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ks, logcoef = _composition_table(base.m, k)
    g = base.weights
    with np.errstate(divide="ignore"):
        logw = logcoef + ks @ np.log(g)
    w = np.exp(logw)
    w = w / w.sum()
    mus = np.array([c.mu for c in base.components])
    sig = np.array([c.sigma for c in base.components])
    betas = np.array([c.beta for c in base.components])
    if any(c.eps is None for c in base.components):
        raise MalformedSet("propagation needs scaled-form components")
    gaps = np.array([c.eps - c.beta for c in base.components])
    phi = np.asarray(phi, dtype=float)
    means = phi[None, :] + ks @ mus
    covs = np.tensordot(ks, sig, axes=(1, 0))
    bk = ks @ betas
    ek = bk + gaps.max()
    comps = [BasicAmbiguitySet(support_k, means[j], covs[j], float(bk[j]), eps=float(ek[j])) for j in range(ks.shape[0])]
    th = propagate_theta(base.theta, k)
    # theta stays inside [0, 2]; the bound is vacuous beyond that anyway
    return MixtureAmbiguitySet(w, th, comps, base.fallback)


def propagate_support(phi, w_support: ConvexBody, k: int) -> Box:
    """Position support after k steps: phi plus the k-fold sum of the motion support."""
    box = bounding_box(w_support)
    return Box(np.asarray(phi) + k * box.lo, np.asarray(phi) + k * box.hi)


# ---------------------------------------------------------------------------
# Wasserstein clustering


def _psd_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def _check_psd(S, name):
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, S.T, atol=1e-9 * max(1.0, np.abs(S).max())):
        raise NotPSD(f"{name} is not symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-9 * max(1.0, np.abs(S).max()):
        raise NotPSD(f"{name} is not positive semidefinite")
    return S


def gaussian_w2_squared(mu1, s1, mu2, s2) -> float:
    """Squared 2-Wasserstein distance between two Gaussians."""
    s1 = _check_psd(s1, "sigma1")
    s2 = _check_psd(s2, "sigma2")
    r1 = _psd_sqrt(s1)
    cross = _psd_sqrt(r1 @ s2 @ r1)
    val = np.sum((np.asarray(mu1) - np.asarray(mu2)) ** 2) + np.trace(s1) + np.trace(s2) - 2 * np.trace(cross)
    return float(max(val, 0.0))


def pairwise_w2_squared(mus, sigmas) -> np.ndarray:
    mus = np.asarray(mus, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    roots = _psd_sqrt(sig)
    inner = np.einsum("iab,jbc,icd->ijad", roots, sig, roots)
    ev = np.linalg.eigvalsh(0.5 * (inner + np.swapaxes(inner, -1, -2)))
    tr_cross = np.sqrt(np.clip(ev, 0.0, None)).sum(axis=-1)
    tr = np.trace(sig, axis1=1, axis2=2)
    dmu = np.sum((mus[:, None, :] - mus[None, :, :]) ** 2, axis=-1)
    D = dmu + tr[:, None] + tr[None, :] - 2 * tr_cross
    D = np.maximum(0.5 * (D + D.T), 0.0)
    np.fill_diagonal(D, 0.0)
    return D


def _kmedoids(D, M, rng, iters=50):
    n = D.shape[0]
    # k-means++ style seeding on the distance matrix
    med = [int(rng.integers(n))]
    for _ in range(1, M):
        dmin = D[:, med].min(axis=1)
        p = dmin / dmin.sum() if dmin.sum() > 0 else np.full(n, 1.0 / n)
        med.append(int(rng.choice(n, p=p)))
    med = np.array(sorted(set(med)))
    while med.size < M:
        rest = np.setdiff1d(np.arange(n), med)
        med = np.sort(np.append(med, rest[0]))
    for _ in range(iters):
        lab = np.argmin(D[:, med], axis=1)
        new = med.copy()
        for c in range(M):
            members = np.flatnonzero(lab == c)
            if members.size == 0:
                continue
            cost = D[np.ix_(members, members)].sum(axis=0)
            new[c] = members[np.argmin(cost)]
        if np.array_equal(np.sort(new), np.sort(med)):
            break
        med = np.sort(new)
    lab = np.argmin(D[:, med], axis=1)
    cost = D[np.arange(n), med[lab]].sum()
    return cost, lab


def cluster_components(sets: Sequence[BasicAmbiguitySet], M: int, seed: int = 0, restarts: int = 20) -> List[List[int]]:
    """Partition set indices into at most M groups by k-medoids on W2^2."""
    if M < 1:
        raise ValueError("M must be at least 1")
    n = len(sets)
    if n <= M:
        return [[i] for i in range(n)]
    if M == 1:
        return [list(range(n))]
    D = pairwise_w2_squared([s.mu for s in sets], [s.sigma for s in sets])
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        cost, lab = _kmedoids(D, M, rng)
        if best is None or cost < best[0] - 1e-12:
            best = (cost, lab)
    lab = best[1]
    groups = [list(map(int, np.flatnonzero(lab == c))) for c in range(M)]
    groups = [g for g in groups if g]
    groups.sort(key=lambda g: g[0])
    return groups


# ---------------------------------------------------------------------------
# compression


def _ratio_lp(gamma, theta, group, j, sense):
    """Charnes-Cooper LP for max (sense=-1) or min (sense=+1) of
    gamma_j / sum_{i in group} gamma_i over the TV ball on the simplex."""
    m = gamma.size
    # variables: y (m), t, e (m)
    nv = 2 * m + 1
    c = np.zeros(nv)
    c[j] = sense
    A_eq = np.zeros((2, nv))
    A_eq[0, list(group)] = 1.0
    A_eq[1, :m] = 1.0
    A_eq[1, m] = -1.0
    b_eq = np.array([1.0, 0.0])
    rows = []
    for i in range(m):
        r = np.zeros(nv)
        r[i] = 1.0
        r[m] = -gamma[i]
        r[m + 1 + i] = -1.0
        rows.append(r)
        r = np.zeros(nv)
        r[i] = -1.0
        r[m] = gamma[i]
        r[m + 1 + i] = -1.0
        rows.append(r)
    r = np.zeros(nv)
    r[m + 1:] = 1.0
    r[m] = -theta
    rows.append(r)
    A_ub = np.array(rows)
    b_ub = np.zeros(A_ub.shape[0])
    bounds = [(0, None)] * (m + 1) + [(0, None)] * m
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise InvalidRadius(f"ratio LP failed: {res.message}")
    return float(res.x[j])


def _ratio_closed(gamma, theta, group, j):
    # moving mass inside the group is the cheapest way to shift the ratio;
    # each unit of moved mass costs two units of TV budget
    tot = float(gamma[list(group)].sum())
    a = float(gamma[j])
    if len(group) == 1:
        return 1.0, 1.0
    s = 0.5 * theta
    return min(1.0, (a + s) / tot), max(0.0, (a - s) / tot)


def weight_ratio_bounds(gamma, theta: float, group: Sequence[int], method: str = "lp") -> Tuple[float, float]:
    """(gamma_bar, gamma_breve) for one group.

    gamma_bar is the largest member share of the group mass over the TV
    ball, maximized over members; gamma_breve is the largest deviation of a
    member share from its nominal value.
    """
    if theta < 0:
        raise InvalidRadius("theta must be non-negative")
    gamma = np.asarray(gamma, dtype=float)
    group = list(group)
    if not group:
        raise InvalidGrouping("empty group")
    tot = gamma[group].sum()
    gbar, gbreve = 0.0, 0.0
    for j in group:
        if method == "lp":
            if len(group) == 1:
                hi = lo = 1.0
            else:
                hi = _ratio_lp(gamma, theta, group, j, -1.0)
                lo = _ratio_lp(gamma, theta, group, j, 1.0)
        else:
            hi, lo = _ratio_closed(gamma, theta, group, j)
        nominal = gamma[j] / tot
        gbar = max(gbar, hi)
        gbreve = max(gbreve, hi - nominal, nominal - lo)
    return gbar, max(gbreve, 0.0)


def _check_grouping(grouping, m):
    flat = [i for g in grouping for i in g]
    if any(len(g) == 0 for g in grouping) or sorted(flat) != list(range(m)):
        raise InvalidGrouping("grouping must partition the component indices")


def compress(aset: MixtureAmbiguitySet, grouping: Sequence[Sequence[int]], centered: bool = True,
             method: str = "closed") -> MixtureAmbiguitySet:
    """Merge each group of basic sets into one explicit-form basic set.

    With ``centered`` the weight-deviation term of the merged shape matrix is
    built from member means relative to the merged mean; the deviations of
    the member shares sum to zero, so this is the same bound written in a
    translation-invariant way. ``centered=False`` uses raw member means.
    """
    _check_grouping(grouping, aset.m)
    g = aset.weights
    out_w, comps = [], []
    for group in grouping:
        group = list(group)
        members = [aset.components[j] for j in group]
        gw = g[group]
        tot = gw.sum()
        mu_t = (gw @ np.array([c.mu for c in members])) / tot if tot > 0 else np.mean([c.mu for c in members], axis=0)
        gbar, gbrv = weight_ratio_bounds(g, aset.theta, group, method=method)
        beta_t = sum(gbar * c.beta + gbrv for c in members)
        sig_t = np.zeros_like(members[0].sigma)
        phi = np.zeros_like(members[0].sigma)
        for c in members:
            anchor = c.mu - mu_t if centered else c.mu
            sig_t += gbar * c.sigma + gbrv * np.outer(anchor, anchor)
            eps = c.eps if c.eps is not None else None
            if eps is None:
                # explicit-form member: its second moment bound plays the role of eps*sigma
                second = c.phi
            else:
                second = eps * c.sigma
            dm = c.mu - mu_t
            phi += gbar * (second + 2 * c.beta * c.sigma + 3 * np.outer(dm, dm))
        phi += 4 * beta_t * sig_t
        sig_t = 0.5 * (sig_t + sig_t.T)
        phi = 0.5 * (phi + phi.T)
        out_w.append(tot)
        comps.append(BasicAmbiguitySet(members[0].support, mu_t, sig_t, float(beta_t), phi=phi))
    w = np.array(out_w)
    return MixtureAmbiguitySet(w / w.sum(), aset.theta, comps, aset.fallback)
