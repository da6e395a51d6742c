import math

import numpy as np
import pytest

from cool_drmc.ambiguity import BasicAmbiguitySet, MixtureAmbiguitySet, compress
from cool_drmc.conic import (
    LTI, ConicProgram, PsdBlock, assemble_drcvar_sdp, assemble_mpc_qp, min_bias, qp_kkt_residual, solve,
    write_sdpa,
)
from cool_drmc.errors import MalformedSet
from cool_drmc.geometry import Ball, Box, support_function

from oracles import discrete_cvar, random_instance, random_scaled_set, sample_discrete_member


def lp(c, rows):
    p = ConicProgram()
    x = p.var("x", len(c))
    p.c = list(map(float, c))
    for coef, rhs in rows:
        p.ineq.add(dict(zip(x.tolist(), coef)), rhs)
    return p


def test_trivial_lp():
    rep = solve(lp([1.0], [([-1.0], -1.0)]))
    assert rep.status == "Optimal" and rep.objective == pytest.approx(1.0, abs=1e-7)


def test_psd_2x2():
    p = ConicProgram()
    t = p.var("t")[0]
    p.c[t] = 1.0
    B = PsdBlock(2)
    B.add(0, 0, t, 1.0)
    B.add(1, 1, t, 1.0)
    B.add_const(1, 0, 1.0)
    p.psd.append(B)
    rep = solve(p)
    assert rep.status == "Optimal" and rep.objective == pytest.approx(1.0, abs=1e-7)
    assert rep.max_violation <= 1e-7


def test_infeasible_status():
    rep = solve(lp([1.0], [([-1.0], -1.0), ([1.0], 0.0)]))
    assert rep.status == "Infeasible"


def test_unbounded_is_not_a_crash():
    rep = solve(lp([1.0], [([1.0], 0.0)]))
    assert rep.status in {"NumericalFailure", "Infeasible", "MaxIter"}


def test_maxiter_status():
    p = ConicProgram()
    t = p.var("t")[0]
    p.c[t] = 1.0
    B = PsdBlock(2)
    B.add(0, 0, t, 1.0)
    B.add(1, 1, t, 1.0)
    B.add_const(1, 0, 1.0)
    p.psd.append(B)
    assert solve(p, max_iter=1).status == "MaxIter"


def point_set(p, scale=1e-4, width=1e-6):
    p = np.asarray(p, float)
    c = BasicAmbiguitySet(Box(p - width / 2, p + width / 2), p, scale * np.eye(2), 0.0, phi=scale * np.eye(2))
    return MixtureAmbiguitySet(np.array([1.0]), 0.0, [c])


def test_degenerate_point_support():
    g, rep = min_bias(point_set([2, 0]), np.array([1.0, 0.0]), Ball([0, 0], 0.5), 0.95)
    assert rep.status == "Optimal"
    assert g == pytest.approx(-1.5, abs=1e-2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = rng.normal(size=2) * 3
        h = rng.normal(size=2)
        h /= np.linalg.norm(h)
        obs = Ball([0, 0], rng.uniform(0.1, 1.0))
        g, rep = min_bias(point_set(p), h, obs, float(rng.uniform(0.5, 0.99)))
        assert abs(g - (-h @ p + support_function(obs, -h))) < 1e-2


def test_census_single_component():
    prog = assemble_drcvar_sdp(point_set([2, 0]), np.array([1.0, 0.0]), Ball([0, 0], 0.5), 0.9)
    cen = prog.census()
    # g, z, vartheta, zeta; r1, r2, s, tau, Lambda(3), xi(2), Omega(3), eta(4), lambda(4)
    assert cen["vars"] == 4 + 4 + 3 + 2 + 3 + 4 + 4
    assert cen["psd"] == [2, 3, 3, 3]
    assert cen["eq"] == 1 and cen["ineq"] == 2
    assert cen["nonneg"] == 1 + 2 + 4 + 4


def test_epigraph_coefficient():
    for a in [0.5, 0.9, 0.999, 1 - 1e-6]:
        prog = assemble_drcvar_sdp(point_set([2, 0]), np.array([1.0, 0.0]), Ball([0, 0], 0.5), a)
        A = prog.ineq.matrix(prog.n).toarray()
        th = prog.names["vartheta"][0]
        z = prog.names["z"][0]
        row = A[-1]
        assert row[z] == 1.0
        assert abs(row[th] - 1 / (1 - a)) <= 1e-12 * (1 / (1 - a))
    with pytest.raises(MalformedSet):
        assemble_drcvar_sdp(point_set([2, 0]), np.array([1.0, 0.0, 0.0]), Ball([0, 0], 0.5), 0.9)


def test_program_roundtrip():
    prog = assemble_drcvar_sdp(point_set([2, 0]), np.array([0.6, 0.8]), Ball([0, 0], 0.5), 0.9)
    again = ConicProgram.from_json(prog.to_json())
    assert again.to_json() == prog.to_json()
    assert solve(again) == solve(prog)


def test_sampled_cvar_below_zero_at_optimum():
    rng = np.random.default_rng(1)
    worst = -np.inf
    for _ in range(8):
        aset, center = random_instance(rng)
        h = center / np.linalg.norm(center)
        obs = Ball([0, 0], 0.4)
        alpha = float(rng.uniform(0.8, 0.97))
        g, rep = min_bias(aset, h, obs, alpha)
        assert rep.status == "Optimal"
        so = support_function(obs, -h)
        for _ in range(60):
            atoms, probs = sample_discrete_member(aset, rng)
            worst = max(worst, discrete_cvar(-atoms @ h + so - g, probs, alpha))
    assert worst <= 1e-4


def test_wider_support_never_lowers_bias():
    rng = np.random.default_rng(2)
    for _ in range(5):
        aset, center = random_instance(rng, m=1)
        h = center / np.linalg.norm(center)
        g1, _ = min_bias(aset, h, Ball([0, 0], 0.4), 0.9)
        c = aset.components[0]
        wide = MixtureAmbiguitySet(aset.weights, aset.theta, [BasicAmbiguitySet(
            Box(c.support.lo - 1, c.support.hi + 1), c.mu, c.sigma, c.beta, phi=c.phi)])
        g2, _ = min_bias(wide, h, Ball([0, 0], 0.4), 0.9)
        assert g2 >= g1 - 1e-6


def test_sdp_determinism():
    aset, center = random_instance(np.random.default_rng(3))
    h = center / np.linalg.norm(center)
    a = min_bias(aset, h, Ball([0, 0], 0.4), 0.9)[1]
    b = min_bias(aset, h, Ball([0, 0], 0.4), 0.9)[1]
    assert a == b


def test_sdpa_dump(tmp_path):
    prog = assemble_drcvar_sdp(point_set([2, 0]), np.array([1.0, 0.0]), Ball([0, 0], 0.5), 0.9)
    path = tmp_path / "p.dat-s"
    write_sdpa(prog, str(path))
    lines = path.read_text().splitlines()
    assert int(lines[0]) == prog.n
    nblocks = int(lines[1])
    struct = list(map(int, lines[2].split()))
    assert len(struct) == nblocks and struct[-1] < 0
    assert len(lines[3].split()) == prog.n
    for ln in lines[4:]:
        m, b, i, j, _ = ln.split()
        assert 0 <= int(m) <= prog.n and 1 <= int(b) <= nblocks and int(i) <= int(j)


# ---------------------------------------------------------------------------
# QP


def double_integrator(dt=0.1):
    A = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1.0]])
    B = np.array([[0.5 * dt**2, 0], [0, 0.5 * dt**2], [dt, 0], [0, dt]])
    C = np.hstack([np.eye(2), np.zeros((2, 2))])
    return LTI(A, B, C)


def test_qp_on_reference_is_zero():
    sys = double_integrator()
    K = 5
    x0 = np.array([1.0, 2.0, 0.0, 0.0])
    ref = np.tile(x0, (K + 1, 1))
    qp = assemble_mpc_qp(sys, x0, ref, np.zeros((K, 2)), np.eye(4), np.eye(2), np.eye(4))
    rep = solve(qp.prog)
    assert rep.status == "Optimal"
    assert np.abs(rep.x).max() < 1e-7 and abs(rep.objective) < 1e-9


def test_qp_one_step_least_squares():
    sys = double_integrator()
    x0 = np.array([0.0, 0.0, 1.0, -0.5])
    target = np.array([0.3, 0.1, 0.0, 0.0])
    ref = np.vstack([x0, target])
    Q, R, P = np.eye(4), 0.1 * np.eye(2), np.diag([2.0, 2.0, 1.0, 1.0])
    qp = assemble_mpc_qp(sys, x0, ref, np.zeros((1, 2)), Q, R, P)
    rep = solve(qp.prog)
    # min |A x0 + B u - target|_P^2 + |u|_R^2
    u_ls = np.linalg.solve(sys.B.T @ P @ sys.B + R, sys.B.T @ P @ (target - sys.A @ x0))
    np.testing.assert_allclose(rep.x, u_ls, atol=1e-6)
    r = sys.A @ x0 + sys.B @ u_ls - target
    assert rep.objective == pytest.approx(r @ P @ r + u_ls @ R @ u_ls, abs=1e-6)


def test_hyperplane_row_becomes_active():
    sys = double_integrator()
    K = 4
    x0 = np.zeros(4)
    goal = np.array([1.0, 0.0, 0.0, 0.0])
    ref = np.vstack([x0] + [goal] * K)
    args = (sys, x0, ref, np.zeros((K, 2)), np.eye(4), 0.01 * np.eye(2), np.eye(4))
    free = solve(assemble_mpc_qp(*args).prog)
    y2 = assemble_mpc_qp(*args).states(free.x)[2][:2]
    # forbid x > y2_x/2 at step 2
    const = -0.5 * y2[0]
    qp = assemble_mpc_qp(*args, hyperplanes=[(2, np.array([1.0, 0.0]), const)])
    rep = solve(qp.prog)
    assert rep.status == "Optimal"
    assert qp.states(rep.x)[2][0] <= 0.5 * y2[0] + 1e-7
    a, _ = rep.rows["ineq"]
    assert rep.dual[a + qp.hp_rows[0]] > 1e-6
    assert qp_kkt_residual(qp.prog, rep) < 1e-6


def test_qp_kkt_random():
    rng = np.random.default_rng(4)
    sys = double_integrator()
    K = 6
    worst = 0.0
    for _ in range(100):
        x0 = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-0.3, 0.3, 2)])
        ref = np.vstack([x0] + [np.concatenate([rng.uniform(-2, 2, 2), [0, 0]])] * K)
        h = rng.normal(size=2)
        h /= np.linalg.norm(h)
        # keep the instance feasible: the plane leaves room around the start
        hp = [(k, h, -(h @ x0[:2]) - 0.5) for k in range(1, K)]
        qp = assemble_mpc_qp(sys, x0, ref, np.zeros((K, 2)), np.eye(4), 0.1 * np.eye(2), 2 * np.eye(4),
                             x_box=(np.full(4, -10.0), np.full(4, 10.0)), u_box=(np.full(2, -5.0), np.full(2, 5.0)),
                             hyperplanes=hp, terminal_eq=(np.hstack([np.zeros((2, 2)), np.eye(2)]), np.zeros(2)))
        rep = solve(qp.prog)
        assert rep.status == "Optimal"
        worst = max(worst, qp_kkt_residual(qp.prog, rep))
    assert worst <= 1e-6


def test_qp_determinism_and_dimension_check():
    sys = double_integrator()
    x0 = np.zeros(4)
    ref = np.ones((4, 4))
    a = solve(assemble_mpc_qp(sys, x0, ref, np.zeros((3, 2)), np.eye(4), np.eye(2), np.eye(4)).prog)
    b = solve(assemble_mpc_qp(sys, x0, ref, np.zeros((3, 2)), np.eye(4), np.eye(2), np.eye(4)).prog)
    assert a == b
    with pytest.raises(MalformedSet):
        assemble_mpc_qp(sys, x0, ref, np.zeros((2, 2)), np.eye(4), np.eye(2), np.eye(4))


@pytest.mark.parametrize("var", [1e-6, 1e-8, 1e-10])
def test_moment_only_bound_and_translation(var):
    # wide support, exact mean, variance var: the worst-case CVaR adds sqrt(a/(1-a)) * sd
    O = Ball([0, 0], 0.5)
    out = []
    for p in (np.array([3.0, 1.0]), np.array([30.0, 10.0])):
        h = p / np.linalg.norm(p)
        c = BasicAmbiguitySet(Box(p - 1, p + 1), p, var * np.eye(2), 0.0, phi=var * np.eye(2))
        g, rep = min_bias(MixtureAmbiguitySet(np.array([1.0]), 0.0, [c]), h, O, 0.9)
        out.append(g - (-h @ p + 0.5))
    assert out[0] == pytest.approx(3 * math.sqrt(var), rel=0.3, abs=2e-5)
    assert out[0] == pytest.approx(out[1], abs=1e-7)


def test_min_bias_matches_direct_assembly():
    # centring and trimming are exact rewrites: compare with the raw program
    rng = np.random.default_rng(5)
    O = Ball([0, 0], 0.4)
    for _ in range(8):
        aset = random_scaled_set(rng, 2)
        h = rng.normal(size=2)
        h /= np.linalg.norm(h)
        g, rep = min_bias(aset, h, O, 0.9)
        raw = assemble_drcvar_sdp(aset.explicit(), h, O, 0.9)
        rr = solve(raw)
        assert rep.status == rr.status == "Optimal"
        assert g == pytest.approx(float(raw.value(rr.x, "g")[0]), abs=1e-5)
