import json

import numpy as np
import pytest

from cool_drmc import controller as ctl
from cool_drmc.errors import ScenarioError
from cool_drmc.sim import (
    SCHEMA_ID, builtin_scenario, make_world, observable, parse_scenario, reference_path, run_episode,
    sample_motion, scenario_from_dict, scenario_to_dict,
)


def ball(r):
    return {"type": "ball", "center": [0.0, 0.0], "radius": r}


def box(hx, hy):
    return {"type": "box", "lo": [-hx, -hy], "hi": [hx, hy]}


def dyn(oid, start, mean=(0.0, 0.0), cov=1e-4, support=0.1, offline=0, r=0.3):
    return {"id": oid, "body": ball(r), "start": list(start),
            "support": {"lo": [-support, -support], "hi": [support, support]},
            "schedule": [{"start": 0, "end": None, "weights": [1.0], "means": [list(mean)],
                          "covs": [[[cov, 0.0], [0.0, cov]]]}],
            "offline_samples": offline}


def wall(oid, start, hx, hy):
    return {"id": oid, "body": box(hx, hy), "start": list(start)}


def scen(robots, obstacles, T=10, **kw):
    d = {"schema": SCHEMA_ID, "name": "t", "dt": 0.2, "T": T, "seed": 0, "variant": "COOL",
         "controller": {"M": 3, "dpmm_budget": 8}, "robots": robots, "obstacles": obstacles}
    d.update(kw)
    return scenario_from_dict(d)


def robot(rid, start, waypoints, **kw):
    r = {"id": rid, "radius": 0.3, "start": list(start), "waypoints": [list(w) for w in waypoints], "K": 5}
    r.update(kw)
    return r


# observation


def test_observable_empty_scene():
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (3, 0))])
    assert observable(make_world(sc), "a", "o")


def test_hidden_behind_wall():
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (4, 0)), wall("w", (2, 0), 0.2, 2.0)])
    assert not observable(make_world(sc), "a", "o")


def test_half_exposed_past_wall_edge():
    # the wall covers y <= 0.05, the obstacle spans y in [-0.3, 0.3]
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (4, 0)), wall("w", (2, -1.95), 0.2, 2.0)])
    assert observable(make_world(sc), "a", "o")


def test_robots_block_sight():
    sc = scen([robot("a", (0, 0), []), robot("b", (2, 0), [])], [dyn("o", (4, 0), r=0.2)])
    w = make_world(sc)
    assert not observable(w, "a", "o")
    assert observable(w, "b", "o")


# motion


def test_zero_motion_gmm_is_static():
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (3, 0), cov=0.0)])
    o = sc.obstacles[0]
    rng = np.random.default_rng(0)
    assert all(np.array_equal(sample_motion(o, t, rng), [0, 0]) for t in range(20))


def test_seeded_draws_reproducible():
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (3, 0), mean=(0.02, 0.0), cov=1e-3)])
    o = sc.obstacles[0]
    a = [sample_motion(o, t, np.random.default_rng(5)) for t in range(5)]
    b = [sample_motion(o, t, np.random.default_rng(5)) for t in range(5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sample_mean_within_clt_band():
    cov = 1e-3
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (3, 0), mean=(0.02, -0.01), cov=cov, support=1.0)])
    o = sc.obstacles[0]
    rng = np.random.default_rng(1)
    n = 10_000
    x = np.array([sample_motion(o, 0, rng) for _ in range(n)])
    assert np.all(np.abs(x.mean(axis=0) - [0.02, -0.01]) <= 3 * np.sqrt(cov / n))


def test_draws_stay_in_support():
    sc = scen([robot("a", (0, 0), [])], [dyn("o", (3, 0), mean=(0.05, 0.0), cov=0.01, support=0.1)])
    o = sc.obstacles[0]
    rng = np.random.default_rng(2)
    x = np.array([sample_motion(o, 0, rng) for _ in range(500)])
    assert np.all(np.abs(x) <= 0.1 + 1e-15)


def test_reference_path_speed_and_hold():
    ref = reference_path([0, 0], [[1, 0], [1, 1]], 0.5, 40, 0.2)
    steps = np.linalg.norm(np.diff(ref[:, :2], axis=0), axis=1)
    assert np.allclose(steps[:19], 0.1)
    assert np.allclose(ref[-1], [1, 1, 0, 0])


# exchange and episodes


def two_robot_scene(variant="COOL", T=14):
    # b starts behind a wall and walks out of its shadow
    robots = [robot("a", (0, 2), []), robot("b", (0, -2), [[0.0, -0.4]], speed=0.6)]
    obstacles = [dyn("o", (4, -2), mean=(0.0, 0.0), cov=1e-4, support=0.05),
                 wall("w", (2, -2), 0.2, 0.6)]
    return scen(robots, obstacles, T=T, variant=variant)


def test_pull_gives_identical_count_on_first_sight():
    res = run_episode(two_robot_scene())
    assert not res.failed, res.error
    tr = {(r["robot"], r["t"]): r for r in res.traces}
    first_b = min(t for (rid, t), r in tr.items() if rid == "b" and "o" in r["observed"])
    assert first_b > 0
    pulls = [m for m in res.messages if m["kind"] == "pull" and m["t"] == first_b]
    assert pulls and pulls[0]["from"] == "a"
    assert tr[("b", first_b)]["ndat"]["o"] == tr[("a", first_b - 1)]["ndat"]["o"]


def test_message_log_census():
    sc = two_robot_scene()
    res = run_episode(sc)
    counts = [m for m in res.messages if m["kind"] == "count"]
    pulls = [m for m in res.messages if m["kind"] == "pull"]
    assert len(counts) == 2 * 1 * sc.T
    assert len(res.messages) == len(counts) + len(pulls)


def test_ol_never_pulls_and_offl_is_frozen():
    res = run_episode(two_robot_scene("OL"))
    assert not [m for m in res.messages if m["kind"] == "pull"]
    sc = two_robot_scene("OFFL")
    d = scenario_to_dict(sc)
    d["obstacles"][0]["offline_samples"] = 7
    res = run_episode(scenario_from_dict(d))
    assert {r["ndat"]["o"] for r in res.traces} == {7}


@pytest.mark.parametrize("variant", ["COOL", "OL"])
def test_observation_conservation(variant):
    sc = two_robot_scene(variant)
    res = run_episode(sc)
    seen = {}
    for r in sorted(res.traces, key=lambda r: r["t"]):
        seen.setdefault(r["robot"], []).append(r)
    for rid, recs in seen.items():
        n = 0
        prev_obs = False
        for r in recs:
            pull = [m for m in res.messages if m["kind"] == "pull" and m["to"] == rid and m["t"] == r["t"]]
            if pull:
                n = pull[0]["count"]
            obs = "o" in r["observed"]
            if obs and prev_obs:
                n += 1
            prev_obs = obs
            assert r["ndat"]["o"] == n


def test_obstacle_free_tracking_converges():
    sc = scen([robot("a", (0, 0.3), [[20, 0]], speed=0.4, ref_start=[0, 0], terminal="none", K=8)], [], T=120)
    res = run_episode(sc)
    err = [np.linalg.norm(np.asarray(r["x"][:2]) - r["ref_y"]) for r in res.traces]
    assert max(err[60:]) < 1e-2


def test_far_static_obstacle_changes_nothing():
    base = scen([robot("a", (0, 0), [[3, 0]], speed=0.5)], [], T=25)
    far = scen([robot("a", (0, 0), [[3, 0]], speed=0.5)], [wall("w", (40, 40), 1, 1)], T=25)
    r0, r1 = run_episode(base), run_episode(far)
    x0 = np.array([r["x"] for r in r0.traces])
    x1 = np.array([r["x"] for r in r1.traces])
    assert np.allclose(x0, x1, atol=1e-7)


def test_episode_determinism():
    sc = builtin_scenario("minimal")
    a, b = run_episode(sc), run_episode(sc)
    assert a.trace_lines(timing=False) == b.trace_lines(timing=False)
    assert a.messages == b.messages


def test_controller_panic_becomes_failed_report(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(ctl, "step", boom)
    res = run_episode(builtin_scenario("minimal"))
    assert res.failed and "boom" in res.error


def test_collision_metric_consistency():
    # two robots driven head-on with no room to stop register a collision
    sc = scen([robot("a", (0, 0), [[2, 0]], speed=1.0), robot("b", (0.5, 0), [[-2, 0]], speed=1.0)], [], T=5)
    res = run_episode(sc)
    m = res.metrics
    assert (m["min_clearance"] < 0) == (m["collisions"] > 0)
    res = run_episode(builtin_scenario("minimal"))
    m = res.metrics
    assert (m["min_clearance"] < 0) == (m["collisions"] > 0)


def test_crossing_committed_trajectories_disjoint():
    sc = builtin_scenario("crossing").with_overrides(T=40)
    res = run_episode(sc)
    assert not res.failed
    assert res.metrics["robot_collisions"] == 0
    radii = {r.id: r.radius for r in sc.robots}
    by_t = {}
    for r in res.traces:
        by_t.setdefault(r["t"], {})[r["robot"]] = r
    for t, recs in by_t.items():
        if t == 0 or any(r["infeasible"] for r in recs.values()):
            continue
        ids = sorted(recs)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                ya, yb = np.array(recs[a]["committed"]), np.array(recs[b]["committed"])
                gap = np.linalg.norm(ya - yb, axis=1) - radii[a] - radii[b]
                assert gap[1:].min() >= -1e-6, (t, a, b)


# scenario files


def test_scenario_round_trip():
    sc = builtin_scenario("crossing")
    again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
    assert json.dumps(scenario_to_dict(again)) == json.dumps(scenario_to_dict(sc))


@pytest.mark.parametrize("mutate,line_key", [
    (lambda d: d["robots"][0].pop("radius"), '"id": "r0"'),
    (lambda d: d["robots"][0].__setitem__("start", [0, "x"]), '"start"'),
    (lambda d: d.__setitem__("T", 0), '"T"'),
    (lambda d: d["obstacles"][0]["schedule"][0].__setitem__("weights", [0.5]), '"weights"'),
])
def test_line_anchored_errors(mutate, line_key):
    d = scenario_to_dict(builtin_scenario("minimal"))
    mutate(d)
    text = json.dumps(d, indent=2)
    with pytest.raises(ScenarioError) as ei:
        parse_scenario(text)
    line = ei.value.line
    assert line is not None and line >= 1
    # the reported line lies inside the offending object or on the offending key
    lines = text.splitlines()
    assert any(line_key.split(":")[0] in l for l in lines[max(0, line - 3):line + 2])


def test_bad_json_reports_line():
    with pytest.raises(ScenarioError) as ei:
        parse_scenario('{\n  "schema": "x",\n  oops\n}')
    assert ei.value.line == 3


def test_wrong_schema_rejected():
    d = scenario_to_dict(builtin_scenario("minimal"))
    d["schema"] = "other"
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)
