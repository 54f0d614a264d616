import json

import numpy as np
import pytest

import rovernav.sim as sim
from conftest import flat_terrain
from rovernav.global_planner import UnreachableError
from rovernav.kinematics import RoverState
from rovernav.sim import RunResult, SimConfig, check_collision, run_scenario, segment_contacts
from rovernav.terrain import RockInstance, ScenarioSpec

FAST = SimConfig(image_h=24, image_w=32, arc_weights=(1.0, 1.0, 2.0))


def flat_spec(start=(5.0, 20.0), goal=(55.0, 20.0), **kw):
    return ScenarioSpec(seed=0, extent=(60.0, 40.0), start=start, goal=goal, res_m=0.5, **kw)


def test_short_flat_run():
    r = run_scenario(flat_spec(goal=(10.0, 20.0)), "baseline", FAST)
    m = r.metrics
    assert m.outcome == "reached" and m.n_collisions == 0 and m.total_path_cost == pytest.approx(0)


@pytest.mark.parametrize("mode", ["baseline", "replan"])
def test_flat_run_reaches_straight(mode):
    r = run_scenario(flat_spec(), mode, FAST)
    m = r.metrics
    assert m.outcome == "reached" and m.n_collisions == 0
    ys = np.array([row[2] for row in r.trace])
    assert np.allclose(ys, 20.0, atol=1e-9)
    assert m.total_distance == pytest.approx(50.0 - 10.0, abs=3.5 * 0.25)


def test_deterministic():
    a = run_scenario(flat_spec(roughness=0.3), "replan", FAST)
    b = run_scenario(flat_spec(roughness=0.3), "replan", FAST)
    assert a.trace_csv() == b.trace_csv() and a.metrics_json() == b.metrics_json()


def test_distance_is_sum_of_substeps():
    r = run_scenario(flat_spec(roughness=0.3, goal=(50.0, 35.0)), "replan", FAST)
    xy = np.array([(5.0, 20.0)] + [(row[1], row[2]) for row in r.trace])
    total = np.hypot(*np.diff(xy, axis=0).T).sum()
    assert r.metrics.total_distance == pytest.approx(total, rel=1e-6)


def test_metrics_nonnegative_and_fields():
    r = run_scenario(flat_spec(roughness=0.3), "replan", FAST)
    d = json.loads(r.metrics_json())
    for k in ("total_path_cost", "n_collisions", "total_time", "total_distance"):
        assert d[k] >= 0
    assert d["outcome"] in ("reached", "stuck", "timeout") and d["seed"] == 0
    assert r.trace_csv().splitlines()[0] == "t,x,y,theta,cycle_id,step_cost,collision_flag"


def test_write(tmp_path):
    r = RunResult(sim.RunMetrics(outcome="reached"), [(0.25, 1.0, 2.0, 0.0, 0, 0.5, 0)])
    r.write(tmp_path / "t.csv", tmp_path / "m.json")
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "0.25,1.000000,2.000000,0.000000,0,0.500000,0"
    assert json.loads((tmp_path / "m.json").read_text())["outcome"] == "reached"


class TestCollision:
    def test_no_rocks(self):
        assert not check_collision(RoverState(3, 3), flat_terrain()).contact

    def test_medium_center_blocks(self):
        t = flat_terrain(rocks=[RockInstance((5.0, 5.0), 0.15, 0.4, "medium")])
        rep = check_collision(RoverState(5.0, 5.0), t)
        assert rep.contact and rep.blocking and rep.rocks == (0,)

    def test_short_rock_ignored(self):
        t = flat_terrain(rocks=[RockInstance((5.0, 5.0), 0.15, 0.1, "small")])
        assert not check_collision(RoverState(5.0, 5.0), t).contact

    def test_segment_contacts(self):
        c = np.array([[5.0, 0.09], [5.0, 0.2]])
        hit, entry = segment_contacts((0, 0), (10, 0), c, np.array([0.1, 0.1]))
        assert list(hit) == [True, False]
        assert entry[0] == pytest.approx((5.0 - np.sqrt(0.1 ** 2 - 0.09 ** 2)) / 10, abs=1e-9)

    def _graze(self, rocks, **cfg):
        spec = flat_spec()
        t = flat_terrain(60, 40, rocks=rocks)  # rocks invisible to the sensor
        c = SimConfig(**{**FAST.__dict__, **cfg})
        return run_scenario(spec, "baseline", c, terrain=t)

    def test_grazing_small_rock_counts_once(self):
        eps = 1e-3
        r = self._graze([RockInstance((20.3, 20.0 + 0.1 - eps), 0.1, 0.2, "small")])
        assert r.metrics.n_collisions == 1 and r.metrics.outcome == "reached"
        flags = [row[6] for row in r.trace]
        assert sum(flags) >= 1

    def test_missing_small_rock_no_collision(self):
        r = self._graze([RockInstance((20.3, 20.0 + 0.1 + 1e-3), 0.1, 0.2, "small")])
        assert r.metrics.n_collisions == 0

    def test_two_rocks_two_collisions(self):
        r = self._graze([RockInstance((20.3, 20.05), 0.1, 0.2, "small"),
                         RockInstance((30.1, 19.95), 0.1, 0.2, "small")])
        assert r.metrics.n_collisions == 2

    def test_medium_rock_blocks_and_sticks(self):
        r = self._graze([RockInstance((20.0, 20.0), 0.15, 0.4, "medium")])
        m = r.metrics
        assert m.n_blocking >= 1 and m.outcome == "stuck"
        assert max(row[1] for row in r.trace) == pytest.approx(20.0 - 0.15, abs=1e-6)


def test_timeout():
    r = run_scenario(flat_spec(), "baseline", SimConfig(**{**FAST.__dict__, "timeout_s": 5.0}))
    assert r.metrics.outcome == "timeout" and r.metrics.total_time == 5.0


def test_unreachable_at_start_raises(monkeypatch):
    def boom(*a, **k):
        raise UnreachableError("blocked")
    monkeypatch.setattr(sim, "plan_global", boom)
    with pytest.raises(UnreachableError):
        run_scenario(flat_spec(), "replan", FAST)


def test_later_unreachable_keeps_path(monkeypatch):
    real = sim.plan_global
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        if len(calls) == 3:
            raise UnreachableError("blocked")
        return real(*a, **k)
    monkeypatch.setattr(sim, "plan_global", flaky)
    r = run_scenario(flat_spec(), "replan", FAST)
    assert r.metrics.unreachable_cycles == 1 and r.metrics.outcome == "reached"


def test_replan_snapshots_respect_provenance(tmp_path):
    spec = flat_spec(roughness=0.3, goal=(50.0, 30.0))
    run_scenario(spec, "replan", FAST, dump_dir=tmp_path)
    snaps = sorted(tmp_path.glob("global_*.csv"))
    assert len(snaps) >= 2 and (tmp_path / "arcs.csv").exists()
    prev_obs = None
    for p in snaps:
        rows = np.genfromtxt(p, delimiter=",", skip_header=1, dtype=None, encoding=None)
        costs = np.array([r[4] for r in rows], float)
        obs = np.array([r[5] == "observed" for r in rows])
        assert np.all(costs >= 0) and np.all(np.isfinite(costs))
        if prev_obs is not None:
            assert np.all(obs[prev_obs])  # observed cells stay observed
        prev_obs = obs


def test_config_from_dict():
    c = SimConfig.from_dict({"arc_weights": [1, 2, 3], "image_h": 10})
    assert c.arc_weights == (1.0, 2.0, 3.0) and c.image_h == 10
    with pytest.raises(ValueError):
        SimConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        run_scenario(flat_spec(), "bogus", FAST)
