import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import flat_terrain
from rovernav.clustering import ClusterMap
from rovernav.features import FeatureConfig, TopDownImage, extract_features
from rovernav.fusion import (
    INTERPOLATED, OBSERVED, PRIOR, CostSample, GlobalCostMap, collect_cost_samples, fit_krr,
    fit_krr_arrays, init_global_costmap, update_global_costmap,
)
from rovernav.kinematics import RoverState, body_to_world
from rovernav.sensor import LocalCostMap
from rovernav.terrain import C_MAX


def oracle_predict(X, c, lam, Xq):
    """Dense primal normal equations on RMS-scaled features."""
    rms = np.sqrt((X ** 2).mean(0))
    s = np.where(rms > 0, rms, 1.0)
    Z = X / s
    w = np.linalg.solve(Z.T @ Z + lam * np.eye(X.shape[1]), Z.T @ c)
    return (Xq / s) @ w


def oracle_lstsq(X, c, lam, Xq):
    """Ridge as an augmented least-squares problem (better conditioned)."""
    rms = np.sqrt((X ** 2).mean(0))
    s = np.where(rms > 0, rms, 1.0)
    Z = X / s
    d = X.shape[1]
    A = np.vstack([Z, np.sqrt(lam) * np.eye(d)])
    w = np.linalg.lstsq(A, np.r_[c, np.zeros(d)], rcond=None)[0]
    return (Xq / s) @ w


def image(lum, m_per_px=0.5):
    lum = np.asarray(lum, float)
    return TopDownImage(np.repeat(lum[..., None], 3, 2), np.zeros(lum.shape), m_per_px)


def samples_at(cells, costs, feats, t=0.0):
    return [CostSample((j + 0.5, i + 0.5), float(c), np.asarray(f, float), t)
            for (i, j), c, f in zip(cells, costs, feats)]


class TestInit:
    def test_uniform(self):
        g = init_global_costmap(image(np.full((20, 20), 0.4)), a=0.5, b=0.0)
        assert g.shape == (10, 10)
        assert np.allclose(g.costs, 0.2) and np.all(g.flags == PRIOR)

    def test_a_zero(self):
        g = init_global_costmap(image(np.random.default_rng(0).uniform(size=(8, 8))), a=0, b=0.7)
        assert np.all(g.costs == 0.7)

    def test_two_tone(self):
        lum = np.zeros((20, 20))
        lum[:, 10:] = 1.0
        g = init_global_costmap(image(lum), a=2.0, b=0.1)
        assert np.allclose(g.costs[:, :5], 0.1) and np.allclose(g.costs[:, 5:], 2.1)

    def test_negative_params(self):
        with pytest.raises(ValueError):
            init_global_costmap(image(np.zeros((4, 4))), a=-1)


class TestCollect:
    def test_transforms(self):
        assert np.allclose(body_to_world(RoverState(0, 0, 0), [(3.5, 0)]), [[3.5, 0]])
        assert np.allclose(body_to_world(RoverState(10, 5, np.pi / 2), [(2, 0)]), [[10, 7]])

    def test_one_sample_per_observed_cell(self):
        t = flat_terrain(60, 60)
        obs = np.zeros((20, 40), bool)
        obs[3, 20] = obs[5, 17] = True
        costs = np.where(obs, 0.8, 0.0)
        pose = RoverState(10.0, 5.0, np.pi / 2, 3.0)
        s = collect_cost_samples(LocalCostMap(costs, obs, pose, 20), t)
        assert len(s) == 2
        pos = sorted(p.position for p in s)
        expect = sorted(map(tuple, body_to_world(pose, [(3.5, 0.5), (5.5, -2.5)])))
        assert np.allclose(pos, expect)
        assert all(x.cost == 0.8 and x.timestamp == 3.0 and x.feature.shape == (64,) for x in s)

    def test_empty_and_dropped(self):
        t = flat_terrain(60, 60)
        pose = RoverState(10.0, 10.0, 0.0)
        none = LocalCostMap(np.zeros((20, 40)), np.zeros((20, 40), bool), pose, 20)
        assert collect_cost_samples(none, t) == []
        obs = np.zeros((20, 40), bool)
        obs[0, 0] = True  # local (0.5, -19.5) -> world y < 0: patch exits
        lcm = LocalCostMap(np.zeros((20, 40)), obs, pose, 20)
        assert collect_cost_samples(lcm, t) == []


class TestFit:
    def test_zero_targets(self, rng):
        m = fit_krr_arrays(rng.normal(size=(10, 4)), np.zeros(10))
        assert np.all(m.w == 0) and np.all(m.predict(rng.normal(size=(3, 4))) == 0)

    def test_scalar_closed_form(self):
        lam = 1e-9
        m = fit_krr_arrays([[1.0], [2.0]], [2.0, 4.0], lam, standardize=False)
        assert m.w[0] == pytest.approx(10 / (5 + lam), rel=1e-12)

    def test_large_lambda(self, rng):
        X = rng.normal(size=(20, 8))
        m = fit_krr_arrays(X, rng.uniform(1, 2, 20), 1e9)
        assert np.linalg.norm(m.w) < 1e-6
        assert np.abs(m.predict(X)).max() < 1e-5

    @pytest.mark.parametrize("lam", [0.0, -1.0])
    def test_bad_lambda(self, lam):
        with pytest.raises(ValueError):
            fit_krr_arrays(np.ones((2, 2)), [1, 2], lam)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            fit_krr_arrays([[1.0, np.nan]], [1.0])
        with pytest.raises(ValueError):
            fit_krr_arrays([[1.0, 2.0]], [np.inf])

    def test_from_samples(self, rng):
        X = rng.normal(size=(12, 6))
        c = rng.uniform(size=12)
        s = [CostSample((0, 0), ci, xi) for xi, ci in zip(X, c)]
        assert np.allclose(fit_krr(s, 0.1).w, fit_krr_arrays(X, c, 0.1).w)
        with pytest.raises(ValueError):
            fit_krr([])

    @pytest.mark.parametrize("n", [1, 5, 40, 63, 64, 65, 200])
    @pytest.mark.parametrize("lam", [1e-3, 1.0, 1e3])
    def test_matches_oracles(self, rng, n, lam):
        X = rng.normal(size=(n, 64)) + rng.normal(size=64)
        c = rng.uniform(0, 3, n)
        Xq = np.vstack([X, rng.normal(size=(10, 64))])
        pred = fit_krr_arrays(X, c, lam).predict(Xq)
        for oracle in (oracle_predict, oracle_lstsq):
            ref = oracle(X, c, lam, Xq)
            assert np.max(np.abs(pred - ref)) <= 1e-8 * max(np.max(np.abs(ref)), 1e-300)

    def test_interpolation_limit(self, rng):
        X = rng.normal(size=(30, 64))
        c = rng.uniform(0.5, 2, 30)
        pred = fit_krr_arrays(X, c, 1e-8).predict(X)
        assert np.allclose(pred, c, rtol=1e-4, atol=0)

    def test_zero_column_scale_one(self, rng):
        X = rng.normal(size=(5, 3))
        X[:, 1] = 0
        m = fit_krr_arrays(X, rng.uniform(size=5))
        assert m.scale[1] == 1.0 and np.all(np.isfinite(m.w))


def two_cluster_setup(d=4):
    labels = np.zeros((6, 8), dtype=np.intp)
    labels[:, 4:] = 1
    g = GlobalCostMap(np.full((6, 8), 0.3), np.zeros((6, 8), np.int8))
    feats = np.ones((6, 8, d))
    feats[:, 4:] *= 2.0
    return g, ClusterMap(labels), feats


class TestUpdate:
    def test_no_samples(self):
        g, cm, feats = two_cluster_setup()
        out = update_global_costmap(g, cm, [], cell_features=feats)
        assert np.array_equal(out.costs, g.costs) and np.array_equal(out.flags, g.flags)
        assert out is not g

    def test_misaligned(self):
        g, cm, _ = two_cluster_setup()
        with pytest.raises(ValueError):
            update_global_costmap(g, ClusterMap(np.zeros((3, 3), np.intp)), [])

    @pytest.mark.parametrize("lam", [1e-3, 1.0, 50.0])
    def test_uniform_cluster_shrinkage(self, lam):
        g, cm, feats = two_cluster_setup()
        cells = [(i, j) for i in range(3) for j in range(2)]
        c = 2.0
        s = samples_at(cells, [c] * 6, [feats[x] for x in cells])
        out = update_global_costmap(g, cm, s, lam, feats)
        n, phi2 = 6, 4.0  # RMS-scaled constant features are all ones
        expect = c * n * phi2 / (n * phi2 + lam)
        interp = out.flags == INTERPOLATED
        assert np.allclose(out.costs[interp], expect, rtol=1e-12)
        assert np.all(out.costs[out.flags == OBSERVED] == c)
        assert np.all(out.costs[:, 4:] == 0.3)

    def test_small_lambda_exact(self):
        g, cm, feats = two_cluster_setup()
        cells = [(0, k) for k in range(4)] + [(1, 0)]
        s = samples_at(cells, [1.5] * 5, [feats[x] for x in cells])
        out = update_global_costmap(g, cm, s, 1e-12, feats)
        assert np.allclose(out.costs[:, :4], 1.5, rtol=1e-12)

    def test_below_k_min_only_observations(self):
        g, cm, feats = two_cluster_setup()
        s = samples_at([(0, 0), (1, 1)], [4.0, 5.0], feats[0, :2])
        out = update_global_costmap(g, cm, s, cell_features=feats)
        assert out.costs[0, 0] == 4.0 and out.costs[1, 1] == 5.0
        assert (out.flags == OBSERVED).sum() == 2 and (out.flags == INTERPOLATED).sum() == 0

    def test_cluster_containment(self, rng):
        g, cm, _ = two_cluster_setup(d=5)
        feats = rng.normal(size=(6, 8, 5))
        cells = [(i, j) for i in range(6) for j in range(3)]
        s = samples_at(cells, rng.uniform(0, 9, len(cells)), [feats[c] for c in cells])
        out = update_global_costmap(g, cm, s, cell_features=feats)
        assert out.costs[:, 4:].tobytes() == g.costs[:, 4:].tobytes()
        assert np.all(out.flags[:, 4:] == PRIOR)

    def test_latest_observation_wins(self):
        g, cm, feats = two_cluster_setup()
        s = (samples_at([(2, 2)], [1.0], feats[0, :1], t=0.0)
             + samples_at([(2, 2), (2, 2)], [3.0, 5.0], feats[0, :2], t=5.0))
        out = update_global_costmap(g, cm, s, cell_features=feats)
        assert out.costs[2, 2] == 4.0 and out.flags[2, 2] == OBSERVED

    def test_observed_not_overwritten_later(self, rng):
        g, cm, feats = two_cluster_setup()
        first = samples_at([(0, 0)], [7.0], feats[0, :1], t=0.0)
        g1 = update_global_costmap(g, cm, first, cell_features=feats)
        later = samples_at([(i, 1) for i in range(6)], [0.1] * 6, feats[:, 1], t=5.0)
        g2 = update_global_costmap(g1, cm, later, cell_features=feats)
        assert g2.costs[0, 0] == 7.0 and g2.flags[0, 0] == OBSERVED

    def test_clamped(self):
        g, cm, _ = two_cluster_setup(d=1)
        feats = np.arange(48, dtype=float).reshape(6, 8, 1) - 20.0
        cells = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]
        s = samples_at(cells, [10.0, 10.0, 10.0, 10.0, 10.0], [feats[c] for c in cells])
        out = update_global_costmap(g, cm, s, cell_features=feats)
        assert out.costs.min() >= 0 and out.costs.max() <= C_MAX
        assert np.any(out.costs[:, :4] == 0.0)  # negative predictions clipped

    def test_permuting_cluster_ids(self, rng):
        g, cm, _ = two_cluster_setup(d=3)
        feats = rng.normal(size=(6, 8, 3))
        cells = [(i, j) for i in range(6) for j in (0, 5)]
        s = samples_at(cells, rng.uniform(0, 2, 12), [feats[c] for c in cells])
        a = update_global_costmap(g, cm, s, cell_features=feats)
        b = update_global_costmap(g, ClusterMap(1 - cm.labels), s, cell_features=feats)
        assert np.array_equal(a.costs, b.costs) and np.array_equal(a.flags, b.flags)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10), st.integers(5, 20), st.floats(1e-6, 100))
    def test_monotone_alarm(self, c0, n, lam):
        g, cm, feats = two_cluster_setup()
        cells = [(i % 6, i // 6 % 4) for i in range(n)]
        r = np.random.default_rng(n)
        costs = c0 + r.uniform(0, 3, n)
        s = samples_at(cells, costs, [feats[c] for c in cells])
        out = update_global_costmap(g, cm, s, lam, feats)
        interp = out.flags == INTERPOLATED
        bound = c0 * n * 4.0 / (n * 4.0 + lam)
        assert np.all(out.costs[interp] >= bound * (1 - 1e-12))

    def test_models_and_csv(self, tmp_path):
        g, cm, feats = two_cluster_setup()
        s = samples_at([(i, 0) for i in range(6)], [1.0] * 6, feats[:, 0])
        models = {}
        out = update_global_costmap(g, cm, s, cell_features=feats, models=models)
        assert list(models) == [0] and models[0].cluster_id == 0
        out.to_csv(tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "row,col,x,y,cost,flag" and len(lines) == 49
        assert lines[1].endswith("observed")

    def test_cell_of_closing_edge(self):
        g = GlobalCostMap(np.zeros((4, 5)), np.zeros((4, 5), np.int8))
        i, j, ok = g.cell_of([(5.0, 4.0), (0.0, 0.0), (5.01, 1.0)])
        assert list(ok) == [True, True, False]
        assert (i[0], j[0]) == (3, 4)


def test_end_to_end_samples_from_terrain():
    t = flat_terrain(40, 40, gray=0.5)
    feats = extract_features(t, [(10.5, 10.5)], FeatureConfig())
    assert feats.shape == (1, 64)
