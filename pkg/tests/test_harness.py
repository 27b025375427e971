"""Episode simulation, greedy baselines and aggregation."""

import math
import statistics

import numpy as np
import pytest

from epsgpp.anytime import AnytimeStop
from epsgpp.field import FieldGrid
from epsgpp.gp import Domain, GpHyperparams, History, extend_history, posterior, sample_field
from epsgpp.harness import (
    LGK_FIELD,
    SIMULATED_FIELD,
    EpisodeConfig,
    EpisodeError,
    EpisodeResult,
    StepRecord,
    aggregate,
    default_start,
    greedy_policy,
    noise_stream,
    run_episode,
)
from epsgpp.lipschitz import ActionModel, precompute
from epsgpp.planner import BudgetMode, EpsilonGpp
from epsgpp.rewards import make_reward, realized_reward

HY = GpHyperparams(0.0, 1.0, 1e-3, (0.3, 0.3))


@pytest.fixture(scope="module")
def small_field():
    return sample_field(Domain.grid(6, 6, 0.1), HY, seed=1)


def fake_result(cum, mx, nodes, seed=0):
    recs = []
    for k, (c, m, n) in enumerate(zip(cum, mx, nodes), start=1):
        recs.append(StepRecord(k, 0, 0.0, 0.0, 0.0, 0.0, 0.0, c, m, n, 0.0, 1))
    return EpisodeResult("x", seed, None, tuple(recs))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EpisodeConfig(policy="random")
        with pytest.raises(ValueError):
            EpisodeConfig(steps=0)
        with pytest.raises(ValueError):
            EpisodeConfig(horizon=0)
        with pytest.raises(ValueError):
            EpisodeConfig(epsilon=0.0)

    def test_lambda_rederived(self):
        cfg = EpisodeConfig(epsilon=6.0)
        assert cfg.lam(1) == 3.0
        assert cfg.lam(3) == 0.5

    def test_presets(self):
        assert SIMULATED_FIELD["width"] * SIMULATED_FIELD["height"] == 400
        assert SIMULATED_FIELD["hyper"].length_scales == (0.2236, 0.2236)
        assert LGK_FIELD["hyper"].prior_mean == 3.26
        assert LGK_FIELD["width"] * LGK_FIELD["height"] == 168


class TestGreedy:
    def test_ucb_beta_zero_is_mean_argmax(self):
        dom = Domain.grid(4, 4, 0.1)
        h = History.from_observations([dom.location(0), dom.location(9)], [0.3, 1.2], HY)
        pick = greedy_policy("ucb", beta=0.0)(h, range(16), dom, HY)
        means = [posterior(h, dom.location(s), HY).mean for s in range(16)]
        assert pick == int(np.argmax(means))

    def test_pi_half_at_incumbent(self):
        from epsgpp.harness import _acquisition
        for sd in (0.1, 1.0, 3.0):
            assert _acquisition("pi", 0.7, sd, 0.7, 0.0, 0.0) == 0.5

    def test_ei_against_monte_carlo(self):
        from epsgpp.harness import _acquisition
        mu, sd, best = 0.3, 0.8, 0.5
        draws = np.maximum(np.random.default_rng(0).normal(mu, sd, 1_000_000) - best, 0.0)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(_acquisition("ei", mu, sd, best, 0.0, 0.0) - draws.mean()) <= 3 * se

    def test_zero_sigma_limits(self):
        from epsgpp.harness import _acquisition
        assert _acquisition("pi", 1.0, 0.0, 0.5, 0.0, 0.0) == 1.0
        assert _acquisition("pi", 0.2, 0.0, 0.5, 0.0, 0.0) == 0.0
        assert _acquisition("ei", 1.0, 0.0, 0.5, 0.0, 0.0) == 0.5
        assert _acquisition("ei", 0.2, 0.0, 0.5, 0.0, 0.0) == 0.0

    def test_xi_shifts_threshold(self):
        from epsgpp.harness import _acquisition
        assert _acquisition("pi", 1.0, 1.0, 0.5, 0.5, 0.0) == 0.5

    def test_ties_to_lowest_index(self):
        dom = Domain(np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]))
        h = History.from_observations([dom.location(0)], [0.0], HY)
        assert greedy_policy("ei")(h, (2, 1), dom, HY) == 1

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            greedy_policy("thompson")


class TestStartAndNoise:
    def test_centre_start(self):
        f = FieldGrid(20, 20, 0.05, np.zeros(400))
        assert default_start(f, False, 0) == f.domain().index_of(10, 10)

    def test_loaded_start_seeded(self):
        f = FieldGrid(14, 12, 40.0, np.zeros(168))
        starts = {default_start(f, True, s) for s in range(30)}
        assert default_start(f, True, 4) == default_start(f, True, 4)
        assert len(starts) > 5

    def test_noise_stream(self):
        a = noise_stream(3, 5, 0.04)
        assert a.shape == (6,)
        assert np.array_equal(a, noise_stream(3, 5, 0.04))
        np.testing.assert_allclose(a, 0.2 * noise_stream(3, 5, 1.0), rtol=1e-15)


class TestRunEpisode:
    def test_single_action_one_step(self):
        dom = Domain(np.array([[0.0, 0.0], [0.1, 0.0]]))
        field = FieldGrid(2, 1, 0.1, np.array([0.4, -0.2]))
        am = ActionModel(dom, {0: (1,), 1: (0,)})
        cfg = EpisodeConfig("epsilon_gpp", steps=1, horizon=2, reward_kind="ucb", reward_params={"beta": 1.0}, seed=5)
        res = run_episode(field, cfg, HY, 0, action_model=am)
        assert len(res.records) == 1
        rec = res.records[0]
        noise = noise_stream(5, 1, HY.noise_var)
        h0 = History.from_observations([dom.location(0)], [0.4 + noise[0]], HY)
        var = posterior(h0, dom.location(1), HY).variance
        assert rec.index == 1
        assert rec.z == -0.2 + noise[1]
        assert rec.reward == pytest.approx(rec.z + math.sqrt(var), abs=1e-14)
        assert rec.horizon == 1

    @pytest.mark.parametrize("policy", ["epsilon_gpp", "greedy_ucb", "ml_obs"])
    def test_constant_field(self, policy):
        hy = GpHyperparams(0.0, 1.0, 1e-10, (0.3, 0.3))
        field = FieldGrid(4, 4, 0.1, np.full(16, 0.75))
        cfg = EpisodeConfig(policy, steps=6, horizon=2, epsilon=1.0, seed=2)
        res = run_episode(field, cfg, hy, 5)
        assert res.total_reward == pytest.approx(6 * 0.75, abs=1e-4)

    def test_record_invariants(self, small_field):
        cfg = EpisodeConfig("epsilon_gpp", steps=5, horizon=2, epsilon=2.0, seed=7)
        res = run_episode(small_field, cfg, HY, 14)
        assert abs(res.total_reward - sum(r.reward for r in res.records)) <= 1e-9
        assert res.records[-1].cum_reward == pytest.approx(res.total_reward, abs=1e-9)
        assert res.max_reward == max(r.reward for r in res.records)
        assert [r.horizon for r in res.records] == [2, 2, 2, 2, 1]
        for r in res.records:
            assert r.reward_normalized == r.reward - HY.prior_mean
            assert r.lam == cfg.lam(r.horizon)
            assert 1 <= r.n_min <= r.n_max
        dom = small_field.domain()
        here = 14
        for r in res.records:
            assert r.index in ActionModel.grid4(dom).actions(here)
            here = r.index

    def test_deterministic(self, small_field):
        cfg = EpisodeConfig("anytime", steps=3, horizon=2, epsilon=2.0, anytime_stop=AnytimeStop(max_nodes=300), seed=1)
        a = run_episode(small_field, cfg, HY, 14)
        b = run_episode(small_field, cfg, HY, 14)
        strip = lambda res: [r.__dict__ | {"wall_ms": 0} for r in res.records]
        assert strip(a) == strip(b)

    def test_noise_shared_across_policies(self, small_field):
        noise = noise_stream(9, 4, HY.noise_var)
        for policy in ("greedy_ei", "greedy_pi", "epsilon_gpp"):
            res = run_episode(small_field, EpisodeConfig(policy, steps=4, horizon=2, seed=9), HY, 14)
            for k, r in enumerate(res.records, start=1):
                assert r.z == small_field[r.index] + noise[k]

    def test_tree_nodes_match_planner_counter(self, small_field):
        cfg = EpisodeConfig("epsilon_gpp", steps=3, horizon=2, epsilon=2.0, seed=4)
        res = run_episode(small_field, cfg, HY, 14)
        dom = small_field.domain()
        am = ActionModel.grid4(dom)
        spec = make_reward("ucb", {"beta": 0.0})
        noise = noise_stream(4, 3, HY.noise_var)
        h = History.from_observations([dom.location(14)], [small_field[14] + noise[0]], HY)
        here = 14
        for r in res.records:
            table = precompute(h, am, r.horizon, HY, spec, start=here)
            pl = EpsilonGpp(table, spec, HY, am, cfg.lam(r.horizon), cfg.budget)
            path, z = pl.split(h)
            pl.q_batch(0, path, z[None, :])
            assert r.tree_nodes == pl.nodes
            h = extend_history(h, dom.location(r.index), r.z, HY)
            here = r.index

    def test_anytime_gap_reported(self, small_field):
        cfg = EpisodeConfig("anytime", steps=2, horizon=2, epsilon=2.0, anytime_stop=AnytimeStop(max_nodes=200), seed=3)
        seen = []
        res = run_episode(small_field, cfg, HY, 14, trace=lambda k, rec: seen.append((k, rec)))
        for r in res.records:
            last = [rec for k, rec in seen if k == r.step][-1]
            assert r.gap == last.gap
            assert r.tree_nodes == last.nodes

    def test_error_carries_step(self, small_field):
        cfg = EpisodeConfig("epsilon_gpp", steps=2, horizon=2, epsilon=1e-4, budget=BudgetMode.capped(3), seed=0)
        with pytest.raises(EpisodeError) as err:
            run_episode(small_field, cfg, HY, 14)
        assert err.value.step == 1

    def test_fixed_tau_zero_matches_ml_obs(self, small_field):
        common = dict(steps=6, horizon=3, reward_kind="ucb", reward_params={"beta": 0.5}, seed=6)
        a = run_episode(small_field, EpisodeConfig("epsilon_gpp", budget=BudgetMode.fixed(0.0, 1), **common), HY, 14)
        b = run_episode(small_field, EpisodeConfig("ml_obs", **common), HY, 14)
        assert a.actions == b.actions
        assert [r.tree_nodes for r in a.records] == [r.tree_nodes for r in b.records]


class TestAggregate:
    def test_single_result(self):
        r = fake_result([1.0, 3.0], [1.0, 2.0], [5, 7])
        s = aggregate([r])
        np.testing.assert_array_equal(s.cum_reward, [1.0, 3.0])
        np.testing.assert_array_equal(s.max_reward, [1.0, 2.0])
        np.testing.assert_array_equal(s.cum_nodes, [5, 12])
        assert np.isnan(s.cum_reward_se).all()

    def test_symmetric_midpoint(self):
        s = aggregate([fake_result([1.0, 2.0], [1.0, 1.0], [0, 0]), fake_result([3.0, -2.0], [3.0, 3.0], [0, 0])])
        np.testing.assert_array_equal(s.cum_reward, [2.0, 0.0])
        np.testing.assert_array_equal(s.max_reward, [2.0, 2.0])

    def test_standard_error_against_statistics(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(7, 5))
        results = [fake_result(row, row, [1] * 5) for row in data]
        s = aggregate(results)
        for k in range(5):
            col = [float(x) for x in data[:, k]]
            assert s.cum_reward[k] == pytest.approx(statistics.fmean(col), abs=1e-12)
            assert s.cum_reward_se[k] == pytest.approx(statistics.stdev(col) / math.sqrt(7), abs=1e-12)
        np.testing.assert_array_equal(s.steps, np.arange(1, 6))

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([fake_result([1.0], [1.0], [0]), fake_result([1.0, 2.0], [1.0, 2.0], [0, 0])])


def test_realized_reward_consistency(small_field):
    cfg = EpisodeConfig("greedy_ucb", steps=3, reward_kind="mes", reward_params={}, seed=2)
    res = run_episode(small_field, cfg, HY, 14)
    spec = make_reward("mes", {})
    dom = small_field.domain()
    noise = noise_stream(2, 3, HY.noise_var)
    h = History.from_observations([dom.location(14)], [small_field[14] + noise[0]], HY)
    for r in res.records:
        var = posterior(h, dom.location(r.index), HY).variance
        assert r.reward == realized_reward(spec, r.z, var, h.indices + (r.index,))
        h = extend_history(h, dom.location(r.index), r.z, HY)
