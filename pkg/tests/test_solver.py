"""Search tests: UCB selection, progressive widening, toy optima, determinism."""

from __future__ import annotations

import math

import numpy as np
import pytest

from highway_ast import sim, solver
from highway_ast.solver import (
    MctsConfig,
    TreeNode,
    maybe_expand,
    mcts_search,
    top_episodes,
    uct_select,
)
from highway_ast.trajectory import HighwayProblem
from _toys import OneStepToy, TwoStepToy


def make_node(stats, visits=None):
    """Parent with children from {action: (total_return, visits)}."""
    parent = TreeNode()
    for action, (total, n) in stats.items():
        child = TreeNode(depth=1)
        child.total_return = total
        child.visits = n
        parent.children[action] = child
    parent.visits = visits if visits is not None else sum(
        c.visits for c in parent.children.values())
    return parent


class TestUctSelect:
    def test_single_child_is_returned(self):
        node = make_node({"only": (3.0, 5)})
        assert uct_select(node, c=math.sqrt(2)) == "only"

    def test_exploration_term_beats_exploitation(self):
        # Hand values: 0 + sqrt(2)*sqrt(ln 11 / 1) = 2.19 beats
        #              1 + sqrt(2)*sqrt(ln 11 / 10) = 1.69.
        node = make_node({"a": (10.0, 10), "b": (0.0, 1)}, visits=11)
        lo = 1 + math.sqrt(2) * math.sqrt(math.log(11) / 10)
        hi = 0 + math.sqrt(2) * math.sqrt(math.log(11) / 1)
        assert lo == pytest.approx(1.69, abs=0.005)
        assert hi == pytest.approx(2.19, abs=0.005)
        assert uct_select(node, c=math.sqrt(2)) == "b"

    def test_zero_c_is_pure_exploitation(self):
        node = make_node({"a": (10.0, 10), "b": (0.0, 1)}, visits=11)
        assert uct_select(node, c=0.0) == "a"

    def test_unvisited_child_goes_first(self):
        node = make_node({"a": (10.0, 10), "b": (0.0, 0)}, visits=10)
        assert uct_select(node, c=0.0) == "b"

    def test_no_children_rejected(self):
        with pytest.raises(ValueError):
            uct_select(TreeNode(), c=1.0)


class TestMaybeExpand:
    def test_first_visit_always_expands(self):
        node = TreeNode()
        rng = np.random.default_rng(0)
        action = maybe_expand(node, rng, lambda r: "fresh", pw_k=4.0, pw_alpha=0.5)
        assert action == "fresh"
        assert "fresh" in node.children

    def test_cap_formula_40_children_at_100_visits(self):
        node = make_node({i: (0.0, 1) for i in range(40)}, visits=100)
        calls = []

        def sampler(rng):
            calls.append(1)
            return "new"

        assert maybe_expand(node, np.random.default_rng(0), sampler,
                            pw_k=4.0, pw_alpha=0.5) is None
        assert not calls  # cap check happens before sampling

    def test_below_cap_expands(self):
        node = make_node({i: (0.0, 1) for i in range(39)}, visits=100)
        action = maybe_expand(node, np.random.default_rng(0), lambda r: "new",
                              pw_k=4.0, pw_alpha=0.5)
        assert action == "new"

    def test_saturated_sampler_gives_up_after_max_attempts(self):
        node = make_node({"x": (0.0, 1)}, visits=100)
        calls = []

        def sampler(rng):
            calls.append(1)
            return "x"

        assert maybe_expand(node, np.random.default_rng(0), sampler,
                            pw_k=4.0, pw_alpha=0.5) is None
        assert len(calls) == 64


class TestToyOptima:
    def test_one_step_toy_found_in_at_least_90pct_of_seeds(self):
        toy = OneStepToy()
        optimum = toy.brute_force_optimum()
        assert optimum == 1.0
        hits = 0
        for seed in range(50):
            cfg = MctsConfig(iterations_per_step=1000, max_depth=1, seed=seed)
            res = mcts_search(toy, cfg)
            hits += res.best_return == optimum
        assert hits >= 45

    def test_two_step_toy_found_in_at_least_90pct_of_seeds(self):
        toy = TwoStepToy()
        optimum = toy.brute_force_optimum()
        assert optimum == pytest.approx(1.1)
        hits = 0
        for seed in range(50):
            cfg = MctsConfig(iterations_per_step=200, max_depth=2, seed=seed)
            res = mcts_search(toy, cfg)
            hits += res.best_return == pytest.approx(optimum)
        assert hits >= 45

    def test_more_budget_never_hurts_on_one_step_toy(self):
        toy = OneStepToy()
        for seed in (0, 1, 2):
            returns = []
            for iters in (25, 100, 400, 1600):
                cfg = MctsConfig(iterations_per_step=iters, max_depth=1, seed=seed)
                returns.append(mcts_search(toy, cfg).best_return)
            assert returns == sorted(returns)


class FailingToy(OneStepToy):
    """One-step toy where the designated action is a failure state."""

    def step(self, state, action):
        hit = tuple(action) == self.designated
        return ("failed" if hit else "safe"), (1.0 if hit else 0.0), True

    def is_failure(self, state):
        return state == "failed"


class TestStopOnFailure:
    def test_returns_at_first_failing_episode(self):
        toy = FailingToy()
        cfg = MctsConfig(iterations_per_step=100000, max_depth=1, seed=3,
                         stop_on_failure=True)
        res = mcts_search(toy, cfg)
        assert res.episodes[-1].failed
        assert res.iterations_used < 100000
        assert sum(ep.failed for ep in res.episodes) == 1

    def test_off_by_default_explores_full_budget(self):
        toy = FailingToy()
        cfg = MctsConfig(iterations_per_step=500, max_depth=1, seed=3)
        res = mcts_search(toy, cfg)
        assert res.iterations_used == 500


class TestTopEpisodes:
    def test_ranked_and_deduplicated(self):
        eps = [
            solver.EpisodeStat(actions=(1,), ret=0.5, failed=False),
            solver.EpisodeStat(actions=(2,), ret=1.0, failed=True),
            solver.EpisodeStat(actions=(2,), ret=1.0, failed=True),
            solver.EpisodeStat(actions=(3,), ret=0.1, failed=False),
        ]
        top = top_episodes(eps, 3)
        assert [e.actions for e in top] == [(2,), (1,), (3,)]


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"iterations_per_step": 0},
        {"pw_alpha": 0.0},
        {"pw_alpha": 1.0},
        {"exploration_c": -0.5},
        {"pw_k": 0.0},
        {"top_k_trajectories": 0},
    ])
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            MctsConfig(**kwargs).validate()


class TestHighwaySearch:
    def test_same_seed_gives_identical_results(self, micro_cfg, micro_net):
        results = []
        for _ in range(2):
            problem = HighwayProblem(micro_cfg, seed=5, sut_net=micro_net,
                                     reward_kind="heur")
            cfg = MctsConfig(iterations_per_step=8, seed=5, top_k_trajectories=2)
            results.append(solver.search(problem, cfg))
        a, b = results
        assert a.best_return == b.best_return
        assert a.iterations_used == b.iterations_used
        assert a.sim_steps == b.sim_steps
        assert a.best_trajectory.env_actions() == b.best_trajectory.env_actions()
        assert a.best_trajectory.total_reward == b.best_trajectory.total_reward

    def test_search_result_accounting(self, micro_cfg, micro_net):
        problem = HighwayProblem(micro_cfg, seed=5, sut_net=micro_net,
                                 reward_kind="heur")
        cfg = MctsConfig(iterations_per_step=8, seed=5, top_k_trajectories=3)
        res = solver.search(problem, cfg)
        assert res.episodes_seen == res.iterations_used
        assert 1 <= len(res.top_trajectories) <= 3
        assert res.best_trajectory is res.top_trajectories[0]
        assert res.sim_steps > 0
