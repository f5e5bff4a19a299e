"""Reward-branch arithmetic for the three search reward variants."""

from __future__ import annotations

import pytest

from highway_ast import rewards
from highway_ast.rewards import RewardConfig, StepContext, h, r_hcs, r_heur, r_qcs

CFG = RewardConfig()


def live(t: int = 3, T: int = 30, **kwargs) -> StepContext:
    return StepContext(in_E=False, t=t, T=T, **kwargs)


class TestH:
    def test_contact_is_full_danger(self):
        assert h(0.0, 60.0) == pytest.approx(1.0, abs=1e-9)

    def test_saturates_at_gap_max(self):
        assert h(60.0, 60.0) == 0.0
        assert h(250.0, 60.0) == 0.0

    def test_direct_formula(self):
        assert h(15.0, 60.0) == pytest.approx(0.75, abs=1e-9)

    def test_no_leader_means_no_danger(self):
        assert h(None, 60.0) == 0.0

    def test_negative_gap_clamps_to_contact(self):
        assert h(-3.0, 60.0) == 1.0

    def test_bad_gap_max_rejected(self):
        with pytest.raises(ValueError):
            h(10.0, 0.0)


class TestHeur:
    def test_failure_pays_zero(self):
        assert r_heur(StepContext(in_E=True, t=5, T=30), CFG) == 0.0

    def test_horizon_pays_sentinel(self):
        ctx = StepContext(in_E=False, t=30, T=30)
        assert r_heur(ctx, CFG) == pytest.approx(-1e6, abs=1e-9)

    def test_live_branch_is_h(self):
        assert r_heur(live(lead_gap=15.0), CFG) == pytest.approx(0.75, abs=1e-9)

    def test_past_horizon_also_sentinel(self):
        # The invalid-episode mapping sets t = T, so >= must hold, not ==.
        assert r_qcs(StepContext(in_E=False, t=31, T=30), CFG) == -1e6


class TestQcs:
    def test_failure_pays_zero(self):
        assert r_qcs(StepContext(in_E=True, t=2, T=30, qcs=9.0), CFG) == 0.0

    def test_live_branch_passes_score_through(self):
        assert r_qcs(live(qcs=4.0), CFG) == pytest.approx(4.0, abs=1e-9)

    def test_horizon_pays_sentinel(self):
        assert r_qcs(StepContext(in_E=False, t=30, T=30, qcs=4.0), CFG) == -1e6


class TestHcs:
    def test_blend_formula(self):
        ctx = live(lead_gap=30.0, prediction=(0.8, 0.1))
        # h(30, 60) = 0.5; 0.9*0.8 + 0.1*0.5 = 0.77
        assert r_hcs(ctx, CFG) == pytest.approx(0.77, abs=1e-9)

    def test_fully_confident_reduces_to_beta_mu(self):
        ctx = live(lead_gap=0.0, prediction=(0.8, 0.0))
        assert r_hcs(ctx, CFG) == pytest.approx(CFG.beta * 0.8, abs=1e-9)

    def test_max_bernoulli_variance_leans_on_heuristic(self):
        ctx = live(lead_gap=0.0, prediction=(0.5, 0.25))
        # 0.75*0.5 + 0.25*1.0 = 0.625
        assert r_hcs(ctx, CFG) == pytest.approx(0.625, abs=1e-9)

    def test_failure_and_horizon_branches(self):
        assert r_hcs(StepContext(in_E=True, t=1, T=30), CFG) == 0.0
        assert r_hcs(StepContext(in_E=False, t=30, T=30), CFG) == -1e6

    def test_live_branch_without_prediction_rejected(self):
        with pytest.raises(ValueError):
            r_hcs(live(lead_gap=10.0), CFG)


class TestRegistry:
    def test_known_kinds(self):
        assert rewards.reward_fn("heur") is r_heur
        assert rewards.reward_fn("qcs") is r_qcs
        assert rewards.reward_fn("hcs") is r_hcs

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown reward kind"):
            rewards.reward_fn("entropy")


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"beta": 0.0},
        {"gap_max": -1.0},
        {"horizon_penalty": 0.0},
        {"n_passes": 1},
    ])
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            RewardConfig(**kwargs).validate()
