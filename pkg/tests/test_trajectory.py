"""Episode records: outcomes, replay fidelity, and on-disk format."""

import copy
import dataclasses

import numpy as np
import pytest

from highway_ast import mlp, rewards, sim, sut, trajectory


def bias_net(q):
    """Policy that always picks argmax(q), whatever it observes."""
    return sut.QNetwork(mlp.Mlp([np.zeros((sim.OBS_VEHICLES * 4, 5))],
                                [np.array(q, dtype=float)]))


@pytest.fixture(scope="module")
def idle_net():
    return bias_net([0, 1, 0, 0, 0])


@pytest.fixture(scope="module")
def slow_net():
    return bias_net([0, 0, 0, 0, 1])


# Micro world with enough horizon for a braking ego to get rear-ended.
BRAKE_CFG = sim.SimConfig(road_length=120.0, vehicle_count=4, horizon_T=30)

ALL_IDLE = [sim.IDLE_ENV_ACTION] * 64


def quiet_episode(micro_cfg, idle_net):
    problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
    return trajectory.run_episode(problem, trajectory.scripted_source(ALL_IDLE))


class TestOutcomes:
    def test_quiet_world_runs_to_horizon(self, micro_cfg, idle_net):
        rec = quiet_episode(micro_cfg, idle_net)
        assert rec.outcome == trajectory.OUTCOME_HORIZON
        assert not rec.failed
        assert len(rec.steps) == micro_cfg.horizon_T
        last = rec.steps[-1].state
        assert last.t == micro_cfg.horizon_T
        assert not last.failure and not last.invalid
        # all lanes flow at the same speed, so nothing ever closes in
        assert all(s.reward == 0.0 for s in rec.steps[:-1])
        assert rec.steps[-1].reward == pytest.approx(-1e6)
        assert rec.total_reward == pytest.approx(-1e6)

    def test_braking_ego_is_rear_ended(self, slow_net):
        problem = trajectory.HighwayProblem(BRAKE_CFG, 0, slow_net)
        rec = trajectory.run_episode(problem, trajectory.scripted_source(ALL_IDLE))
        assert rec.outcome == trajectory.OUTCOME_FAILURE
        assert rec.failed
        assert len(rec.steps) < BRAKE_CFG.horizon_T
        assert rec.steps[-1].state.failure
        assert rec.steps[-1].reward == 0.0

    def test_env_only_crash_is_invalid(self, micro_cfg, idle_net):
        problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
        rec = trajectory.run_episode(problem, trajectory.random_source(0))
        assert rec.outcome == trajectory.OUTCOME_INVALID
        last = rec.steps[-1].state
        assert last.invalid and not last.failure
        # env-only crashes earn the same sentinel as running out of time
        assert rec.steps[-1].reward == pytest.approx(-1e6)

    def test_outcome_of_each_flag(self, micro_cfg):
        state = sim.init(micro_cfg, 0)
        assert trajectory.outcome_of(state) == trajectory.OUTCOME_HORIZON
        failed = dataclasses.replace(state, failure=True)
        assert trajectory.outcome_of(failed) == trajectory.OUTCOME_FAILURE
        invalid = dataclasses.replace(state, invalid=True)
        assert trajectory.outcome_of(invalid) == trajectory.OUTCOME_INVALID


class TestStepContext:
    """The reward context derives from the post-step state."""

    def test_invalid_episode_maps_clock_to_horizon(self, micro_cfg, idle_net):
        problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
        rec = trajectory.run_episode(problem, trajectory.random_source(0))
        last = rec.steps[-1].state
        assert last.invalid and last.t < micro_cfg.horizon_T
        ctx = trajectory.step_context(last, rec.steps[-1].env_action, idle_net,
                                      "heur", rewards.RewardConfig())
        assert ctx.t == micro_cfg.horizon_T
        assert not ctx.in_E

    def test_failure_sets_in_e(self, slow_net):
        problem = trajectory.HighwayProblem(BRAKE_CFG, 0, slow_net)
        rec = trajectory.run_episode(problem, trajectory.scripted_source(ALL_IDLE))
        ctx = trajectory.step_context(rec.steps[-1].state, rec.steps[-1].env_action,
                                      slow_net, "heur", rewards.RewardConfig())
        assert ctx.in_E

    def test_live_state_keeps_clock_and_skips_scores(self, micro_cfg, idle_net):
        rec = quiet_episode(micro_cfg, idle_net)
        first = rec.steps[0].state
        ctx = trajectory.step_context(first, rec.steps[0].env_action, idle_net,
                                      "heur", rewards.RewardConfig())
        assert ctx.t == 1
        assert ctx.qcs == 0.0
        assert ctx.prediction is None

    def test_qcs_kind_populates_score(self, micro_cfg, untrained_net):
        state = sim.step(sim.init(micro_cfg, 1), sim.IDLE_ENV_ACTION,
                         sut.policy_handle(untrained_net))[0]
        ctx = trajectory.step_context(state, sim.IDLE_ENV_ACTION, untrained_net,
                                      "qcs", rewards.RewardConfig())
        assert ctx.qcs == sut.qcs_score(untrained_net, sim.observe_ego(state))
        assert ctx.qcs > 0.0


class TestActionSources:
    def test_scripted_source_replays_in_order(self, micro_cfg, idle_net):
        script = [tuple((i + j) % 5 for j in range(sim.N_CONTROLLED))
                  for i in range(micro_cfg.horizon_T)]
        problem = trajectory.HighwayProblem(micro_cfg, 2, idle_net)
        rec = trajectory.run_episode(problem, trajectory.scripted_source(script))
        assert rec.env_actions() == script[:len(rec.steps)]

    def test_scripted_source_exhaustion_raises(self, micro_cfg, idle_net):
        problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
        source = trajectory.scripted_source([])
        with pytest.raises(ValueError, match="exhausted"):
            source(problem.initial_state(), problem)

    def test_random_source_streams_repeat_per_seed(self, micro_cfg, idle_net):
        runs = []
        for _ in range(2):
            problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
            runs.append(trajectory.run_episode(problem, trajectory.random_source(9)))
        assert runs[0].env_actions() == runs[1].env_actions()
        assert trajectory.replay_matches(runs[0], runs[1])

    def test_sample_action_has_joint_arity(self, micro_cfg, idle_net, rng):
        problem = trajectory.HighwayProblem(micro_cfg, 0, idle_net)
        action = problem.sample_action(rng)
        assert len(action) == sim.N_CONTROLLED
        assert all(0 <= a < len(sim.DiscreteAction) for a in action)


class TestReplay:
    def test_replay_reproduces_heur_episode(self, slow_net):
        problem = trajectory.HighwayProblem(BRAKE_CFG, 0, slow_net)
        rec = trajectory.run_episode(problem, trajectory.scripted_source(ALL_IDLE))
        again = trajectory.replay_trajectory(rec, slow_net)
        assert trajectory.replay_matches(rec, again)
        assert again.total_reward == rec.total_reward

    def test_replay_reproduces_hcs_episode(self, micro_cfg, idle_net, micro_hcs):
        # dropout predictions are seeded from state content, so even the
        # stochastic reward replays bit-exactly
        problem = trajectory.HighwayProblem(micro_cfg, 3, idle_net,
                                            reward_kind="hcs", hcs_net=micro_hcs)
        rec = trajectory.run_episode(problem, trajectory.random_source(1))
        again = trajectory.replay_trajectory(rec, idle_net, hcs_net=micro_hcs)
        assert trajectory.replay_matches(rec, again)

    def test_mismatches_are_detected(self, micro_cfg, idle_net):
        rec = quiet_episode(micro_cfg, idle_net)

        clipped = copy.deepcopy(rec)
        clipped.steps = clipped.steps[:-1]
        assert not trajectory.replay_matches(rec, clipped)

        rewarded = copy.deepcopy(rec)
        rewarded.steps[0] = dataclasses.replace(rewarded.steps[0], reward=1.0)
        assert not trajectory.replay_matches(rec, rewarded)

        steered = copy.deepcopy(rec)
        steered.steps[0] = dataclasses.replace(
            steered.steps[0],
            env_action=(0,) * sim.N_CONTROLLED)
        assert not trajectory.replay_matches(rec, steered)

    def test_hcs_problem_requires_classifier(self, micro_cfg, idle_net):
        with pytest.raises(ValueError, match="classifier"):
            trajectory.HighwayProblem(micro_cfg, 0, idle_net, reward_kind="hcs")

    def test_unknown_reward_kind_rejected(self, micro_cfg, idle_net):
        with pytest.raises(ValueError, match="reward kind"):
            trajectory.HighwayProblem(micro_cfg, 0, idle_net, reward_kind="bonus")


class TestDictRoundTrips:
    def test_simconfig_round_trip(self, micro_cfg):
        d = trajectory.simconfig_to_dict(micro_cfg)
        assert trajectory.simconfig_from_dict(d) == micro_cfg

    def test_simconfig_unknown_key_named(self):
        d = trajectory.simconfig_to_dict(sim.SimConfig())
        d["warp_factor"] = 9
        with pytest.raises(ValueError, match="warp_factor"):
            trajectory.simconfig_from_dict(d)

    def test_state_round_trip(self, micro_cfg, idle_net):
        fresh = sim.init(micro_cfg, 4)
        stepped = sim.step(fresh, sim.IDLE_ENV_ACTION,
                           sut.policy_handle(idle_net))[0]
        for state in (fresh, stepped):
            back = trajectory.state_from_dict(
                trajectory.state_to_dict(state), micro_cfg)
            assert back.t == state.t
            assert back.last_ego_action == state.last_ego_action
            for field in ("ids", "x", "y", "speed", "target_speed", "target_lane"):
                assert np.array_equal(getattr(back, field), getattr(state, field))


class TestPersistence:
    @pytest.fixture()
    def saved(self, slow_net, tmp_path):
        problem = trajectory.HighwayProblem(BRAKE_CFG, 0, slow_net)
        rec = trajectory.run_episode(problem, trajectory.scripted_source(ALL_IDLE))
        path = tmp_path / "crash.traj"
        trajectory.save_trajectory(rec, path)
        return rec, path

    def test_round_trip_preserves_record(self, saved, slow_net):
        rec, path = saved
        loaded = trajectory.load_trajectory(path)
        assert loaded.sim_config == rec.sim_config
        assert loaded.seed == rec.seed
        assert loaded.reward_kind == rec.reward_kind
        assert loaded.outcome == rec.outcome
        assert loaded.total_reward == rec.total_reward
        assert len(loaded.steps) == len(rec.steps)
        for a, b in zip(loaded.steps, rec.steps):
            assert (a.t, a.env_action, a.ego_action) == (b.t, b.env_action, b.ego_action)
            assert a.reward == b.reward
            assert a.verdict == b.verdict
            assert np.array_equal(a.observation, b.observation)
        # the loaded record is still simulatable from scratch
        assert trajectory.replay_matches(
            loaded, trajectory.replay_trajectory(loaded, slow_net))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "blank.traj"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            trajectory.load_trajectory(path)

    def test_wrong_kind_rejected(self, saved, tmp_path):
        _, path = saved
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"trajectory"', '"samples"')
        other = tmp_path / "wrong.traj"
        other.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="not a trajectory"):
            trajectory.load_trajectory(other)

    def test_schema_mismatch_rejected(self, saved, tmp_path):
        _, path = saved
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"schema": 1', '"schema": 99')
        other = tmp_path / "schema.traj"
        other.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="schema"):
            trajectory.load_trajectory(other)

    def test_step_count_mismatch_rejected(self, saved, tmp_path):
        _, path = saved
        lines = path.read_text().splitlines()
        other = tmp_path / "short.traj"
        other.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="expected"):
            trajectory.load_trajectory(other)

    def test_malformed_step_names_its_line(self, saved, tmp_path):
        _, path = saved
        lines = path.read_text().splitlines()
        lines[2] = '{"t": 0}'
        other = tmp_path / "broken.traj"
        other.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match=r"broken\.traj:3"):
            trajectory.load_trajectory(other)
