"""Episode records, the search problem wrapper, persistence, and replay.

A trajectory is the unit every experiment consumes: per decision step it
stores the joint environment action, the ego action the policy chose, the
resulting world snapshot, the observation of that snapshot, the step reward,
and an RSS verdict.  Records serialize to line-delimited JSON (one metadata
line, then one line per step) and are fully self-describing, so any stored
trajectory can be re-simulated bit-exactly from its config, seed, and action
sequence.

Per-step artifacts follow one convention: everything derives from the
post-step state together with the actions that produced it.  The classifier
seed is a digest of the state content, so stochastic predictions replay
exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import classifier as hcs
from . import rewards, rss, sim, sut

SCHEMA_VERSION = 1

OUTCOME_FAILURE = "failure"
OUTCOME_INVALID = "invalid"
OUTCOME_HORIZON = "horizon"


@dataclass(frozen=True)
class StepRecord:
    t: int                      # decision index, 0-based
    env_action: tuple
    ego_action: sim.DiscreteAction
    observation: np.ndarray
    reward: float
    state: sim.SimState
    verdict: Optional[rss.RssVerdict] = None


@dataclass
class TrajectoryRecord:
    sim_config: sim.SimConfig
    seed: int
    reward_kind: str
    outcome: str
    total_reward: float
    steps: list
    config_digest: str = ""

    @property
    def failed(self) -> bool:
        return self.outcome == OUTCOME_FAILURE

    def env_actions(self) -> list:
        return [step.env_action for step in self.steps]


def step_context(state: sim.SimState, env_action, sut_net: sut.QNetwork,
                 reward_kind: str, reward_cfg: rewards.RewardConfig,
                 hcs_net=None) -> rewards.StepContext:
    """Build the reward context for a freshly stepped state.

    Environment-only collisions are treated as running out of time (t is
    mapped to the horizon), so invalidated episodes earn the sentinel penalty
    rather than escaping it.
    """
    cfg = state.config
    in_e = state.failure
    t_eff = cfg.horizon_T if (state.invalid and not state.failure) else state.t
    qcs = 0.0
    prediction = None
    if not in_e and t_eff < cfg.horizon_T:
        if reward_kind == "qcs":
            qcs = sut.qcs_score(sut_net, sim.observe_ego(state))
        elif reward_kind == "hcs":
            feature = hcs.featurize(state.last_ego_action, env_action, sim.observe_ego(state))
            prediction = hcs.predict(
                hcs_net, feature, reward_cfg.n_passes, hcs.prediction_seed(state)
            )
            prediction = (prediction.mu, prediction.sigma2)
    return rewards.StepContext(
        in_E=in_e,
        t=t_eff,
        T=cfg.horizon_T,
        lead_gap=sim.lead_gap(state),
        qcs=qcs,
        prediction=prediction,
    )


class HighwayProblem:
    """One seeded episode-dynamics instance for the failure search.

    Bundles the simulator, the trained policy, and a reward formulation into
    the interface the solver needs: initial_state / step / sample_action.
    Deterministic: identical construction arguments give identical episodes
    for identical action sequences.
    """

    def __init__(self, sim_cfg: sim.SimConfig, seed: int, sut_net: sut.QNetwork,
                 reward_kind: str = "heur",
                 reward_cfg: rewards.RewardConfig = rewards.RewardConfig(),
                 hcs_net=None):
        if reward_kind not in rewards.REWARD_KINDS:
            raise ValueError(f"unknown reward kind {reward_kind!r}")
        if reward_kind == "hcs" and hcs_net is None:
            raise ValueError("hcs reward requires a classifier")
        reward_cfg.validate()
        self.sim_cfg = sim_cfg
        self.seed = seed
        self.sut_net = sut_net
        self.reward_kind = reward_kind
        self.reward_fn = rewards.reward_fn(reward_kind)
        self.reward_cfg = reward_cfg
        self.hcs_net = hcs_net
        self._sut_handle = sut.policy_handle(sut_net)
        self._initial = sim.init(sim_cfg, seed)
        self.steps_taken = 0  # cumulative sim steps, for budget accounting

    def initial_state(self) -> sim.SimState:
        return self._initial

    def step(self, state: sim.SimState, env_action) -> tuple:
        """Returns (next_state, reward, terminal)."""
        self.steps_taken += 1
        next_state, _ = sim.step(state, env_action, self._sut_handle)
        ctx = step_context(
            next_state, env_action, self.sut_net,
            self.reward_kind, self.reward_cfg, self.hcs_net,
        )
        reward = self.reward_fn(ctx, self.reward_cfg)
        return next_state, reward, sim.is_terminal(next_state)

    def sample_action(self, rng: np.random.Generator) -> tuple:
        return tuple(int(a) for a in rng.integers(0, len(sim.DiscreteAction),
                                                  size=sim.N_CONTROLLED))


def outcome_of(state: sim.SimState) -> str:
    if state.failure:
        return OUTCOME_FAILURE
    if state.invalid:
        return OUTCOME_INVALID
    return OUTCOME_HORIZON


def random_source(seed: int) -> Callable:
    """Env-action source drawing joint actions uniformly at random."""
    rng = np.random.default_rng(np.random.PCG64(seed))

    def source(state, problem):
        return problem.sample_action(rng)

    return source


def scripted_source(actions: Sequence) -> Callable:
    """Env-action source replaying a fixed action list."""

    def source(state, problem):
        if state.t >= len(actions):
            raise ValueError(f"scripted actions exhausted at step {state.t}")
        return tuple(actions[state.t])

    return source


def run_episode(problem: HighwayProblem, env_source: Callable,
                rss_params: Optional[rss.RssParams] = None) -> TrajectoryRecord:
    """Drive one full episode and materialize its record.

    env_source(state, problem) supplies the joint environment action each
    step; RSS verdicts are computed per step with rss_params (defaults).
    """
    params = rss_params if rss_params is not None else rss.RssParams()
    state = problem.initial_state()
    steps = []
    total = 0.0
    while not sim.is_terminal(state):
        t = state.t
        env_action = env_source(state, problem)
        state, reward, _ = problem.step(state, env_action)
        total += reward
        steps.append(StepRecord(
            t=t,
            env_action=tuple(int(a) for a in env_action),
            ego_action=state.last_ego_action,
            observation=sim.observe_ego(state),
            reward=reward,
            state=state,
            verdict=rss.evaluate_state(state, state.last_ego_action, params),
        ))
    return TrajectoryRecord(
        sim_config=problem.sim_cfg,
        seed=problem.seed,
        reward_kind=problem.reward_kind,
        outcome=outcome_of(state),
        total_reward=total,
        steps=steps,
    )


def replay_trajectory(record: TrajectoryRecord, sut_net: sut.QNetwork,
                      reward_cfg: rewards.RewardConfig = rewards.RewardConfig(),
                      hcs_net=None,
                      rss_params: Optional[rss.RssParams] = None) -> TrajectoryRecord:
    """Re-simulate a stored record's env-action sequence from scratch."""
    problem = HighwayProblem(
        record.sim_config, record.seed, sut_net,
        reward_kind=record.reward_kind, reward_cfg=reward_cfg, hcs_net=hcs_net,
    )
    return run_episode(problem, scripted_source(record.env_actions()), rss_params)


def replay_matches(original: TrajectoryRecord, replayed: TrajectoryRecord) -> bool:
    """Bit-exact agreement of rewards, snapshots, and RSS verdicts."""
    if len(original.steps) != len(replayed.steps):
        return False
    if original.outcome != replayed.outcome:
        return False
    for a, b in zip(original.steps, replayed.steps):
        if a.reward != b.reward or a.env_action != b.env_action:
            return False
        if a.ego_action != b.ego_action or a.verdict != b.verdict:
            return False
        for field in ("x", "y", "speed", "target_speed", "target_lane"):
            if not np.array_equal(getattr(a.state, field), getattr(b.state, field)):
                return False
    return original.total_reward == replayed.total_reward


# ---------------------------------------------------------------------------
# Serialization.


def simconfig_to_dict(cfg: sim.SimConfig) -> dict:
    return dataclasses.asdict(cfg)


def simconfig_from_dict(d: dict) -> sim.SimConfig:
    known = {f.name for f in dataclasses.fields(sim.SimConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown simulator config keys: {sorted(unknown)}")
    return sim.SimConfig(**d)


def state_to_dict(state: sim.SimState) -> dict:
    return {
        "t": state.t,
        "ego_index": state.ego_index,
        "ids": state.ids.tolist(),
        "x": state.x.tolist(),
        "y": state.y.tolist(),
        "speed": state.speed.tolist(),
        "target_speed": state.target_speed.tolist(),
        "target_lane": state.target_lane.tolist(),
        "failure": state.failure,
        "invalid": state.invalid,
        "last_ego_action": None if state.last_ego_action is None
                           else int(state.last_ego_action),
    }


def state_from_dict(d: dict, cfg: sim.SimConfig) -> sim.SimState:
    last = d["last_ego_action"]
    return sim.SimState(
        config=cfg,
        t=int(d["t"]),
        ids=np.asarray(d["ids"], dtype=np.int64),
        x=np.asarray(d["x"], dtype=float),
        y=np.asarray(d["y"], dtype=float),
        speed=np.asarray(d["speed"], dtype=float),
        target_speed=np.asarray(d["target_speed"], dtype=float),
        target_lane=np.asarray(d["target_lane"], dtype=np.int64),
        ego_index=int(d["ego_index"]),
        failure=bool(d["failure"]),
        invalid=bool(d["invalid"]),
        last_ego_action=None if last is None else sim.DiscreteAction(last),
    )


def _verdict_to_dict(v: Optional[rss.RssVerdict]):
    if v is None:
        return None
    return dataclasses.asdict(v)


def _verdict_from_dict(d) -> Optional[rss.RssVerdict]:
    if d is None:
        return None
    return rss.RssVerdict(**d)


def save_trajectory(record: TrajectoryRecord, path) -> None:
    header = {
        "schema": SCHEMA_VERSION,
        "kind": "trajectory",
        "sim_config": simconfig_to_dict(record.sim_config),
        "seed": record.seed,
        "reward_kind": record.reward_kind,
        "outcome": record.outcome,
        "total_reward": record.total_reward,
        "config_digest": record.config_digest,
        "n_steps": len(record.steps),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for step in record.steps:
            fh.write(json.dumps({
                "t": step.t,
                "env_action": list(step.env_action),
                "ego_action": int(step.ego_action),
                "observation": np.asarray(step.observation).reshape(-1).tolist(),
                "reward": step.reward,
                "state": state_to_dict(step.state),
                "verdict": _verdict_to_dict(step.verdict),
            }) + "\n")


def load_trajectory(path) -> TrajectoryRecord:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trajectory file")
    header = json.loads(lines[0])
    if header.get("kind") != "trajectory":
        raise ValueError(f"{path}: not a trajectory file")
    if header.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')}")
    cfg = simconfig_from_dict(header["sim_config"])
    steps = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
            steps.append(StepRecord(
                t=int(d["t"]),
                env_action=tuple(int(a) for a in d["env_action"]),
                ego_action=sim.DiscreteAction(d["ego_action"]),
                observation=np.asarray(d["observation"], dtype=float).reshape(
                    sim.OBS_VEHICLES, 4),
                reward=float(d["reward"]),
                state=state_from_dict(d["state"], cfg),
                verdict=_verdict_from_dict(d["verdict"]),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{i}: malformed step record: {exc}") from exc
    if len(steps) != header["n_steps"]:
        raise ValueError(
            f"{path}: expected {header['n_steps']} steps, found {len(steps)}"
        )
    return TrajectoryRecord(
        sim_config=cfg,
        seed=int(header["seed"]),
        reward_kind=header["reward_kind"],
        outcome=header["outcome"],
        total_reward=float(header["total_reward"]),
        steps=steps,
        config_digest=header.get("config_digest", ""),
    )
