"""The system-under-test: a small Q-network driving policy trained with DQN.

The network maps the flattened 5x4 ego observation (20 inputs) to one
Q-value per discrete action.  Training runs against the simulator with all
environment vehicles holding IDLE; the per-step reward pays for speed,
penalizes collisions, and mildly discourages lane changes.

`qcs_score` measures how strongly the policy prefers its best action over a
random one (max Q minus mean Q); states where this spread is large are the
Q-critical states used by one of the search rewards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import sim
from .mlp import Adam, Mlp, TrainingError, load_mlp, save_mlp

OBS_DIM = sim.OBS_VEHICLES * 4
N_ACTIONS = len(sim.DiscreteAction)

WEIGHTS_MAGIC = b"QNET"
WEIGHTS_VERSION = 1


@dataclass
class QNetwork:
    mlp: Mlp

    @property
    def n_actions(self) -> int:
        return self.mlp.dims[-1]


@dataclass(frozen=True)
class DqnConfig:
    episodes: int = 40000
    replay_capacity: int = 100000
    batch_size: int = 64
    gamma: float = 0.95
    learning_rate: float = 5e-4
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_steps: int = 100000
    target_sync_interval: int = 1000
    warmup_transitions: int = 1000
    seed: int = 0
    w_speed: float = 0.4
    w_collision: float = 8.0
    w_lane_change: float = 0.1

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in (
            "replay_capacity",
            "batch_size",
            "epsilon_decay_steps",
            "target_sync_interval",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


def new_qnetwork(seed: int, hidden: tuple = (64, 64), obs_dim: int = OBS_DIM) -> QNetwork:
    return QNetwork(Mlp.create((obs_dim, *hidden, N_ACTIONS), seed))


def q_values(net: QNetwork, obs: np.ndarray) -> np.ndarray:
    """Q-value per action for one observation; raises if outputs go non-finite."""
    q = net.mlp.forward(np.asarray(obs, dtype=float).reshape(-1))[0]
    if not np.all(np.isfinite(q)):
        raise TrainingError("Q-network produced non-finite values")
    return q


def act_greedy(net: QNetwork, obs: np.ndarray) -> sim.DiscreteAction:
    """Argmax action; ties go to the lowest action index."""
    return sim.DiscreteAction(int(np.argmax(q_values(net, obs))))


def qcs_score(net: QNetwork, obs: np.ndarray) -> float:
    q = q_values(net, obs)
    return float(q.max() - q.mean())


def is_qcs_critical(net: QNetwork, obs: np.ndarray, threshold_t: float) -> bool:
    if threshold_t < 0:
        raise ValueError("threshold must be >= 0")
    return qcs_score(net, obs) > threshold_t


def policy_handle(net: QNetwork) -> sim.PolicyHandle:
    """Greedy policy closure in the shape the simulator expects."""
    return lambda obs: act_greedy(net, obs)


def save_weights(path, net: QNetwork) -> None:
    save_mlp(path, net.mlp, WEIGHTS_MAGIC, WEIGHTS_VERSION)


def load_weights(path) -> QNetwork:
    net, _ = load_mlp(path, WEIGHTS_MAGIC, WEIGHTS_VERSION)
    return QNetwork(net)


# ---------------------------------------------------------------------------
# Training.


class _Replay:
    """Uniform ring-buffer replay memory over fixed-size arrays."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.obs[idx],
            self.action[idx],
            self.reward[idx],
            self.next_obs[idx],
            self.done[idx],
        )


def step_reward(cfg: DqnConfig, sim_cfg: sim.SimConfig, ego_speed: float,
                action: int, collided: bool) -> float:
    speed_frac = (ego_speed - sim_cfg.speed_min) / (sim_cfg.speed_max - sim_cfg.speed_min)
    lane_change = action in (sim.DiscreteAction.LANE_LEFT, sim.DiscreteAction.LANE_RIGHT)
    return (
        cfg.w_speed * speed_frac
        - cfg.w_collision * float(collided)
        - cfg.w_lane_change * float(lane_change)
    )


def td_loss_and_grads(net: QNetwork, target_net: QNetwork, batch, gamma: float):
    """Mean squared TD error over a batch, plus parameter gradients."""
    obs, action, reward, next_obs, done = batch
    n = len(action)
    q_next = target_net.mlp.forward(next_obs)
    target = reward + gamma * (1.0 - done) * q_next.max(axis=1)
    out, cache = net.mlp.forward_cached(obs)
    chosen = out[np.arange(n), action]
    err = chosen - target
    loss = float(np.mean(err**2))
    grad_out = np.zeros_like(out)
    grad_out[np.arange(n), action] = 2.0 * err / n
    return loss, net.mlp.backward(cache, grad_out)


def train_dqn(sim_factory: Callable[[int], sim.SimState], config: DqnConfig,
              hidden: tuple = (64, 64)) -> QNetwork:
    """Train a policy with vanilla DQN against the IDLE-traffic simulator.

    sim_factory maps an episode seed to a fresh initial state.  With
    episodes=0 the freshly initialized network is returned untouched.
    Fully seeded: identical inputs give identical weights.
    """
    config.validate()
    net = new_qnetwork(config.seed, hidden)
    if config.episodes == 0:
        return net
    target_net = QNetwork(net.mlp.copy())
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    replay = _Replay(config.replay_capacity, net.mlp.dims[0])
    optim = Adam(lr=config.learning_rate)
    env_steps = 0
    grad_steps = 0

    for episode in range(config.episodes):
        state = sim_factory(config.seed + episode)
        obs = sim.observe_ego(state).reshape(-1)
        while not sim.is_terminal(state):
            frac = min(1.0, env_steps / config.epsilon_decay_steps)
            eps = config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)
            if rng.random() < eps:
                action = int(rng.integers(N_ACTIONS))
            else:
                action = int(np.argmax(net.mlp.forward(obs)[0]))
            state, in_e = sim.step(state, sim.IDLE_ENV_ACTION, sim.fixed_policy(action))
            next_obs = sim.observe_ego(state).reshape(-1)
            ego_speed = float(state.speed[state.ego_index])
            reward = step_reward(config, state.config, ego_speed, action, in_e)
            replay.push(obs, action, reward, next_obs, sim.is_terminal(state))
            obs = next_obs
            env_steps += 1

            if replay.size >= max(config.warmup_transitions, config.batch_size):
                batch = replay.sample(config.batch_size, rng)
                loss, grads = td_loss_and_grads(net, target_net, batch, config.gamma)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"TD loss diverged at episode {episode}, step {env_steps}: {loss}"
                    )
                optim.step(net.mlp, grads)
                grad_steps += 1
                if grad_steps % config.target_sync_interval == 0:
                    target_net = QNetwork(net.mlp.copy())
    net.mlp.validate_finite()
    return net


def evaluate_policy(sim_factory: Callable[[int], sim.SimState], net: QNetwork,
                    episodes: int, seed: int) -> float:
    """Collision rate of the greedy policy over seeded IDLE-traffic episodes."""
    handle = policy_handle(net)
    collisions = 0
    for episode in range(episodes):
        state = sim_factory(seed + episode)
        while not sim.is_terminal(state):
            state, in_e = sim.step(state, sim.IDLE_ENV_ACTION, handle)
            if in_e:
                collisions += 1
                break
    return collisions / episodes
