"""Learned critical-state classifier with dropout-based uncertainty.

The input is a 65-entry feature vector: one-hot ego action (5), one-hot
action of each of the 8 commanded environment vehicles (40), and the
flattened normalized ego observation (20).  The network ends in a 2-way
softmax whose second entry is the danger probability; keeping dropout active
at prediction time and aggregating n stochastic passes yields a mean danger
probability mu and a variance sigma2 that serves as an uncertainty proxy.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import sim
from .mlp import Adam, Mlp, TrainingError, load_mlp, save_mlp, softmax

FEATURE_DIM = 65
_N_ACTIONS = len(sim.DiscreteAction)
_ONEHOT_DIM = _N_ACTIONS * (1 + sim.N_CONTROLLED)  # 45

MODEL_MAGIC = b"HCSN"
MODEL_VERSION = 1


@dataclass
class HcsNetwork:
    mlp: Mlp
    dropout_p: float


@dataclass(frozen=True)
class Prediction:
    mu: float
    sigma2: float
    n: int


@dataclass(frozen=True)
class HcsTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    dropout_p: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.dropout_p <= 0.5:
            raise ValueError("dropout_p must be in (0, 0.5]")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("counts must be positive")


def featurize(a_ego, a_env, o_ego: np.ndarray) -> np.ndarray:
    """Fixed-layout 65-entry encoding of (ego action, env actions, observation)."""
    if len(a_env) != sim.N_CONTROLLED:
        raise ValueError(f"expected {sim.N_CONTROLLED} environment actions, got {len(a_env)}")
    f = np.zeros(FEATURE_DIM)
    f[int(a_ego)] = 1.0
    for i, a in enumerate(a_env):
        f[_N_ACTIONS * (1 + i) + int(a)] = 1.0
    obs = np.asarray(o_ego, dtype=float).reshape(-1)
    if obs.shape[0] != FEATURE_DIM - _ONEHOT_DIM:
        raise ValueError(f"observation must flatten to {FEATURE_DIM - _ONEHOT_DIM} entries")
    f[_ONEHOT_DIM:] = obs
    return f


def decode_actions(f: np.ndarray) -> tuple:
    """Recover (a_ego, a_env) from the one-hot block of a feature vector."""
    a_ego = sim.DiscreteAction(int(np.argmax(f[:_N_ACTIONS])))
    a_env = tuple(
        sim.DiscreteAction(int(np.argmax(f[_N_ACTIONS * (1 + i) : _N_ACTIONS * (2 + i)])))
        for i in range(sim.N_CONTROLLED)
    )
    return a_ego, a_env


def new_hcs_network(seed: int, dropout_p: float = 0.15, hidden: tuple = (64, 64),
                    in_dim: int = FEATURE_DIM) -> HcsNetwork:
    return HcsNetwork(Mlp.create((in_dim, *hidden, 2), seed), dropout_p)


def bce_loss_and_grads(net: HcsNetwork, features: np.ndarray, labels: np.ndarray,
                       dropout_rng: Optional[np.random.Generator] = None):
    """Binary cross-entropy of the danger-class softmax output, with grads.

    Dropout is active when an rng is supplied (training); the softmax
    cross-entropy gradient is (p - onehot(label)) / batch.
    """
    p_drop = net.dropout_p if dropout_rng is not None else 0.0
    out, cache = net.mlp.forward_cached(features, dropout_p=p_drop, rng=dropout_rng)
    probs = softmax(out)
    n = len(labels)
    p_danger = np.clip(probs[:, 1], 1e-12, 1.0 - 1e-12)
    loss = float(-np.mean(labels * np.log(p_danger) + (1 - labels) * np.log(1 - p_danger)))
    grad_out = probs.copy()
    grad_out[np.arange(n), labels.astype(int)] -= 1.0
    grad_out /= n
    return loss, net.mlp.backward(cache, grad_out)


def train(dataset: Sequence, cfg: HcsTrainConfig, hidden: tuple = (64, 64)) -> HcsNetwork:
    """Mini-batch gradient descent on BCE over (feature, label) pairs."""
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    features = np.asarray([np.asarray(f, dtype=float).reshape(-1) for f, _ in dataset])
    labels = np.asarray([int(l) for _, l in dataset])
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")

    net = new_hcs_network(cfg.seed, cfg.dropout_p, hidden, in_dim=features.shape[1])
    if cfg.epochs == 0:
        return net
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    optim = Adam(lr=cfg.learning_rate)
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = bce_loss_and_grads(net, features[idx], labels[idx], dropout_rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"BCE loss diverged in epoch {epoch}: {loss}")
            optim.step(net.mlp, grads)
    net.mlp.validate_finite()
    return net


def forward_deterministic(net: HcsNetwork, f: np.ndarray) -> np.ndarray:
    """Single dropout-free pass; returns the (safe, danger) probability pair."""
    out = net.mlp.forward(np.asarray(f, dtype=float).reshape(-1))
    return softmax(out)[0]


def predict(net: HcsNetwork, f: np.ndarray, n: int, seed: int) -> Prediction:
    """n stochastic dropout passes; mu/sigma2 of the danger probability.

    The passes are batched as n rows with independent dropout masks, so one
    matrix pass covers the whole prediction.
    """
    if n < 2:
        raise ValueError("need at least 2 passes")
    rng = np.random.default_rng(np.random.PCG64(seed))
    f = np.asarray(f, dtype=float).reshape(-1)
    tiled = np.tile(f, (n, 1))
    out, _ = net.mlp.forward_cached(tiled, dropout_p=net.dropout_p, rng=rng)
    p_danger = softmax(out)[:, 1]
    return Prediction(mu=float(p_danger.mean()), sigma2=float(p_danger.var()), n=n)


def prediction_seed(state: sim.SimState) -> int:
    """Deterministic per-state seed so replays reproduce predictions exactly."""
    digest = zlib.crc32(state.x.tobytes())
    digest = zlib.crc32(state.y.tobytes(), digest)
    digest = zlib.crc32(state.speed.tobytes(), digest)
    digest = zlib.crc32(np.int64(state.t).tobytes(), digest)
    return digest


def save_model(path, net: HcsNetwork) -> None:
    save_mlp(path, net.mlp, MODEL_MAGIC, MODEL_VERSION, extras=(net.dropout_p,))


def load_model(path) -> HcsNetwork:
    net, extras = load_mlp(path, MODEL_MAGIC, MODEL_VERSION)
    if len(extras) != 1:
        raise ValueError("model file missing dropout rate")
    return HcsNetwork(net, float(extras[0]))
