"""Shared fixtures: small worlds and cheap trained models for the unit tests.

Heavyweight artifacts for the acceptance suite live in test_acceptance.py
behind disk caches; everything here is fast enough to rebuild per session.
"""

from __future__ import annotations

import numpy as np
import pytest

from highway_ast import classifier, dataset, sim, sut


@pytest.fixture(scope="session")
def default_cfg() -> sim.SimConfig:
    return sim.SimConfig()


@pytest.fixture(scope="session")
def micro_cfg() -> sim.SimConfig:
    # 4 vehicles on a short road: fast episodes, still multi-lane.
    return sim.SimConfig(road_length=120.0, vehicle_count=4, horizon_T=10)


@pytest.fixture(scope="session")
def untrained_net() -> sut.QNetwork:
    return sut.new_qnetwork(seed=0)


@pytest.fixture(scope="session")
def micro_net(micro_cfg) -> sut.QNetwork:
    """A briefly trained driver for the micro world; quality is irrelevant,
    it only has to be a deterministic non-degenerate policy."""
    cfg = sut.DqnConfig(episodes=60, epsilon_decay_steps=300, warmup_transitions=50,
                        target_sync_interval=100, seed=7)
    return sut.train_dqn(lambda seed: sim.init(micro_cfg, seed), cfg)


@pytest.fixture(scope="session")
def labeled_samples(default_cfg, micro_net):
    """Oracle-labeled samples from random full-size episodes."""
    samples = dataset.collect(default_cfg, micro_net, "random-sim", episodes=40, seed=11)
    return dataset.label_with_oracle(samples)


@pytest.fixture(scope="session")
def hcs_training_pairs(labeled_samples):
    return dataset.training_pairs(dataset.balance(labeled_samples, seed=0))


@pytest.fixture(scope="session")
def micro_hcs(hcs_training_pairs) -> classifier.HcsNetwork:
    return classifier.train(hcs_training_pairs, classifier.HcsTrainConfig(seed=1))


@pytest.fixture()
def rng():
    return np.random.default_rng(np.random.PCG64(1234))
