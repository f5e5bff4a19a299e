"""Training data for the danger classifier: collection, labeling, balancing,
and persistence.

Samples come from two collection modes: plain random simulation, and
harvesting the episodes an adversarial search visits under the heuristic
reward (ranked by return, so the harvest is biased toward near-failure
traffic).  Labels normally come from a scripted oracle that flags small
lead gaps, short times-to-collision, and contested lane changes; an
interactive terminal mode records human labels instead.  Files are
line-delimited JSON, one self-describing sample per line, lossless for
float round-trips.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import classifier, sim, solver
from .render import render_state
from .trajectory import (
    HighwayProblem,
    SCHEMA_VERSION,
    TrajectoryRecord,
    random_source,
    run_episode,
    scripted_source,
    simconfig_from_dict,
    simconfig_to_dict,
    state_from_dict,
    state_to_dict,
)

PROVENANCES = ("random-sim", "ast-heuristic")
LABELERS = ("oracle", "human")


@dataclass(frozen=True)
class StateSample:
    feature: np.ndarray
    state: sim.SimState
    ego_action: sim.DiscreteAction
    env_action: tuple
    provenance: str
    episode_id: int
    step_index: int


@dataclass(frozen=True)
class LabeledSample:
    sample: StateSample
    label: int
    labeler: str


@dataclass(frozen=True)
class OracleConfig:
    ttc_threshold: float = 2.0
    gap_threshold: float = 10.0
    lateral_gap_threshold: float = 1.0

    def validate(self) -> None:
        for name in ("ttc_threshold", "gap_threshold", "lateral_gap_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _samples_from_record(record: TrajectoryRecord, provenance: str,
                         episode_id: int) -> list:
    out = []
    for step in record.steps:
        feature = classifier.featurize(step.ego_action, step.env_action, step.observation)
        out.append(StateSample(
            feature=feature,
            state=step.state,
            ego_action=step.ego_action,
            env_action=step.env_action,
            provenance=provenance,
            episode_id=episode_id,
            step_index=step.t,
        ))
    return out


def collect(sim_cfg: sim.SimConfig, sut_net, mode: str, episodes: int, seed: int,
            mcts_cfg: Optional[solver.MctsConfig] = None) -> list:
    """Gather one StateSample per step over the requested number of episodes.

    random-sim: independent episodes with uniformly random env actions.
    ast-heuristic: one heuristic-reward search; its visited episodes are
    ranked by return (deduplicated) and the top `episodes` are re-simulated,
    which skews the harvest toward dangerous traffic.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if mode not in PROVENANCES:
        raise ValueError(f"unknown collection mode {mode!r}, expected one of {PROVENANCES}")

    samples = []
    if mode == "random-sim":
        for ep in range(episodes):
            problem = HighwayProblem(sim_cfg, seed + ep, sut_net, reward_kind="heur")
            record = run_episode(problem, random_source(100003 * seed + ep))
            samples.extend(_samples_from_record(record, mode, ep))
        return samples

    cfg = mcts_cfg if mcts_cfg is not None else solver.MctsConfig(
        iterations_per_step=40, seed=seed)
    if cfg.max_depth is None:
        cfg = dataclasses.replace(cfg, max_depth=sim_cfg.horizon_T)
    problem = HighwayProblem(sim_cfg, seed, sut_net, reward_kind="heur")
    result = solver.mcts_search(problem, cfg)
    harvest = solver.top_episodes(result.episodes, episodes)
    for ep_id, ep in enumerate(harvest):
        record = run_episode(problem, scripted_source(list(ep.actions)))
        samples.extend(_samples_from_record(record, mode, ep_id))
    return samples


def oracle_label(sample: StateSample, cfg: OracleConfig = OracleConfig()) -> int:
    """Scripted danger label for one sample: 1 iff any oracle rule fires."""
    return oracle_label_state(sample.state, cfg)


def oracle_label_state(state: sim.SimState, cfg: OracleConfig = OracleConfig()) -> int:
    """Scripted danger label: 1 iff any rule fires.

    (a) lead gap below gap_threshold; (b) time-to-collision to the leader
    below ttc_threshold while closing; (c) mid-lane-change with any vehicle
    in the target lane longitudinally within vehicle_length +
    lateral_gap_threshold.
    """
    cfg.validate()
    sim_cfg = state.config
    e = state.ego_index

    lead = sim.lead_vehicle(state)
    if lead is not None:
        gap = float(state.x[lead] - state.x[e]) - sim_cfg.vehicle_length
        if gap < cfg.gap_threshold:
            return 1
        closing = float(state.speed[e] - state.speed[lead])
        if closing > 0 and max(gap, 0.0) / closing < cfg.ttc_threshold:
            return 1

    target = int(state.target_lane[e])
    target_y = target * sim_cfg.lane_width
    mid_change = abs(float(state.y[e]) - target_y) > 1e-9
    if mid_change:
        lanes = state.lanes()
        margin = sim_cfg.vehicle_length + cfg.lateral_gap_threshold
        for i in range(state.n):
            if i == e or lanes[i] != target:
                continue
            if abs(float(state.x[i] - state.x[e])) < margin:
                return 1
    return 0


def label_with_oracle(samples: Sequence, cfg: OracleConfig = OracleConfig()) -> list:
    return [LabeledSample(s, oracle_label(s, cfg), "oracle") for s in samples]


def balance(labeled: Sequence, seed: int) -> list:
    """Down-sample the majority class to the minority count and shuffle."""
    positives = [s for s in labeled if s.label == 1]
    negatives = [s for s in labeled if s.label == 0]
    if not positives or not negatives:
        raise ValueError(
            f"cannot balance: {len(positives)} positive / {len(negatives)} negative samples"
        )
    rng = np.random.default_rng(np.random.PCG64(seed))
    minority = min(len(positives), len(negatives))
    for group in (positives, negatives):
        if len(group) > minority:
            keep = rng.permutation(len(group))[:minority]
            group[:] = [group[i] for i in sorted(keep)]
    merged = positives + negatives
    order = rng.permutation(len(merged))
    return [merged[i] for i in order]


def interactive_label(samples: Sequence, in_stream, out_stream) -> list:
    """Terminal labeling loop: renders each snapshot, reads 0 / 1 / skip."""
    labeled = []
    for idx, sample in enumerate(samples):
        out_stream.write(
            f"\nsample {idx + 1}/{len(samples)} "
            f"(episode {sample.episode_id}, step {sample.step_index}, "
            f"{sample.provenance})\n"
        )
        out_stream.write(render_state(sample.state) + "\n")
        while True:
            out_stream.write("dangerous? [1=yes 0=no skip]: ")
            out_stream.flush()
            line = in_stream.readline()
            if line == "":  # end of stream finalizes what we have
                return labeled
            answer = line.strip().lower()
            if answer in ("0", "1"):
                labeled.append(LabeledSample(sample, int(answer), "human"))
                break
            if answer == "skip":
                break
            out_stream.write("unrecognized input; enter 1, 0, or skip\n")
    return labeled


def verify_features(samples: Sequence) -> None:
    """Audit that every feature re-derives from its snapshot and actions."""
    for i, item in enumerate(samples):
        s = item.sample if isinstance(item, LabeledSample) else item
        rebuilt = classifier.featurize(
            s.ego_action, s.env_action, sim.observe_ego(s.state))
        if not np.array_equal(rebuilt, s.feature):
            raise ValueError(f"sample {i}: feature does not match its snapshot")


# ---------------------------------------------------------------------------
# Persistence.


def _sample_to_dict(item) -> dict:
    if isinstance(item, LabeledSample):
        sample, label, labeler = item.sample, item.label, item.labeler
    else:
        sample, label, labeler = item, None, None
    return {
        "schema": SCHEMA_VERSION,
        "provenance": sample.provenance,
        "episode": sample.episode_id,
        "step": sample.step_index,
        "label": label,
        "labeler": labeler,
        "feature": np.asarray(sample.feature).tolist(),
        "ego_action": int(sample.ego_action),
        "env_action": [int(a) for a in sample.env_action],
        "sim_config": simconfig_to_dict(sample.state.config),
        "state": state_to_dict(sample.state),
    }


def _sample_from_dict(d: dict):
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported sample schema {d.get('schema')}")
    feature = np.asarray(d["feature"], dtype=float)
    if feature.shape != (classifier.FEATURE_DIM,):
        raise ValueError(
            f"feature must have {classifier.FEATURE_DIM} entries, got {feature.shape[0]}"
        )
    cfg = simconfig_from_dict(d["sim_config"])
    sample = StateSample(
        feature=feature,
        state=state_from_dict(d["state"], cfg),
        ego_action=sim.DiscreteAction(d["ego_action"]),
        env_action=tuple(int(a) for a in d["env_action"]),
        provenance=d["provenance"],
        episode_id=int(d["episode"]),
        step_index=int(d["step"]),
    )
    if d["label"] is None:
        return sample
    return LabeledSample(sample, int(d["label"]), d["labeler"])


def export_samples(items: Sequence, path) -> None:
    """One sample per line; labeled and unlabeled samples share the format."""
    with open(path, "w") as fh:
        for item in items:
            fh.write(json.dumps(_sample_to_dict(item)) + "\n")


def import_samples(path) -> list:
    """Load samples; lines with a label load as LabeledSample."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(_sample_from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed sample: {exc}") from exc
    return out


def load_labeled(path) -> list:
    """Strict loader for training: every line must carry a label."""
    items = import_samples(path)
    unlabeled = sum(1 for item in items if not isinstance(item, LabeledSample))
    if unlabeled:
        raise ValueError(f"{path}: {unlabeled} samples have no label; run the label stage")
    return items


def training_pairs(labeled: Sequence) -> list:
    """(feature, label) pairs in the shape classifier.train expects."""
    return [(item.sample.feature, item.label) for item in labeled]
