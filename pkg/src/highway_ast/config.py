"""Experiment configuration: one JSON file bundling every component's knobs.

Each section maps onto one component config dataclass.  Loading validates
every key and names the offending section/key on error; a short digest of
the canonical serialized form is embedded in all output artifacts so results
can be traced back to the exact configuration that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .classifier import HcsTrainConfig
from .dataset import OracleConfig
from .rewards import REWARD_KINDS, RewardConfig
from .rss import RssParams
from .sim import SimConfig
from .solver import MctsConfig
from .sut import DqnConfig


class ConfigError(ValueError):
    """Configuration file is malformed or fails validation."""


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = SimConfig()
    dqn: DqnConfig = DqnConfig()
    reward: RewardConfig = RewardConfig()
    reward_kind: str = "heur"
    mcts: MctsConfig = MctsConfig()
    hcs_train: HcsTrainConfig = HcsTrainConfig()
    oracle: OracleConfig = OracleConfig()
    rss: RssParams = RssParams()
    seeds: tuple = tuple(range(20))
    output_dir: str = "runs"

    def validate(self) -> None:
        try:
            self.sim.validate()
            self.dqn.validate()
            self.reward.validate()
            self.mcts.validate()
            self.hcs_train.validate()
            self.oracle.validate()
            self.rss.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigError(
                f"reward_kind: expected one of {REWARD_KINDS}, got {self.reward_kind!r}"
            )
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")


_SECTIONS = {
    "sim": SimConfig,
    "dqn": DqnConfig,
    "reward": RewardConfig,
    "mcts": MctsConfig,
    "hcs_train": HcsTrainConfig,
    "oracle": OracleConfig,
    "rss": RssParams,
}


def to_dict(cfg: ExperimentConfig) -> dict:
    d = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}
    d["reward_kind"] = cfg.reward_kind
    d["seeds"] = list(cfg.seeds)
    d["output_dir"] = cfg.output_dir
    return d


def from_dict(d: dict) -> ExperimentConfig:
    known_top = set(_SECTIONS) | {"reward_kind", "seeds", "output_dir"}
    unknown = set(d) - known_top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = d.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name}: expected an object")
        valid = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - valid
        if bad:
            raise ConfigError(f"{name}: unknown keys {sorted(bad)}")
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    cfg = ExperimentConfig(
        reward_kind=d.get("reward_kind", "heur"),
        seeds=tuple(d.get("seeds", tuple(range(20)))),
        output_dir=d.get("output_dir", "runs"),
        **kwargs,
    )
    cfg.validate()
    return cfg


def config_digest(cfg: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(raw)
