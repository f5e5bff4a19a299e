"""Per-step search rewards.

All three variants share the terminal branches: a failure state pays exactly
0 and an episode that runs out of time without failing pays a large negative
sentinel standing in for minus infinity.  They differ only in the live
branch, which shapes the search toward danger:

  heur  — normalized closeness to the same-lane lead vehicle
  qcs   — the policy's Q-value spread (max minus mean)
  hcs   — classifier mean danger probability blended with the heuristic,
          weighted by predictive variance: (1 - sigma2) * beta * mu
          + sigma2 * h(s)

Episodes invalidated by environment-only collisions are mapped onto the
horizon branch by the context builder (t is set to T), so escaping into a
non-failure crash is never profitable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

REWARD_KINDS = ("heur", "qcs", "hcs")


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 1.0
    gap_max: float = 60.0
    horizon_penalty: float = -1e6
    n_passes: int = 30

    def validate(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.gap_max <= 0:
            raise ValueError("gap_max must be > 0")
        if self.horizon_penalty >= 0:
            raise ValueError("horizon_penalty must be negative")
        if self.n_passes < 2:
            raise ValueError("n_passes must be >= 2")


@dataclass(frozen=True)
class StepContext:
    """Everything a reward function may look at after one step."""

    in_E: bool
    t: int
    T: int
    lead_gap: Optional[float] = None
    qcs: float = 0.0
    prediction: Optional[tuple] = None  # (mu, sigma2)


def h(lead_gap: Optional[float], gap_max: float) -> float:
    """Normalized longitudinal danger: 1 at contact, 0 at or beyond gap_max.

    No same-lane leader means no longitudinal danger, hence 0.
    """
    if gap_max <= 0:
        raise ValueError("gap_max must be > 0")
    if lead_gap is None:
        return 0.0
    gap = min(max(lead_gap, 0.0), gap_max)
    return 1.0 - gap / gap_max


def r_heur(ctx: StepContext, cfg: RewardConfig) -> float:
    if ctx.in_E:
        return 0.0
    if ctx.t >= ctx.T:
        return cfg.horizon_penalty
    return h(ctx.lead_gap, cfg.gap_max)


def r_qcs(ctx: StepContext, cfg: RewardConfig) -> float:
    if ctx.in_E:
        return 0.0
    if ctx.t >= ctx.T:
        return cfg.horizon_penalty
    return ctx.qcs


def r_hcs(ctx: StepContext, cfg: RewardConfig) -> float:
    if ctx.in_E:
        return 0.0
    if ctx.t >= ctx.T:
        return cfg.horizon_penalty
    if ctx.prediction is None:
        raise ValueError("hcs reward requires a classifier prediction in the live branch")
    mu, sigma2 = ctx.prediction
    return (1.0 - sigma2) * cfg.beta * mu + sigma2 * h(ctx.lead_gap, cfg.gap_max)


_REWARD_FNS = {"heur": r_heur, "qcs": r_qcs, "hcs": r_hcs}


def reward_fn(kind: str) -> Callable[[StepContext, RewardConfig], float]:
    try:
        return _REWARD_FNS[kind]
    except KeyError:
        raise ValueError(f"unknown reward kind {kind!r}, expected one of {REWARD_KINDS}")
