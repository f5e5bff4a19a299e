"""Responsibility-Sensitive Safety monitor.

Closed-form minimum safe distances: longitudinally, the rear vehicle must be
able to stop behind the front one after reacting for response_time at worst
case acceleration; laterally, both vehicles get a reaction-then-brake
allowance on their approach speeds plus a fixed mu margin.  A state is
dangerous w.r.t. another vehicle when every applicable margin is violated
(same-lane pairs need only the longitudinal one), and the response is
improper when the ego is the rear vehicle of a dangerous pair and does not
brake.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sim import DiscreteAction, SimState


@dataclass(frozen=True)
class RssParams:
    response_time: float = 1.0
    accel_max: float = 2.0
    brake_min: float = 4.0
    brake_max: float = 8.0
    lateral_accel_max: float = 1.0
    lateral_brake_min: float = 1.0
    lateral_mu: float = 0.2

    def validate(self) -> None:
        for name in (
            "response_time",
            "accel_max",
            "brake_min",
            "brake_max",
            "lateral_accel_max",
            "lateral_brake_min",
            "lateral_mu",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.brake_min > self.brake_max:
            raise ValueError("brake_min must not exceed brake_max")


@dataclass(frozen=True)
class RssVerdict:
    longitudinal_unsafe: bool
    lateral_unsafe: bool
    dangerous: bool
    improper_response: bool


@dataclass(frozen=True)
class TrajectoryRssSummary:
    steps_total: int
    steps_dangerous: int
    steps_improper: int
    proportion_dangerous: float
    proportion_improper: float


def safe_longitudinal_distance(v_rear: float, v_front: float, p: RssParams) -> float:
    """Minimum gap for the rear vehicle to stop behind a braking front vehicle."""
    if v_rear < 0 or v_front < 0:
        raise ValueError("longitudinal speeds must be >= 0")
    rho = p.response_time
    v_react = v_rear + rho * p.accel_max
    d = (
        v_rear * rho
        + 0.5 * p.accel_max * rho**2
        + v_react**2 / (2.0 * p.brake_min)
        - v_front**2 / (2.0 * p.brake_max)
    )
    return max(0.0, d)


def _lateral_side(v: float, p: RssParams) -> float:
    # Reaction drift plus signed braking-stop distance, floored: a vehicle
    # moving away contributes nothing.
    rho = p.response_time
    v_react = v + rho * p.lateral_accel_max
    d = v * rho + 0.5 * p.lateral_accel_max * rho**2
    d += np.sign(v_react) * v_react**2 / (2.0 * p.lateral_brake_min)
    return max(0.0, d)


def safe_lateral_distance(v1_lat: float, v2_lat: float, p: RssParams) -> float:
    """Minimum lateral gap; inputs are signed speeds toward the other vehicle."""
    return p.lateral_mu + max(0.0, _lateral_side(v1_lat, p) + _lateral_side(v2_lat, p))


def evaluate_state(state: SimState, sut_action: DiscreteAction, p: RssParams) -> RssVerdict:
    """RSS verdict for the ego against every other vehicle in the state."""
    cfg = state.config
    e = state.ego_index
    lanes = state.lanes()
    vy = state.lateral_velocity()

    longitudinal_unsafe = False
    lateral_unsafe = False
    dangerous = False
    must_brake = False
    for i in range(state.n):
        if i == e:
            continue
        dx = state.x[i] - state.x[e]
        long_gap = abs(dx) - cfg.vehicle_length
        if dx >= 0:
            v_rear, v_front = state.speed[e], state.speed[i]
        else:
            v_rear, v_front = state.speed[i], state.speed[e]
        long_violated = long_gap < safe_longitudinal_distance(v_rear, v_front, p)

        dy = state.y[i] - state.y[e]
        lat_gap = abs(dy) - cfg.vehicle_width
        toward = np.sign(dy) if dy != 0 else 1.0
        v1 = vy[e] * toward
        v2 = -vy[i] * toward
        lat_violated = lat_gap < safe_lateral_distance(v1, v2, p)

        longitudinal_unsafe = longitudinal_unsafe or long_violated
        lateral_unsafe = lateral_unsafe or lat_violated
        same_lane = lanes[i] == lanes[e]
        vehicle_dangerous = long_violated if same_lane else (long_violated and lat_violated)
        if vehicle_dangerous:
            dangerous = True
            if dx >= 0 and long_violated:
                must_brake = True

    improper = must_brake and sut_action != DiscreteAction.SLOWER
    # comparisons against numpy scalars yield np.bool_, which json rejects
    return RssVerdict(
        longitudinal_unsafe=bool(longitudinal_unsafe),
        lateral_unsafe=bool(lateral_unsafe),
        dangerous=bool(dangerous),
        improper_response=bool(improper),
    )


def summarize(trajectory, p: RssParams) -> TrajectoryRssSummary:
    """Aggregate per-step verdicts over a trajectory record.

    Accepts anything with a `steps` sequence whose items expose `state` and
    `ego_action`.
    """
    steps: Sequence = trajectory.steps
    if len(steps) == 0:
        raise ValueError("cannot summarize an empty trajectory")
    n_dangerous = 0
    n_improper = 0
    for step in steps:
        verdict = evaluate_state(step.state, step.ego_action, p)
        n_dangerous += verdict.dangerous
        n_improper += verdict.improper_response
    total = len(steps)
    return TrajectoryRssSummary(
        steps_total=total,
        steps_dangerous=n_dangerous,
        steps_improper=n_improper,
        proportion_dangerous=n_dangerous / total,
        proportion_improper=n_improper / total,
    )
