"""Kinematic three-lane highway world hosting the driving policy under test.

Each decision step the ego policy picks one of five discrete actions from its
local observation, the eight environment vehicles closest to the ego execute
an externally supplied joint action, and every other vehicle holds course
(IDLE). Kinematics advance in fixed sub-steps with proportional relaxation
toward target speed and target lane center.  Any rectangle overlap ends the
episode: contact involving the ego is a failure, environment-only contact
invalidates the episode as a non-failure.

World state is stored as flat numpy arrays for speed; `SimState.vehicles`
materializes the per-vehicle view on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional, Sequence

import numpy as np

# Fixed longitudinal relaxation rate toward target speed, m/s^2.
LONGITUDINAL_ACCEL = 5.0

# The adversary commands this many nearest vehicles; the ego observes OBS_VEHICLES.
N_CONTROLLED = 8
OBS_VEHICLES = 5


class PlacementError(ValueError):
    """Initial vehicle layout cannot fit on the configured road."""


class DiscreteAction(IntEnum):
    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


# Joint command for the N_CONTROLLED nearest environment vehicles, nearest first.
EnvAction = tuple

# Policy handle: maps a 5x4 ego observation to a DiscreteAction (or int).
PolicyHandle = Callable[[np.ndarray], int]

IDLE_ENV_ACTION: EnvAction = (DiscreteAction.IDLE,) * N_CONTROLLED


@dataclass(frozen=True)
class SimConfig:
    lane_count: int = 3
    lane_width: float = 4.0
    road_length: float = 1000.0
    vehicle_count: int = 40
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    speed_min: float = 20.0
    speed_max: float = 30.0
    speed_increment: float = 5.0
    decision_dt: float = 1.0
    substeps_per_decision: int = 5
    horizon_T: int = 30
    lateral_speed: float = 2.0
    seed: int = 0
    # Observation normalization scales, shared by the policy and the classifier.
    obs_scale_x: float = 100.0
    obs_scale_y: float = 12.0
    obs_scale_vx: float = 30.0
    obs_scale_vy: float = 4.0

    def validate(self) -> None:
        if self.lane_count < 2:
            raise ValueError(f"lane_count must be >= 2, got {self.lane_count}")
        if not self.speed_min < self.speed_max:
            raise ValueError("speed_min must be strictly below speed_max")
        span = self.speed_max - self.speed_min
        steps = span / self.speed_increment
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("speed_increment must divide speed_max - speed_min")
        if self.substeps_per_decision < 1:
            raise ValueError("substeps_per_decision must be >= 1")
        if self.horizon_T < 1:
            raise ValueError("horizon_T must be >= 1")
        if self.vehicle_count < 1:
            raise ValueError("vehicle_count must be >= 1")

    def speed_set(self) -> np.ndarray:
        """The discrete target speeds vehicles may hold."""
        n = int(round((self.speed_max - self.speed_min) / self.speed_increment)) + 1
        return self.speed_min + self.speed_increment * np.arange(n, dtype=float)

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width


@dataclass(frozen=True)
class VehicleState:
    """Per-vehicle view of the world arrays (for rendering, labeling, tests)."""

    id: int
    x: float
    y: float
    speed: float
    target_speed: float
    lane: int
    target_lane: int


@dataclass(frozen=True)
class SimState:
    """Full world state at one decision step.

    Arrays are indexed by vehicle slot; `ego_index` locates the ego.  Arrays
    must be treated as immutable -- `step` always allocates fresh ones.
    """

    config: SimConfig
    t: int
    ids: np.ndarray           # (n,) int64
    x: np.ndarray             # (n,) float64
    y: np.ndarray             # (n,) float64
    speed: np.ndarray         # (n,) float64
    target_speed: np.ndarray  # (n,) float64
    target_lane: np.ndarray   # (n,) int64
    ego_index: int
    failure: bool = False
    invalid: bool = False
    last_ego_action: Optional[DiscreteAction] = None

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def ego_id(self) -> int:
        return int(self.ids[self.ego_index])

    def lanes(self) -> np.ndarray:
        """Current integer lane of every vehicle (nearest lane center)."""
        raw = np.rint(self.y / self.config.lane_width).astype(np.int64)
        return np.clip(raw, 0, self.config.lane_count - 1)

    def lateral_velocity(self) -> np.ndarray:
        """Signed lateral speed toward the target lane center (0 when settled)."""
        target_y = self.target_lane * self.config.lane_width
        dy = target_y - self.y
        vy = np.where(np.abs(dy) > 1e-9, np.sign(dy) * self.config.lateral_speed, 0.0)
        return vy

    @property
    def vehicles(self) -> list[VehicleState]:
        lanes = self.lanes()
        return [
            VehicleState(
                id=int(self.ids[i]),
                x=float(self.x[i]),
                y=float(self.y[i]),
                speed=float(self.speed[i]),
                target_speed=float(self.target_speed[i]),
                lane=int(lanes[i]),
                target_lane=int(self.target_lane[i]),
            )
            for i in range(self.n)
        ]


def init(config: SimConfig, seed: int) -> SimState:
    """Build the initial world: ego mid-lane, jittered gaps, mixed speeds.

    Environment vehicles are spread round-robin over lanes on a shared slot
    grid with uniformly jittered longitudinal gaps; alternate lanes are
    phase-shifted by half a slot, so no vehicle starts alongside a neighbor
    in an adjacent lane.  Speeds are seeded draws from the discrete speed
    set: the ego joins at the top, its own lane mixes the two top speeds,
    and the flank lanes flow uniformly one increment below the top.
    """
    config.validate()
    rng = np.random.default_rng(np.random.PCG64(seed))

    n = config.vehicle_count
    env_n = n - 1

    speed_set = config.speed_set()
    ego_lane = config.lane_count // 2

    # Round-robin lane occupancy; the ego occupies an extra slot in its own
    # lane, which also makes that lane the fullest.
    counts = [env_n // config.lane_count] * config.lane_count
    for i in range(env_n % config.lane_count):
        counts[i] += 1
    counts[ego_lane] += 1  # ego slot

    slots = max(counts)
    spacing = config.road_length / slots
    # Jitter is +/-0.1 spacing, so in-lane gaps stay >= 0.8 spacing and
    # adjacent-lane offsets stay >= 0.3 spacing.
    if 0.3 * spacing <= config.vehicle_length:
        raise PlacementError(
            f"cannot place {slots} vehicles per lane on a "
            f"{config.road_length} m road without overlap"
        )

    xs = np.empty(n)
    ys = np.empty(n)
    spd = np.empty(n)
    ids = np.empty(n, dtype=np.int64)
    lane_of = np.empty(n, dtype=np.int64)

    ego_index = -1
    slot = 0
    next_env_id = 1
    for lane in range(config.lane_count):
        k = counts[lane]
        if k == 0:
            continue
        # Underfull lanes leave seeded holes in the grid.
        occupied = np.sort(rng.choice(slots, size=k, replace=False))
        jitter = rng.uniform(-0.1, 0.1, size=k) * spacing
        phase = 0.5 * spacing if lane % 2 else 0.0
        pos = (occupied + 0.25) * spacing + phase + jitter
        ego_slot = slots // 2 if lane == ego_lane else -1
        for j in range(k):
            xs[slot] = pos[j]
            ys[slot] = config.lane_center(lane)
            lane_of[slot] = lane
            if occupied[j] == ego_slot:
                ids[slot] = 0
                ego_index = slot
            else:
                ids[slot] = next_env_id
                next_env_id += 1
            slot += 1

    # The ego's lane mixes the two top cruise speeds, so the policy trains
    # against slower leaders from step one.  Flank lanes flow uniformly just
    # below the top speed: relative to the ego everything there drifts past,
    # so nobody lingers alongside.
    draws = rng.choice(speed_set[-2:], size=n)
    brisk = speed_set[-2] if len(speed_set) > 1 else speed_set[-1]
    spd[:] = np.where(lane_of == ego_lane, draws, brisk)
    spd[ego_index] = speed_set[-1]

    state = SimState(
        config=config,
        t=0,
        ids=ids,
        x=xs,
        y=ys,
        speed=spd,
        target_speed=spd.copy(),
        target_lane=lane_of,
        ego_index=ego_index,
    )
    if detect_collisions(state):
        raise PlacementError("initial layout produced overlapping vehicles")
    return state


def is_terminal(state: SimState) -> bool:
    return state.failure or state.invalid or state.t >= state.config.horizon_T


def nearest_env_vehicles(state: SimState, k: int) -> list[int]:
    """Ids of up to k non-ego vehicles, nearest first; ties go to the lower id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dx = state.x - state.x[state.ego_index]
    dy = state.y - state.y[state.ego_index]
    dist = np.hypot(dx, dy)
    order = sorted(
        (i for i in range(state.n) if i != state.ego_index),
        key=lambda i: (dist[i], state.ids[i]),
    )
    return [int(state.ids[i]) for i in order[:k]]


def observe_ego(state: SimState) -> np.ndarray:
    """Ego-relative, normalized 5x4 observation of the nearest vehicles.

    Row layout: (dx, dy, dvx, dvy) each clamped to [-1, 1]; rows sorted by
    distance, zero-padded when fewer than five neighbors exist.
    """
    cfg = state.config
    obs = np.zeros((OBS_VEHICLES, 4))
    e = state.ego_index
    dx = state.x - state.x[e]
    dy = state.y - state.y[e]
    vy = state.lateral_velocity()
    dvx = state.speed - state.speed[e]
    dvy = vy - vy[e]
    dist = np.hypot(dx, dy)
    order = sorted(
        (i for i in range(state.n) if i != e),
        key=lambda i: (dist[i], state.ids[i]),
    )
    for row, i in enumerate(order[:OBS_VEHICLES]):
        obs[row, 0] = dx[i] / cfg.obs_scale_x
        obs[row, 1] = dy[i] / cfg.obs_scale_y
        obs[row, 2] = dvx[i] / cfg.obs_scale_vx
        obs[row, 3] = dvy[i] / cfg.obs_scale_vy
    np.clip(obs, -1.0, 1.0, out=obs)
    return obs


def detect_collisions(state: SimState) -> list[tuple[int, int]]:
    """All unordered id pairs whose rectangles overlap with positive area."""
    return _collision_pairs(
        state.x, state.y, state.ids, state.config.vehicle_length, state.config.vehicle_width
    )


def _collision_pairs(x, y, ids, length, width) -> list[tuple[int, int]]:
    n = len(x)
    if n < 2:
        return []
    close_x = np.abs(x[:, None] - x[None, :]) < length
    close_y = np.abs(y[:, None] - y[None, :]) < width
    hit = np.triu(close_x & close_y, k=1)
    ii, jj = np.nonzero(hit)
    pairs = [
        (int(min(ids[i], ids[j])), int(max(ids[i], ids[j])))
        for i, j in zip(ii, jj)
    ]
    return sorted(pairs)


def lead_vehicle(state: SimState) -> Optional[int]:
    """Index of the nearest same-lane vehicle strictly ahead of the ego."""
    lanes = state.lanes()
    e = state.ego_index
    best = None
    best_dx = None
    for i in range(state.n):
        if i == e or lanes[i] != lanes[e]:
            continue
        dx = state.x[i] - state.x[e]
        if dx <= 0:
            continue
        if best_dx is None or dx < best_dx:
            best_dx = dx
            best = i
    return best


def lead_gap(state: SimState) -> Optional[float]:
    """Bumper-to-bumper gap to the nearest same-lane vehicle ahead of the ego."""
    i = lead_vehicle(state)
    if i is None:
        return None
    dx = state.x[i] - state.x[state.ego_index]
    return float(dx - state.config.vehicle_length)


def _apply_action(action: int, idx: int, target_speed, target_lane, lanes, cfg: SimConfig) -> None:
    a = DiscreteAction(int(action))
    if a == DiscreteAction.FASTER:
        target_speed[idx] = min(target_speed[idx] + cfg.speed_increment, cfg.speed_max)
    elif a == DiscreteAction.SLOWER:
        target_speed[idx] = max(target_speed[idx] - cfg.speed_increment, cfg.speed_min)
    elif a == DiscreteAction.LANE_LEFT:
        want = max(int(target_lane[idx]) - 1, 0)
        target_lane[idx] = np.clip(want, lanes[idx] - 1, lanes[idx] + 1)
    elif a == DiscreteAction.LANE_RIGHT:
        want = min(int(target_lane[idx]) + 1, cfg.lane_count - 1)
        target_lane[idx] = np.clip(want, lanes[idx] - 1, lanes[idx] + 1)
    # IDLE leaves both targets untouched (an in-flight lane change continues).


def step(state: SimState, env_action: EnvAction, sut: PolicyHandle) -> tuple[SimState, bool]:
    """Advance one decision step; returns the new state and whether the ego failed.

    The ego action comes from `sut` applied to the current observation; the
    joint `env_action` is mapped onto the nearest environment vehicles in
    distance order.  Collisions are checked every sub-step and freeze the
    world at the moment of impact.
    """
    if is_terminal(state):
        raise ValueError("cannot step a terminal state")
    if len(env_action) != N_CONTROLLED:
        raise ValueError(f"env_action must have {N_CONTROLLED} entries, got {len(env_action)}")
    cfg = state.config

    ego_action = DiscreteAction(int(sut(observe_ego(state))))

    lanes = state.lanes()
    target_speed = state.target_speed.copy()
    target_lane = state.target_lane.copy()
    _apply_action(ego_action, state.ego_index, target_speed, target_lane, lanes, cfg)

    controlled = nearest_env_vehicles(state, N_CONTROLLED)
    id_to_idx = {int(state.ids[i]): i for i in range(state.n)}
    for slot, vid in enumerate(controlled):
        _apply_action(env_action[slot], id_to_idx[vid], target_speed, target_lane, lanes, cfg)

    x = state.x.copy()
    y = state.y.copy()
    speed = state.speed.copy()
    target_y = target_lane * cfg.lane_width

    dt = cfg.decision_dt / cfg.substeps_per_decision
    dv_max = LONGITUDINAL_ACCEL * dt
    dy_max = cfg.lateral_speed * dt

    failure = False
    invalid = False
    ego_id = state.ego_id
    for _ in range(cfg.substeps_per_decision):
        speed += np.clip(target_speed - speed, -dv_max, dv_max)
        x += speed * dt
        y += np.clip(target_y - y, -dy_max, dy_max)
        pairs = _collision_pairs(x, y, state.ids, cfg.vehicle_length, cfg.vehicle_width)
        if pairs:
            if any(ego_id in p for p in pairs):
                failure = True
            else:
                invalid = True
            break

    new_state = SimState(
        config=cfg,
        t=state.t + 1,
        ids=state.ids,
        x=x,
        y=y,
        speed=speed,
        target_speed=target_speed,
        target_lane=target_lane,
        ego_index=state.ego_index,
        failure=state.failure or failure,
        invalid=state.invalid or invalid,
        last_ego_action=ego_action,
    )
    return new_state, new_state.failure


def fixed_policy(action: DiscreteAction) -> PolicyHandle:
    """A policy handle that always returns the same action (tests, training)."""
    a = DiscreteAction(int(action))
    return lambda obs: a
