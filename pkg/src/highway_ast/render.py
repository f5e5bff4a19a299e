"""Plain-text rendering of world snapshots and trajectories.

Each frame is a fixed-width lane diagram (ego marked E, environment vehicles
by id modulo 10) plus a kinematic table, with optional per-step flags for
RSS-dangerous and oracle-critical states.
"""

from __future__ import annotations

from typing import Optional

from . import rss, sim

DIAGRAM_WIDTH = 72


def render_state(state: sim.SimState, width: int = DIAGRAM_WIDTH) -> str:
    """Fixed-width lane diagram plus a per-vehicle kinematic table."""
    cfg = state.config
    lanes = state.lanes()
    x_min = float(state.x.min())
    x_max = float(state.x.max())
    span = max(x_max - x_min, 1.0)

    rows = []
    for lane in range(cfg.lane_count - 1, -1, -1):
        track = ["."] * width
        for i in range(state.n):
            if lanes[i] != lane:
                continue
            col = int((state.x[i] - x_min) / span * (width - 1))
            glyph = "E" if i == state.ego_index else str(int(state.ids[i]) % 10)
            track[col] = glyph
        rows.append(f"lane {lane} |{''.join(track)}|")

    header = f"{'id':>4} {'lane':>4} {'x':>8} {'y':>6} {'speed':>6} {'tgt_v':>6} {'tgt_lane':>8}"
    table = [header]
    order = sorted(range(state.n), key=lambda i: int(state.ids[i]))
    for i in order:
        tag = "E" if i == state.ego_index else " "
        table.append(
            f"{int(state.ids[i]):>3}{tag} {int(lanes[i]):>4} {state.x[i]:>8.2f} "
            f"{state.y[i]:>6.2f} {state.speed[i]:>6.2f} {state.target_speed[i]:>6.2f} "
            f"{int(state.target_lane[i]):>8}"
        )
    return "\n".join(rows + table)


def render_trajectory(record, rss_params: Optional[rss.RssParams] = None,
                      oracle=None, width: int = DIAGRAM_WIDTH) -> str:
    """One frame per step with action, reward, and safety flags.

    `oracle` is an optional callable mapping a step record to 0/1 (critical);
    RSS flags are recomputed with rss_params so they agree with summaries
    computed at the same parameters.
    """
    params = rss_params if rss_params is not None else rss.RssParams()
    action_names = {int(a): a.name for a in sim.DiscreteAction}
    frames = [
        f"trajectory seed={record.seed} reward={record.reward_kind} "
        f"outcome={record.outcome} steps={len(record.steps)}"
    ]
    for step in record.steps:
        verdict = rss.evaluate_state(step.state, step.ego_action, params)
        flags = []
        if verdict.dangerous:
            flags.append("RSS-DANGEROUS")
        if verdict.improper_response:
            flags.append("RSS-IMPROPER")
        if oracle is not None and oracle(step):
            flags.append("ORACLE-CRITICAL")
        env = ",".join(action_names[a][:2] for a in step.env_action)
        frames.append(
            f"-- step {step.t} ego={action_names[int(step.ego_action)]} "
            f"env=[{env}] reward={step.reward:.6f}"
            + (" " + " ".join(flags) if flags else "")
        )
        frames.append(render_state(step.state, width))
    return "\n".join(frames) + "\n"
