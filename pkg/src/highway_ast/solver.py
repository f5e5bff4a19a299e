"""Monte Carlo tree search over joint environment actions.

The search owns the environment disturbances: each tree edge is one joint
action for the commanded vehicles, rewards come from the configured search
reward, and returns are undiscounted sums to episode end.  Because the joint
action space is huge (5^8), nodes grow children lazily under progressive
widening.  The search commits one action per depth level (re-rooting with a
fresh tree), which keeps memory bounded over long horizons.

The core is generic over any problem exposing initial_state / step /
sample_action, so small toy MDPs can exercise it exhaustively; `search`
wraps it for the highway problem and materializes trajectory records.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .trajectory import HighwayProblem, TrajectoryRecord, run_episode, scripted_source


class SearchError(RuntimeError):
    """Search finished without a usable episode or failed an integrity check."""


@dataclass(frozen=True)
class MctsConfig:
    iterations_per_step: int = 200
    exploration_c: float = math.sqrt(2.0)
    pw_k: float = 4.0
    pw_alpha: float = 0.5
    max_depth: Optional[int] = None  # defaults to the episode horizon
    seed: int = 0
    top_k_trajectories: int = 10
    # Falsification mode: return as soon as any explored episode fails,
    # instead of spending the whole budget improving on it.
    stop_on_failure: bool = False

    def validate(self) -> None:
        if self.iterations_per_step < 1:
            raise ValueError("iterations_per_step must be >= 1")
        if not 0.0 < self.pw_alpha < 1.0:
            raise ValueError("pw_alpha must be in (0, 1)")
        if self.exploration_c < 0.0:
            raise ValueError("exploration_c must be >= 0")
        if self.pw_k <= 0.0:
            raise ValueError("pw_k must be > 0")
        if self.top_k_trajectories < 1:
            raise ValueError("top_k_trajectories must be >= 1")


class TreeNode:
    __slots__ = ("visits", "total_return", "children", "depth")

    def __init__(self, depth: int = 0):
        self.visits = 0
        self.total_return = 0.0
        self.children = {}  # action -> TreeNode, insertion-ordered
        self.depth = depth

    def mean_return(self) -> float:
        return self.total_return / self.visits


def uct_select(node: TreeNode, c: float):
    """UCB1 pick among existing children; unvisited first, ties by insertion."""
    if not node.children:
        raise ValueError("cannot select from a node with no children")
    for action, child in node.children.items():
        if child.visits == 0:
            return action
    log_parent = math.log(node.visits)
    best_action = None
    best_score = -math.inf
    for action, child in node.children.items():
        score = child.mean_return() + c * math.sqrt(log_parent / child.visits)
        if score > best_score:
            best_score = score
            best_action = action
    return best_action


def maybe_expand(node: TreeNode, rng: np.random.Generator,
                 sampler: Callable, pw_k: float, pw_alpha: float,
                 max_attempts: int = 64):
    """Add one new child if progressive widening allows; else None.

    The child limit is max(1, pw_k * N^pw_alpha), so an unvisited node always
    expands.  Sampling is with rejection against existing children; after
    max_attempts collisions (action space effectively saturated) no child is
    added this visit.
    """
    cap = max(1.0, pw_k * node.visits**pw_alpha)
    if len(node.children) >= cap:
        return None
    for _ in range(max_attempts):
        action = sampler(rng)
        if action not in node.children:
            node.children[action] = TreeNode(node.depth + 1)
            return action
    return None


@dataclass(frozen=True)
class EpisodeStat:
    """Lean log entry for one complete episode seen during search."""

    actions: tuple
    ret: float
    failed: bool


@dataclass
class MctsResult:
    best_actions: tuple
    best_return: float
    best_failed: bool
    committed_actions: tuple
    episodes: list
    iterations_used: int


def _is_failure(problem, state) -> bool:
    checker = getattr(problem, "is_failure", None)
    if checker is not None:
        return bool(checker(state))
    return bool(getattr(state, "failure", False))


def mcts_search(problem, cfg: MctsConfig) -> MctsResult:
    """Level-committing MCTS over any (initial_state, step, sample_action) problem.

    Backpropagated values are full-episode returns (committed prefix
    included), which shifts all siblings equally and leaves UCT ordering
    untouched while keeping node statistics equal to real episode returns.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    state = problem.initial_state()
    committed = []
    prefix_return = 0.0
    episodes = []
    iterations_used = 0
    terminal = False
    depth = 0

    while not terminal and (cfg.max_depth is None or depth < cfg.max_depth):
        root = TreeNode(depth)
        for _ in range(cfg.iterations_per_step):
            iterations_used += 1
            node = root
            sim_state = state
            ret = prefix_return
            actions = list(committed)
            path = [root]
            done = False
            while not done:
                action = maybe_expand(node, rng, problem.sample_action,
                                      cfg.pw_k, cfg.pw_alpha)
                if action is None and node.children:
                    action = uct_select(node, cfg.exploration_c)
                    descend = True
                elif action is None:
                    # saturated leaf with no children cannot occur: widening
                    # always allows the first child
                    raise SearchError("expansion failed on an empty node")
                else:
                    descend = False
                sim_state, reward, done = problem.step(sim_state, action)
                ret += reward
                actions.append(action)
                child = node.children[action]
                path.append(child)
                node = child
                if not descend:
                    break
            while not done:
                action = problem.sample_action(rng)
                sim_state, reward, done = problem.step(sim_state, action)
                ret += reward
                actions.append(action)
            failed = _is_failure(problem, sim_state)
            episodes.append(EpisodeStat(tuple(actions), ret, failed))
            for visited in path:
                visited.visits += 1
                visited.total_return += ret
            if failed and cfg.stop_on_failure:
                terminal = True
                break
        if terminal:
            break
        # Commit the root action with the best mean return (ties: first added).
        best_action = None
        best_mean = -math.inf
        for action, child in root.children.items():
            if child.visits > 0 and child.mean_return() > best_mean:
                best_mean = child.mean_return()
                best_action = action
        if best_action is None:
            raise SearchError("no root action was ever visited")
        state, reward, terminal = problem.step(state, best_action)
        prefix_return += reward
        committed.append(best_action)
        depth += 1

    if not episodes:
        raise SearchError("search finished with zero complete episodes")
    best = max(episodes, key=lambda e: e.ret)
    return MctsResult(
        best_actions=best.actions,
        best_return=best.ret,
        best_failed=best.failed,
        committed_actions=tuple(committed),
        episodes=episodes,
        iterations_used=iterations_used,
    )


@dataclass
class SearchResult:
    best_trajectory: TrajectoryRecord
    best_return: float
    failure_found: bool
    top_trajectories: list
    iterations_used: int
    episodes_seen: int
    sim_steps: int


def top_episodes(episodes, k: int) -> list:
    """Highest-return episodes, deduplicated by action sequence."""
    ranked = sorted(episodes, key=lambda e: -e.ret)
    seen = set()
    out = []
    for ep in ranked:
        if ep.actions in seen:
            continue
        seen.add(ep.actions)
        out.append(ep)
        if len(out) >= k:
            break
    return out


def search(problem: HighwayProblem, cfg: MctsConfig, rss_params=None) -> SearchResult:
    """Run MCTS on a highway problem and materialize the best trajectories."""
    if cfg.max_depth is None:
        cfg = dataclasses.replace(cfg, max_depth=problem.sim_cfg.horizon_T)
    steps_before = getattr(problem, "steps_taken", 0)
    result = mcts_search(problem, cfg)

    records = []
    for ep in top_episodes(result.episodes, cfg.top_k_trajectories):
        record = run_episode(problem, scripted_source(list(ep.actions)), rss_params)
        if record.total_reward != ep.ret:
            raise SearchError(
                f"replayed return {record.total_reward} does not match "
                f"searched return {ep.ret}; determinism is broken"
            )
        records.append(record)
    best_record = records[0]
    return SearchResult(
        best_trajectory=best_record,
        best_return=result.best_return,
        failure_found=best_record.failed,
        top_trajectories=records,
        iterations_used=result.iterations_used,
        episodes_seen=len(result.episodes),
        sim_steps=getattr(problem, "steps_taken", 0) - steps_before,
    )
