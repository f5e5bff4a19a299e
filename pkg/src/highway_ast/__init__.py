"""Adaptive stress testing toolkit for a discrete-action highway driving policy.

Components: a kinematic highway simulator hosting a trained Q-network policy,
three search rewards (longitudinal heuristic, Q-value spread, learned
critical-state classifier with dropout uncertainty), an MCTS failure search
over joint environment actions, a labeling/dataset pipeline, and an RSS
safety monitor for scoring found trajectories.
"""

from .classifier import (
    FEATURE_DIM,
    HcsNetwork,
    HcsTrainConfig,
    Prediction,
    featurize,
    load_model,
    predict,
    save_model,
)
from .config import ConfigError, ExperimentConfig, config_digest, load_config, save_config
from .dataset import (
    LabeledSample,
    OracleConfig,
    StateSample,
    balance,
    collect,
    import_samples,
    export_samples,
    oracle_label,
)
from .mlp import Adam, Mlp, TrainingError, WeightFormatError
from .rewards import RewardConfig, StepContext, h, r_hcs, r_heur, r_qcs, reward_fn
from .rss import (
    RssParams,
    RssVerdict,
    TrajectoryRssSummary,
    evaluate_state,
    safe_lateral_distance,
    safe_longitudinal_distance,
    summarize,
)
from .sim import (
    DiscreteAction,
    EnvAction,
    PlacementError,
    SimConfig,
    SimState,
    VehicleState,
    detect_collisions,
    init,
    is_terminal,
    lead_gap,
    nearest_env_vehicles,
    observe_ego,
    step,
)
from .solver import MctsConfig, SearchError, SearchResult, mcts_search, search
from .sut import (
    DqnConfig,
    QNetwork,
    act_greedy,
    is_qcs_critical,
    load_weights,
    q_values,
    qcs_score,
    save_weights,
    train_dqn,
)
from .trajectory import (
    HighwayProblem,
    StepRecord,
    TrajectoryRecord,
    load_trajectory,
    replay_matches,
    replay_trajectory,
    run_episode,
    save_trajectory,
)

__version__ = "0.1.0"
