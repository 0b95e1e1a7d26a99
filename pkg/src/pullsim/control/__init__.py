"""Closed-loop control: environment, policies, online inference and episodes."""

from .baselines import HeuristicPolicy, PdConfig, PdPolicy, pd_act
from .env import CostScales, EnvConfig, Environment, mpc_cost, reward
from .episode import EpisodeLog, run_episode
from .inference import InferenceConfig, ParamEstimator, infer_params
from .mpc import IlqrPlanner, MpcConfig, MpcPolicy, mpc_plan
from .replay import ReplayBuffer
from .sac import SacConfig, SacPolicy, sac_update, soft_update

__all__ = [
    "HeuristicPolicy", "PdConfig", "PdPolicy", "pd_act", "CostScales", "EnvConfig",
    "Environment", "mpc_cost", "reward", "EpisodeLog", "run_episode", "InferenceConfig",
    "ParamEstimator", "infer_params", "IlqrPlanner", "MpcConfig", "MpcPolicy", "mpc_plan",
    "ReplayBuffer", "SacConfig", "SacPolicy", "sac_update", "soft_update",
]
