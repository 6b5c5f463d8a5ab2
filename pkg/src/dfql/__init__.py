"""Offline fitted Q-learning with differentiable function classes."""

from .algos import LearnedStack, default_beta, pfql, rebonus, vafql, vfql
from .instances import built_in_instances, instance_names
from .mdp import (EpisodicMDP, OfflineDataset, PolicyStack, ValueStack, exact_value,
                  monte_carlo_value, occupancy, optimal, rollout)
from .models import GLMModel, LinearModel, MLPModel, build_model, one_hot_features, random_features
from .regress import OptimizerConfig, fit

__all__ = [
    "EpisodicMDP", "GLMModel", "LearnedStack", "LinearModel", "MLPModel", "OfflineDataset",
    "OptimizerConfig", "PolicyStack", "ValueStack", "build_model", "built_in_instances",
    "default_beta", "exact_value", "fit", "instance_names", "monte_carlo_value", "occupancy",
    "one_hot_features", "optimal", "pfql", "random_features", "rebonus", "rollout", "vafql", "vfql",
]
