"""Tabular event-based control: exact query inference, policy gradients and VICE."""

from .inference import (
    ForwardTrace,
    MessageTable,
    PolicyTable,
    backward,
    backward_all,
    backward_any,
    backward_at,
    forward_any,
    non_seeking_action_dist,
    policy_from_messages,
)
from .mdp import (
    ALL,
    ANY,
    GridWorldSpec,
    Query,
    TabularMDP,
    apply_discount_transform,
    at,
    build_gold_miner,
    default_distractor_spec,
    default_gold_miner_spec,
    validate,
)
from .policy_opt import SoftmaxPolicyParams, TrainConfig, TrajectoryBatch, sample_trajectories, train_policy
from .vice import EventModel, SuccessDataset, VICEConfig, collect_success_examples, vice_train

__all__ = [
    "ALL",
    "ANY",
    "EventModel",
    "ForwardTrace",
    "GridWorldSpec",
    "MessageTable",
    "PolicyTable",
    "Query",
    "SoftmaxPolicyParams",
    "SuccessDataset",
    "TabularMDP",
    "TrainConfig",
    "TrajectoryBatch",
    "VICEConfig",
    "apply_discount_transform",
    "at",
    "backward",
    "backward_all",
    "backward_any",
    "backward_at",
    "build_gold_miner",
    "collect_success_examples",
    "default_distractor_spec",
    "default_gold_miner_spec",
    "forward_any",
    "non_seeking_action_dist",
    "policy_from_messages",
    "sample_trajectories",
    "train_policy",
    "validate",
    "vice_train",
]
