from .algo import (AdamState, PpoHyper, Trajectory, TrainingDiverged, TrainResult, adam_step,
                   compute_advantages, entropy, greedy_action, greedy_policy_action, ppo_loss,
                   sample_action, train)
from .net import Architecture, forward, init_params

__all__ = [
    "AdamState", "Architecture", "PpoHyper", "Trajectory", "TrainingDiverged", "TrainResult",
    "adam_step", "compute_advantages", "entropy", "forward", "greedy_action",
    "greedy_policy_action", "init_params", "ppo_loss", "sample_action", "train",
]
