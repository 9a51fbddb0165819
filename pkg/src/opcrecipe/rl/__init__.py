"""PPO search over control-point placements (stage 1)."""

from .nets import Adam, Mlp, PolicyNet, ValueNet, policy_eval_count, reset_policy_eval_count
from .env import OpcPointEnv, PpoConfig, encode_states
from .ppo import (
    PolicyCheckpoint,
    discounted_returns,
    extract_movements,
    gae,
    ppo_losses,
    train,
)

__all__ = [
    "Adam", "Mlp", "PolicyNet", "ValueNet", "policy_eval_count",
    "reset_policy_eval_count", "OpcPointEnv", "PpoConfig", "encode_states",
    "PolicyCheckpoint", "discounted_returns", "extract_movements", "gae",
    "ppo_losses", "train",
]
