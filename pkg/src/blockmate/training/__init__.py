from .bc import (BcHyper, build_dataset, clone_actions, pretrain_assistant,
                 sft_assistant, train_builder_clone)
from .az import TrainerConfig, train_assistant, train_solo_builder
from .ppo import (PpoConfig, clipped_surrogate, compute_gae, step_reward,
                  train_ppo_assistant)

__all__ = [
    "BcHyper", "build_dataset", "clone_actions", "pretrain_assistant",
    "sft_assistant", "train_builder_clone", "TrainerConfig", "train_assistant",
    "train_solo_builder", "PpoConfig", "clipped_surrogate", "compute_gae",
    "step_reward", "train_ppo_assistant",
]
