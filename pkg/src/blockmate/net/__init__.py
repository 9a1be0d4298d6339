from .encode import ROLE_ASSISTANT, ROLE_BUILDER, encode_batch, encode_observation, obs_channels
from .model import (FourHeadNet, NetConfig, NetOutput, make_model,
                    masked_log_softmax, net_forward, net_forward_sequence)
from .losses import LossWeights, TrainBatch, compute_loss, forward_train, loss_and_grads, loss_terms
from .optim import AdamState, TrainingError, adam_step, clip_grads, global_grad_norm
from .checkpoint import (Checkpoint, CheckpointError, checkpoint_from_model,
                         load_checkpoint, save_checkpoint)

__all__ = [
    "ROLE_ASSISTANT", "ROLE_BUILDER", "encode_batch", "encode_observation",
    "obs_channels", "FourHeadNet", "NetConfig", "NetOutput", "make_model",
    "masked_log_softmax", "net_forward", "net_forward_sequence", "LossWeights",
    "TrainBatch", "compute_loss", "forward_train", "loss_and_grads",
    "loss_terms", "AdamState", "TrainingError", "adam_step", "clip_grads",
    "global_grad_norm", "Checkpoint", "CheckpointError",
    "checkpoint_from_model", "load_checkpoint", "save_checkpoint",
]
