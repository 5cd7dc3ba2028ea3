from .adam import Adam, OptimizerState, adam_step, adam_update
from .augment import AugmentConfig, affine_matrix, apply_affine, augment
from .losses import positional_loss, probabilistic_loss, total_loss, visibility_mask
from .loop import TrainConfig, ensemble_target, read_history, train, write_history

__all__ = [
    "Adam", "OptimizerState", "adam_step", "adam_update",
    "AugmentConfig", "affine_matrix", "apply_affine", "augment",
    "positional_loss", "probabilistic_loss", "total_loss", "visibility_mask",
    "TrainConfig", "ensemble_target", "read_history", "train", "write_history",
]
