from .loss import (
    LossBreakdown,
    LossConfig,
    Minibatch,
    entropy_penalty,
    kl_loss,
    reconstruction_loss,
    regression_loss,
    total_loss,
)

__all__ = [
    "LossBreakdown",
    "LossConfig",
    "Minibatch",
    "entropy_penalty",
    "kl_loss",
    "reconstruction_loss",
    "regression_loss",
    "total_loss",
]
