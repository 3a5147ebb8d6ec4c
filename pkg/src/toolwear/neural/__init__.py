"""From-scratch stacked LSTM regressor: model, BPTT, Adam, training, gradient check."""

from .adam import Adam, AdamState, adam_step
from .gradcheck import GradCheckReport, gradient_check
from .model import (
    Hyperparameters,
    LstmModel,
    backward,
    forward,
    forward_batch,
    init_model,
    load_model,
    loss,
    mae,
    predict,
    save_model,
)
from .train import TrainReport, Trainer, train

__all__ = [
    "Adam", "AdamState", "adam_step", "GradCheckReport", "gradient_check", "Hyperparameters",
    "LstmModel", "backward", "forward", "forward_batch", "init_model", "load_model", "loss",
    "mae", "predict", "save_model", "TrainReport", "Trainer", "train",
]
