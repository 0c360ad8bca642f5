from .checkpoint import load_params, restore_into, save_params
from .gradcheck import GradCheckReport, grad_check, numerical_gradient, relative_error
from .layers import (
    ACTIVATIONS, Conv2D, Dense, Layer, LocallyConnected2D, LSTMCell, ReLU, Tanh,
    glorot_uniform, lstm_last_state, lstm_last_state_backward, sigmoid,
)
from .losses import LOSSES, mse_loss, rle_loss
from .optim import Adam, adam_step

__all__ = [
    "ACTIVATIONS", "Adam", "Conv2D", "Dense", "GradCheckReport", "LOSSES", "LSTMCell", "Layer",
    "LocallyConnected2D", "ReLU", "Tanh", "adam_step", "glorot_uniform", "grad_check",
    "load_params", "lstm_last_state", "lstm_last_state_backward", "mse_loss",
    "numerical_gradient", "relative_error", "restore_into", "rle_loss", "save_params", "sigmoid",
]
