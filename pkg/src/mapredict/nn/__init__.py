"""Small float64 neural-network substrate with hand-written backward passes."""
from .gradcheck import gradient_check
from .layers import (
    bilstm_backward,
    bilstm_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_sequence_backward,
    lstm_sequence_forward,
    mha_backward,
    mha_forward,
    softmax,
)
from .params import ParamStore, adam_step, load_weights, save_weights

__all__ = [
    "ParamStore",
    "adam_step",
    "bilstm_backward",
    "bilstm_forward",
    "dense_backward",
    "dense_forward",
    "dropout_backward",
    "dropout_forward",
    "gradient_check",
    "load_weights",
    "lstm_cell_backward",
    "lstm_cell_forward",
    "lstm_sequence_backward",
    "lstm_sequence_forward",
    "mha_backward",
    "mha_forward",
    "save_weights",
    "softmax",
]
