from .gradcheck import check_gradients, numerical_gradient, relative_error
from .layers import (
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    dropout,
    dropout_backward,
    embedding_backward,
    embedding_forward,
    glu_backward,
    glu_forward,
    linear_backward,
    linear_forward,
    log_softmax,
    lstm_step,
    lstm_step_backward,
    lstmp_backward,
    lstmp_forward,
    rnn_backward,
    rnn_forward,
    sigmoid,
    softmax,
    swish_backward,
    swish_forward,
)
from .params import Adam, Checkpoint, NonFiniteGradientError, ParameterSet, adam_step

__all__ = [
    "Adam", "Checkpoint", "NonFiniteGradientError", "ParameterSet", "ShapeError",
    "adam_step", "batchnorm_backward", "batchnorm_forward", "check_gradients",
    "conv1d_backward", "conv1d_forward", "cross_entropy", "dropout", "dropout_backward",
    "embedding_backward", "embedding_forward", "glu_backward", "glu_forward",
    "linear_backward", "linear_forward", "log_softmax", "lstm_step", "lstm_step_backward",
    "lstmp_backward", "lstmp_forward", "numerical_gradient", "relative_error",
    "rnn_backward", "rnn_forward", "sigmoid", "softmax", "swish_backward", "swish_forward",
]
